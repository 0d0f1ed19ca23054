//! wasm-bindgen entry points for `www/index.html`.
//!
//! Every function returns a flat `Float64Array` of equally long columns; the
//! page slices it by the column count it asked for. Native builds can call the
//! same functions, which is how the tests below run.

use qdcav::dynamics::{evolve_coherent, EvolveOptions, Frame};
use qdcav::fock::{evolve_fock, Wavepacket};
use qdcav::model::{PulseShape, SystemParams};
use qdcav::spectra::{linear_response_reflectivity, linspace};
use wasm_bindgen::prelude::*;

// Fewer snapshots than the CLI; a canvas is a few hundred pixels wide.
const SNAPSHOTS: usize = 240;

fn err(e: qdcav::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn device(g: f64, kappa_tot: f64, gamma: f64, delta_fss: f64) -> SystemParams {
    SystemParams {
        g,
        kappa_tot,
        gamma,
        delta_fss,
        delta_x: -delta_fss / 2.0,
        delta_y: delta_fss / 2.0,
        ..SystemParams::default()
    }
}

/// Weak-probe reflectivity. Columns: detuning (μeV), R.
#[wasm_bindgen]
pub fn reflectivity(
    g: f64,
    kappa_tot: f64,
    gamma: f64,
    delta_fss: f64,
    span: f64,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    let p = device(g, kappa_tot, gamma, delta_fss);
    let det = linspace(-span, span, points.max(2));
    let mut r = Vec::with_capacity(det.len());
    for &d in &det {
        r.push(linear_response_reflectivity(&p, d).map_err(err)?);
    }
    Ok([det, r].concat())
}

/// Pulsed excitation. Columns: t (ps), ξ, P_V, P_H, ⟨n_H⟩.
#[wasm_bindgen]
pub fn pulse_dynamics(n_mean: f64, tau: f64, delta_fss: f64) -> Result<Vec<f64>, JsError> {
    let p = SystemParams {
        delta_x: -delta_fss / 2.0,
        delta_y: delta_fss / 2.0,
        delta_fss,
        n_max_v: 3,
        ..SystemParams::default()
    };
    let pulse = PulseShape::gaussian(tau);
    let opts = EvolveOptions {
        snapshots: SNAPSHOTS,
        frame: Frame::Displaced,
        ..EvolveOptions::default()
    };
    let traj = evolve_coherent(&p, &pulse, n_mean, &opts).map_err(err)?;
    Ok([
        traj.times.clone(),
        traj.pulse_samples.clone(),
        traj.population_v(),
        traj.population_h(),
        traj.photons_h(),
    ]
    .concat())
}

/// One photon against a coherent pulse with ⟨n⟩ = 1.
/// Columns: t (ps), ξ, P_exc (Fock), P_exc (coherent).
#[wasm_bindgen]
pub fn fock_vs_coherent(tau: f64, eta_out: f64) -> Result<Vec<f64>, JsError> {
    let p = SystemParams {
        eta_out,
        ..SystemParams::default()
    };
    let pulse = PulseShape::gaussian(tau);
    // The frame only affects the coherent run.
    let opts = EvolveOptions {
        snapshots: SNAPSHOTS,
        frame: Frame::Displaced,
        ..EvolveOptions::default()
    };
    let fock = evolve_fock(&p, &Wavepacket::new(pulse), &opts).map_err(err)?;
    let coh = evolve_coherent(&p, &pulse, 1.0, &opts).map_err(err)?;
    Ok([
        fock.times.clone(),
        fock.pulse_samples.clone(),
        fock.exciton_population(),
        coh.exciton_population(),
    ]
    .concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_have_equal_length() {
        let r = reflectivity(21.0, 120.0, 0.3, 15.0, 150.0, 51).unwrap();
        assert_eq!(r.len(), 102);
        assert!(r[51..].iter().all(|v| (0.0..=1.0 + 1e-9).contains(v)));

        let d = pulse_dynamics(2.0, 56.0, 15.0).unwrap();
        assert_eq!(d.len() % 5, 0);
        let f = fock_vs_coherent(56.0, 0.7).unwrap();
        assert_eq!(f.len() % 4, 0);
        let n = f.len() / 4;
        assert!(f[2 * n..3 * n].iter().cloned().fold(0.0, f64::max) > 0.3);
    }
}
