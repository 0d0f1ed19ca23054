//! Steady-state reflectivity under weak continuous-wave driving of the V mode.
//!
//! The laser is scanned by moving the rotating frame: at laser detuning Δ
//! (relative to the pump reference of [`SystemParams`]) all four detunings
//! are lowered by Δ and the steady state of the constant-drive master
//! equation is computed. The reflected amplitude is
//!
//! ```text
//! r = 1 + κ_1d ⟨a_V⟩ / (i Ω)
//! ```
//!
//! which for an empty cavity reduces to `r = 1 − κ_1d / (i δ + κ_tot/2)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{liouvillian_matrix, DensityMatrix, LindbladModel};
use crate::error::{invalid, Error, Result};
use crate::kernel::Fields;
use crate::model::{to_rate, SystemParams};
use crate::ode::{integrate, Tolerances};
use crate::operators::{mode_lowering, trace_of_product, Polarization};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Default probe strength ħΩ (μeV).
pub const DEFAULT_PROBE: f64 = 0.1;

/// Relative change of R under Ω → 2Ω above which the probe counts as nonlinear.
pub const NONLINEAR_THRESHOLD: f64 = 1e-3;

/// Truncation (n_max_v, n_max_h) sufficient for the default probe: a
/// single-photon V mode would saturate at order |⟨a_V⟩|².
pub const CW_TRUNCATION: (usize, usize) = (2, 1);

/// Relative pivot size below which the steady-state system counts as singular.
const PIVOT_TOL: f64 = 1e-12;

fn check_probe(probe: f64) -> Result<()> {
    if !(probe > 0.0 && probe.is_finite()) {
        return Err(invalid("probe", "ħΩ must be positive and finite"));
    }
    Ok(())
}

/// Steady state from the null space of the vectorized generator.
///
/// `probe` is ħΩ in μeV; `laser_detuning` is in μeV.
pub fn steady_state(params: &SystemParams, probe: f64, laser_detuning: f64) -> Result<DensityMatrix> {
    params.validate()?;
    let p = params.shifted(laser_detuning);
    let space = p.space();
    let d = space.total_dim();
    let l = liouvillian_matrix(&p, C64::from(to_rate(probe)))?;
    let n = d * d;

    // Tr ρ = 1 replaces the (0,0) equation, which is dependent on the others.
    // The bordered matrix is singular exactly when the null space of L has
    // more than one dimension; full pivoting exposes that as tiny pivots.
    let mut m = l;
    for c in 0..n {
        m[(0, c)] = ZERO;
    }
    for i in 0..d {
        m[(0, i * d + i)] = C64::new(1.0, 0.0);
    }
    let lu = m.full_piv_lu();
    let pivots: Vec<f64> = lu.u().diagonal().iter().map(|z| z.norm()).collect();
    let top = pivots.iter().cloned().fold(0.0, f64::max);
    let tiny = pivots.iter().filter(|&&p| p <= PIVOT_TOL * top).count();
    if tiny > 0 {
        return Err(Error::AmbiguousSteadyState(tiny + 1));
    }
    let mut b = DVector::from_element(n, ZERO);
    b[0] = C64::new(1.0, 0.0);
    let x = lu
        .solve(&b)
        .ok_or_else(|| Error::Singular("steady-state system has no unique solution".into()))?;
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Singular("non-finite steady state".into()));
    }
    let mut rho = DensityMatrix::from_flat(space, x.as_slice());
    rho.hermitize();
    Ok(rho)
}

/// Steady state reached by integrating from |G,0,0⟩ until the state stops
/// changing. Used as an independent check of [`steady_state`].
///
/// Every state other than the ground state decays at least at min(γ, κ_tot),
/// so the state is compared across chunks of five such decay times. The run
/// stops once the change per chunk is below 1e-15, or has stopped shrinking
/// while below 1e-6: that is the integrator's noise floor for `tol`.
pub fn steady_state_by_integration(
    params: &SystemParams,
    probe: f64,
    laser_detuning: f64,
    tol: &Tolerances,
) -> Result<DensityMatrix> {
    check_probe(probe)?;
    let p = params.shifted(laser_detuning);
    let model = LindbladModel::new(p)?;
    let space = model.space;
    let fields = Fields {
        cavity: C64::from(to_rate(probe)),
        exciton: ZERO,
    };
    let slowest = to_rate(p.gamma.min(p.kappa_tot));
    let chunk = if slowest > 0.0 { (5.0 / slowest).max(2000.0) } else { 2000.0 };
    let mut y = DensityMatrix::ground(space).to_flat();
    let mut t = 0.0;
    let mut last_change = f64::INFINITY;
    while t < 1e6 {
        let mut next = Vec::new();
        integrate(
            |_, y, dy| model.apply(y, fields, dy),
            &[t, t + chunk],
            y.clone(),
            tol,
            |i, _, y| {
                if i == 1 {
                    next = y.to_vec();
                }
            },
        )?;
        let change = y
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        y = next;
        t += chunk;
        let at_floor = change < 1e-6 && change > 0.5 * last_change;
        last_change = change;
        if change < 1e-15 || at_floor {
            let mut rho = DensityMatrix::from_flat(space, &y);
            rho.hermitize();
            return Ok(rho);
        }
    }
    Err(Error::Integration {
        t_last: t,
        reason: "no stationary state within 1e6 ps".into(),
    })
}

/// ‖L vec(ρ)‖_max for the shifted constant-drive generator.
pub fn stationarity_residual(
    params: &SystemParams,
    probe: f64,
    laser_detuning: f64,
    rho: &DensityMatrix,
) -> Result<f64> {
    let p = params.shifted(laser_detuning);
    let model = LindbladModel::new(p)?;
    let d = model.space.total_dim();
    if rho.space != model.space {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: rho.space.total_dim(),
        });
    }
    let mut out = vec![ZERO; d * d];
    let fields = Fields {
        cavity: C64::from(to_rate(probe)),
        exciton: ZERO,
    };
    model.apply(&rho.to_flat(), fields, &mut out);
    Ok(out.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// R = |1 + κ_1d ⟨a_V⟩ / (iΩ)|² for a stationary state under probe ħΩ.
pub fn reflectivity_of_state(params: &SystemParams, probe: f64, rho: &DensityMatrix) -> Result<f64> {
    check_probe(probe)?;
    let a = mode_lowering(rho.space, Polarization::V).matrix;
    let field = trace_of_product(&a, &rho.matrix);
    let r = C64::new(1.0, 0.0) + field * to_rate(params.kappa_1d()) / (I * to_rate(probe));
    Ok(r.norm_sqr())
}

fn reflectivity_at(params: &SystemParams, laser_detuning: f64, probe: f64) -> Result<f64> {
    let rho = steady_state(params, probe, laser_detuning)?;
    reflectivity_of_state(params, probe, &rho)
}

/// Steady-state reflectivity at one laser detuning (μeV).
///
/// The probe is repeated at 2Ω; a relative change above
/// [`NONLINEAR_THRESHOLD`] is logged as a warning.
pub fn reflectivity(params: &SystemParams, laser_detuning: f64, probe: f64) -> Result<f64> {
    check_probe(probe)?;
    let r = reflectivity_at(params, laser_detuning, probe)?;
    let r2 = reflectivity_at(params, laser_detuning, 2.0 * probe)?;
    if (r2 - r).abs() > NONLINEAR_THRESHOLD * r.abs().max(1e-12) {
        log::warn!(
            "probe ħΩ = {probe} μeV is not in the linear regime at detuning {laser_detuning} μeV \
             (R = {r:.6}, {r2:.6} at 2Ω)"
        );
    }
    Ok(r)
}

/// Reflectivity on a detuning grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReflectivityCurve {
    /// Laser detunings (μeV).
    pub detunings: Vec<f64>,
    pub reflectivity: Vec<f64>,
    /// Probe ħΩ (μeV).
    pub drive_amplitude: f64,
    pub params: SystemParams,
}

impl ReflectivityCurve {
    /// Writes `detuning_ueV, reflectivity`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["detuning_ueV", "reflectivity"])?;
        for (d, r) in self.detunings.iter().zip(&self.reflectivity) {
            w.write_record([d.to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `count` evenly spaced points from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count)
            .map(|i| {
                if i + 1 == count {
                    stop
                } else {
                    start + (stop - start) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

/// Grid points at which [`reflectivity_spectrum`] repeats the solve at 2Ω.
const LINEARITY_CHECKS: usize = 11;

/// Master-equation reflectivity over `detunings`, evaluated in parallel.
///
/// Linearity is checked at up to 11 evenly spread grid points rather than
/// at every point; see [`reflectivity`].
pub fn reflectivity_spectrum(
    params: &SystemParams,
    detunings: &[f64],
    probe: f64,
) -> Result<ReflectivityCurve> {
    check_probe(probe)?;
    if detunings.iter().any(|d| !d.is_finite()) {
        return Err(invalid("detunings", "must be finite"));
    }
    let n = detunings.len();
    let stride = n.div_ceil(LINEARITY_CHECKS).max(1);
    let reflectivity = detunings
        .par_iter()
        .enumerate()
        .map(|(i, &d)| {
            if i % stride == 0 {
                reflectivity(params, d, probe)
            } else {
                reflectivity_at(params, d, probe)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReflectivityCurve {
        detunings: detunings.to_vec(),
        reflectivity,
        drive_amplitude: probe,
        params: *params,
    })
}

/// Closed-form empty-cavity amplitude r = 1 − κ_1d / (i δ + κ_tot/2), with
/// δ the V-mode detuning from the laser.
pub fn empty_cavity_amplitude(params: &SystemParams, laser_detuning: f64) -> C64 {
    let delta = to_rate(params.delta_v - laser_detuning);
    let k = to_rate(params.kappa_tot);
    C64::new(1.0, 0.0) - to_rate(params.kappa_1d()) / C64::new(k / 2.0, delta)
}

/// Reflected amplitude in the single-excitation limit.
///
/// Solves the stationary linear equations for ⟨a_V⟩, ⟨a_H⟩, ⟨σ_V⟩, ⟨σ_H⟩:
///
/// ```text
/// 0 = −(iδ_V + κ/2) a_V − i g σ_V − iΩ
/// 0 = −(iδ_H + κ/2) a_H − i g σ_H
/// 0 = −(iδ_V^at + γ/2) σ_V − i g a_V − i c σ_H
/// 0 = −(iδ_H^at + γ/2) σ_H − i g a_H − i c σ_V
/// ```
///
/// with c = Δ_FSS cosθ sinθ and all energies divided by ħ.
pub fn linear_response_amplitude(params: &SystemParams, laser_detuning: f64) -> Result<C64> {
    let p = params.shifted(laser_detuning);
    let k = to_rate(p.kappa_tot) / 2.0;
    let gm = to_rate(p.gamma) / 2.0;
    let g = I * to_rate(p.g);
    let c = I * to_rate(p.vh_coupling());
    let cav = |delta: f64| -C64::new(k, to_rate(delta));
    let dot = |delta: f64| -C64::new(gm, to_rate(delta));
    #[rustfmt::skip]
    let m = Matrix4::new(
        cav(p.delta_v), ZERO,          -g,                  ZERO,
        ZERO,          cav(p.delta_h), ZERO,                -g,
        -g,            ZERO,           dot(p.delta_at_v()), -c,
        ZERO,          -g,             -c,                  dot(p.delta_at_h()),
    );
    // Ω = 1: the amplitude ratio is independent of the drive in this limit.
    let rhs = Vector4::new(I, ZERO, ZERO, ZERO);
    let x = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("linear-response system is singular".into()))?;
    Ok(C64::new(1.0, 0.0) + x[0] * to_rate(p.kappa_1d()) / I)
}

/// |r|² from [`linear_response_amplitude`].
pub fn linear_response_reflectivity(params: &SystemParams, laser_detuning: f64) -> Result<f64> {
    Ok(linear_response_amplitude(params, laser_detuning)?.norm_sqr())
}

/// Cooperativity C = g² / (κ_tot γ).
pub fn cooperativity(g: f64, kappa_tot: f64, gamma: f64) -> Result<f64> {
    if !(kappa_tot * gamma > 0.0) {
        return Err(invalid("kappa_tot·gamma", "must be positive"));
    }
    Ok(g * g / (kappa_tot * gamma))
}

/// Probability 2C/(2C+1) that an excited dot re-emits into the cavity mode.
pub fn emission_fraction(cooperativity: f64) -> f64 {
    if cooperativity.is_infinite() {
        return 1.0;
    }
    2.0 * cooperativity / (2.0 * cooperativity + 1.0)
}

/// Dense matrix of the Liouvillian used by [`steady_state`] (for inspection).
pub fn shifted_liouvillian(params: &SystemParams, probe: f64, laser_detuning: f64) -> Result<DMatrix<C64>> {
    liouvillian_matrix(&params.shifted(laser_detuning), C64::from(to_rate(probe)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small() -> SystemParams {
        SystemParams::default().with_truncation(CW_TRUNCATION.0, CW_TRUNCATION.1)
    }

    #[test]
    fn zero_coupling_matches_closed_form() {
        let p = SystemParams { g: 0.0, ..small() };
        for d in [-200.0, -35.0, 0.0, 12.5, 90.0] {
            let r = reflectivity(&p, d, DEFAULT_PROBE).unwrap();
            let want = empty_cavity_amplitude(&p, d).norm_sqr();
            assert!((r - want).abs() < 1e-7, "δ = {d}: {r} vs {want}");
        }
        assert_relative_eq!(empty_cavity_amplitude(&p, 0.0).norm_sqr(), 0.16, epsilon = 1e-12);
    }

    #[test]
    fn ground_state_without_drive() {
        // γ and κ make the undriven steady state unique.
        let rho = steady_state(&small(), 1e-300, 0.0).unwrap();
        let g = DensityMatrix::ground(small().space());
        assert!((rho.matrix - g.matrix).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn closed_system_is_ambiguous() {
        let p = SystemParams {
            gamma: 0.0,
            kappa_tot: 0.0,
            ..small()
        };
        assert!(matches!(
            steady_state(&p, DEFAULT_PROBE, 0.0),
            Err(Error::AmbiguousSteadyState(_))
        ));
    }

    #[test]
    fn stationary_and_normalized() {
        let p = small();
        for d in [-50.0, 0.0, 20.0] {
            let rho = steady_state(&p, DEFAULT_PROBE, d).unwrap();
            assert!((rho.trace().re - 1.0).abs() < 1e-12);
            assert!(stationarity_residual(&p, DEFAULT_PROBE, d, &rho).unwrap() < 1e-10);
        }
    }

    #[test]
    fn integration_reaches_the_null_space_state() {
        let p = small();
        for d in [-70.0, 0.0, 7.5] {
            let a = steady_state(&p, DEFAULT_PROBE, d).unwrap();
            let b = steady_state_by_integration(&p, DEFAULT_PROBE, d, &Tolerances::default()).unwrap();
            let ra = reflectivity_of_state(&p, DEFAULT_PROBE, &a).unwrap();
            let rb = reflectivity_of_state(&p, DEFAULT_PROBE, &b).unwrap();
            assert!((ra - rb).abs() < 1e-9, "{ra} vs {rb}");
        }
    }

    #[test]
    fn linear_response_tracks_master_equation() {
        let p = small();
        for d in [-150.0, -70.0, -10.0, 0.0, 5.0, 40.0] {
            let me = reflectivity_at(&p, d, 0.01).unwrap();
            let lr = linear_response_reflectivity(&p, d).unwrap();
            assert!((me - lr).abs() < 1e-4, "δ = {d}: {me} vs {lr}");
        }
    }

    #[test]
    fn figures_of_merit() {
        assert_relative_eq!(cooperativity(21.0, 120.0, 0.3).unwrap(), 12.25, epsilon = 1e-12);
        assert_eq!(cooperativity(0.0, 120.0, 0.3).unwrap(), 0.0);
        assert!(cooperativity(1.0, 0.0, 0.3).is_err());
        assert_relative_eq!(emission_fraction(13.0), 26.0 / 27.0);
        assert_eq!(emission_fraction(0.0), 0.0);
        assert_eq!(emission_fraction(f64::INFINITY), 1.0);
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(-300.0, 300.0, 101);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], -300.0);
        assert_eq!(g[50], 0.0);
        assert_eq!(g[100], 300.0);
        assert_eq!(linspace(1.0, 2.0, 1), vec![1.0]);
    }

    #[test]
    fn csv_header() {
        let curve = reflectivity_spectrum(&small(), &[0.0, 10.0], DEFAULT_PROBE).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("detuning_ueV,reflectivity\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
