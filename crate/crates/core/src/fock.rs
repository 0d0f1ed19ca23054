//! Single-photon Fock-state input.
//!
//! The incoming wavepacket |1_ξ⟩ is handled through the generalized density
//! matrices ρ_mn (m, n ∈ {0, 1}), which obey
//!
//! ```text
//! dρ11/dt = L'[ρ11] + Ω(t)[ρ01, a_V†] − Ω*(t)[ρ01†, a_V]
//! dρ01/dt = L'[ρ01] − Ω*(t)[ρ00, a_V]
//! dρ00/dt = L'[ρ00]
//! ```
//!
//! with Ω(t) = √κ_1d ξ(t) and L' the undriven generator. ρ11 is the state of
//! the dot–cavity system when one photon is incident.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::dynamics::{argmax_after, DensityMatrix, EvolveOptions, LindbladModel};
use crate::error::{Error, Result};
use crate::kernel::Fields;
use crate::model::{pulse_envelope, to_rate, PulseShape, SystemParams};
use crate::ode::integrate;
use crate::operators::{qd_lowering, trace_of_product, Polarization, SpaceDescriptor};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// The generalized density matrices (ρ00, ρ01, ρ11).
#[derive(Debug, Clone, PartialEq)]
pub struct FockState3 {
    pub space: SpaceDescriptor,
    pub rho00: DensityMatrix,
    /// Not Hermitian in general.
    pub rho01: DMatrix<C64>,
    pub rho11: DensityMatrix,
}

impl FockState3 {
    /// ρ11 = ρ00 = ρ, ρ01 = 0.
    pub fn initial(rho: &DensityMatrix) -> Self {
        let d = rho.space.total_dim();
        Self {
            space: rho.space,
            rho00: rho.clone(),
            rho01: DMatrix::zeros(d, d),
            rho11: rho.clone(),
        }
    }

    fn to_flat(&self) -> Vec<C64> {
        let mut v = self.rho11.to_flat();
        v.extend(crate::dynamics::row_major(&self.rho01));
        v.extend(self.rho00.to_flat());
        v
    }

    fn from_flat(space: SpaceDescriptor, y: &[C64]) -> Self {
        let d = space.total_dim();
        let n = d * d;
        Self {
            space,
            rho11: DensityMatrix::from_flat(space, &y[..n]),
            rho01: DMatrix::from_row_slice(d, d, &y[n..2 * n]),
            rho00: DensityMatrix::from_flat(space, &y[2 * n..3 * n]),
        }
    }
}

/// Time derivatives of the three blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FockDerivative {
    pub d_rho11: DMatrix<C64>,
    pub d_rho01: DMatrix<C64>,
    pub d_rho00: DMatrix<C64>,
}

/// Wavepacket coupling: Ω(t) = amplitude · √κ_1d · ξ(t).
///
/// A unit-modulus amplitude is a physical photon with a global phase; zero
/// switches the photon off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wavepacket {
    pub shape: PulseShape,
    pub amplitude: C64,
}

impl Wavepacket {
    pub fn new(shape: PulseShape) -> Self {
        Self {
            shape,
            amplitude: ONE,
        }
    }

    pub fn omega(&self, p: &SystemParams, t: f64) -> C64 {
        self.amplitude * to_rate(p.kappa_1d()).sqrt() * pulse_envelope(&self.shape, t)
    }
}

fn stacked_rhs(model: &LindbladModel, omega: C64, y: &[C64], dy: &mut [C64]) {
    let d = model.space.total_dim();
    let n = d * d;
    let (r11, rest) = y.split_at(n);
    let (r01, r00) = rest.split_at(n);
    let (d11, rest) = dy.split_at_mut(n);
    let (d01, d00) = rest.split_at_mut(n);

    let none = Fields::default();
    model.apply(r11, none, d11);
    model.apply(r01, none, d01);
    model.apply(r00, none, d00);
    if omega == ZERO {
        return;
    }
    let k = &model.kernel;
    // ρ01† as a flat row-major matrix
    let mut r10 = vec![ZERO; n];
    for i in 0..d {
        for j in 0..d {
            r10[j * d + i] = r01[i * d + j].conj();
        }
    }
    k.add_commutator_rho_left(&k.a_v_dag, omega, r01, d11);
    k.add_commutator_rho_left(&k.a_v, -omega.conj(), &r10, d11);
    k.add_commutator_rho_left(&k.a_v, -omega.conj(), r00, d01);
}

/// Right-hand side of the coupled equations at time `t`.
pub fn fock_rhs(
    state: &FockState3,
    t: f64,
    model: &LindbladModel,
    wavepacket: &Wavepacket,
) -> Result<FockDerivative> {
    if state.space != model.space {
        return Err(Error::DimensionMismatch {
            expected: model.space.total_dim(),
            got: state.space.total_dim(),
        });
    }
    let d = model.space.total_dim();
    let y = state.to_flat();
    let mut dy = vec![ZERO; y.len()];
    stacked_rhs(model, wavepacket.omega(&model.params, t), &y, &mut dy);
    let n = d * d;
    Ok(FockDerivative {
        d_rho11: DMatrix::from_row_slice(d, d, &dy[..n]),
        d_rho01: DMatrix::from_row_slice(d, d, &dy[n..2 * n]),
        d_rho00: DMatrix::from_row_slice(d, d, &dy[2 * n..]),
    })
}

/// Snapshots of the generalized density matrices.
#[derive(Debug, Clone)]
pub struct FockTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<FockState3>,
    pub pulse_samples: Vec<f64>,
    pub params: SystemParams,
    pub wavepacket: Wavepacket,
}

/// Integrates the stacked triple so all three blocks share adaptive steps.
/// The frame option is ignored: there is no coherent field to displace.
pub fn evolve_fock(
    params: &SystemParams,
    wavepacket: &Wavepacket,
    opts: &EvolveOptions,
) -> Result<FockTrajectory> {
    wavepacket.shape.validate()?;
    let model = LindbladModel::new(*params)?;
    let space = model.space;
    let times = opts.output_grid(&wavepacket.shape)?;
    let init = FockState3::initial(&opts.initial_state(space)?);
    let mut states = Vec::with_capacity(times.len());
    let p = *params;
    integrate(
        |t, y, dy| stacked_rhs(&model, wavepacket.omega(&p, t), y, dy),
        &times,
        init.to_flat(),
        &opts.tolerances,
        |i, _, y| {
            let mut s = FockState3::from_flat(space, y);
            if i > 0 {
                s.rho00.hermitize();
                s.rho11.hermitize();
            }
            states.push(s);
        },
    )?;
    let pulse_samples = times
        .iter()
        .map(|&t| pulse_envelope(&wavepacket.shape, t))
        .collect();
    Ok(FockTrajectory {
        times,
        states,
        pulse_samples,
        params: p,
        wavepacket: *wavepacket,
    })
}

impl FockTrajectory {
    /// P_H + P_V read from ρ11.
    pub fn exciton_population(&self) -> Vec<f64> {
        let space = self.states[0].space;
        let sv = qd_lowering(space, Polarization::V).matrix;
        let sh = qd_lowering(space, Polarization::H).matrix;
        let proj = sv.adjoint() * sv + sh.adjoint() * sh;
        self.states
            .iter()
            .map(|s| trace_of_product(&proj, &s.rho11.matrix).re)
            .collect()
    }

    /// Largest P_H + P_V at or after the wavepacket center.
    pub fn peak_exciton_population(&self) -> f64 {
        let p = self.exciton_population();
        argmax_after(&self.times, &p, self.wavepacket.shape.t0)
            .map(|i| p[i])
            .unwrap_or(0.0)
    }

    /// Writes `t_ps, xi, P_exc_fock[, P_exc_coherent_ref]`.
    pub fn write_csv<W: Write>(&self, writer: W, coherent_ref: Option<&[f64]>) -> Result<()> {
        if let Some(r) = coherent_ref {
            if r.len() != self.times.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.times.len(),
                    got: r.len(),
                });
            }
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t_ps", "xi", "P_exc_fock"];
        if coherent_ref.is_some() {
            header.push("P_exc_coherent_ref");
        }
        w.write_record(&header)?;
        let p = self.exciton_population();
        for i in 0..self.times.len() {
            let mut row = vec![
                self.times[i].to_string(),
                self.pulse_samples[i].to_string(),
                p[i].to_string(),
            ];
            if let Some(r) = coherent_ref {
                row.push(r[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// (t, P_H + P_V) from ρ11.
pub fn fock_exciton_population(traj: &FockTrajectory) -> Vec<(f64, f64)> {
    traj.times
        .iter()
        .cloned()
        .zip(traj.exciton_population())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SystemParams {
        SystemParams::default().with_truncation(2, 1)
    }

    fn random(d: usize, seed: u64) -> DMatrix<C64> {
        let mut s = seed.wrapping_add(3);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        DMatrix::from_fn(d, d, |_, _| C64::new(next(), next()))
    }

    #[test]
    fn derivative_traces_vanish() {
        let p = params();
        let model = LindbladModel::new(p).unwrap();
        let s = model.space;
        let d = s.total_dim();
        let a = random(d, 1);
        let rho = &a * a.adjoint();
        let rho = DensityMatrix::new(s, &rho / rho.trace()).unwrap();
        let mut st = FockState3::initial(&rho);
        st.rho01 = random(d, 2);
        let wp = Wavepacket::new(PulseShape::gaussian(30.0));
        let der = fock_rhs(&st, 0.0, &model, &wp).unwrap();
        assert!(der.d_rho11.trace().norm() < 1e-12);
        assert!(der.d_rho00.trace().norm() < 1e-12);
    }

    #[test]
    fn rho00_ignores_the_photon() {
        let p = params();
        let model = LindbladModel::new(p).unwrap();
        let s = model.space;
        let mut st = FockState3::initial(&DensityMatrix::ground(s));
        st.rho01 = random(s.total_dim(), 9);
        let on = Wavepacket::new(PulseShape::gaussian(30.0));
        let off = Wavepacket {
            amplitude: ZERO,
            ..on
        };
        let a = fock_rhs(&st, 0.0, &model, &on).unwrap();
        let b = fock_rhs(&st, 0.0, &model, &off).unwrap();
        assert_eq!(a.d_rho00, b.d_rho00);
        let st = FockState3::initial(&DensityMatrix::ground(s));
        let z = fock_rhs(&st, 0.0, &model, &off).unwrap();
        assert_eq!(z.d_rho11, z.d_rho00);
    }

    #[test]
    fn wavepacket_phase_does_not_change_populations() {
        let p = params();
        let opts = EvolveOptions {
            snapshots: 120,
            ..EvolveOptions::default()
        };
        let wp = Wavepacket::new(PulseShape::gaussian(30.0));
        let phased = Wavepacket {
            amplitude: C64::from_polar(1.0, 1.1),
            ..wp
        };
        let a = evolve_fock(&p, &wp, &opts).unwrap().exciton_population();
        let b = evolve_fock(&p, &phased, &opts).unwrap().exciton_population();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn csv_columns() {
        let p = params();
        let opts = EvolveOptions {
            snapshots: 4,
            ..EvolveOptions::default()
        };
        let traj = evolve_fock(&p, &Wavepacket::new(PulseShape::gaussian(20.0)), &opts).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, Some(&[0.0; 4])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t_ps,xi,P_exc_fock,P_exc_coherent_ref");
        assert!(traj.write_csv(Vec::new(), Some(&[0.0; 3])).is_err());
    }
}
