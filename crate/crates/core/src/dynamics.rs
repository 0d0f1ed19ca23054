//! Time-dependent Lindblad dynamics under a coherent V-polarized drive, and
//! the observables read from the resulting trajectories.
//!
//! Two equivalent frames are available. [`Frame::Lab`] integrates the master
//! equation exactly as written, with the pulse entering through
//! `ħ(Ω* a_V + Ω a_V†)`. [`Frame::Displaced`] writes `a_V = α + b`, where
//! `α(t)` is the empty-cavity coherent response, integrated alongside the
//! state:
//!
//! ```text
//! dα/dt = −(i δ_V/ħ + κ_tot/2ħ) α − i Ω(t)
//! ```
//!
//! In that frame the cavity drive disappears and the dot sees
//! `ħg(α σ_V† + α* σ_V)` instead. Only the field scattered by the dot is
//! left in the V mode, so the V-mode truncation no longer has to hold the
//! incident coherent state.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Fields, Kernel};
use crate::model::{
    collapse_channels, drive_hamiltonian, hamiltonian_system, pulse_envelope, rabi_amplitude,
    to_rate, PulseShape, SystemParams, HBAR,
};
use crate::operators::{
    hermitian_deviation, kron, mode_lowering, qd_lowering, trace_of_product, Operator,
    Polarization, SpaceDescriptor,
};
use crate::ode::{integrate, Tolerances};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Default number of output snapshots per trajectory.
pub const DEFAULT_SNAPSHOTS: usize = 400;

/// Density matrix on the composite space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub space: SpaceDescriptor,
    pub matrix: DMatrix<C64>,
}

impl DensityMatrix {
    pub fn new(space: SpaceDescriptor, matrix: DMatrix<C64>) -> Result<Self> {
        let d = space.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { space, matrix })
    }

    /// |G, 0, 0⟩⟨G, 0, 0|
    pub fn ground(space: SpaceDescriptor) -> Self {
        Self::basis_state(space, 0, 0, 0)
    }

    pub fn basis_state(space: SpaceDescriptor, qd: usize, n_v: usize, n_h: usize) -> Self {
        let d = space.total_dim();
        let mut matrix = DMatrix::zeros(d, d);
        let i = space.index(qd, n_v, n_h);
        matrix[(i, i)] = ONE;
        Self { space, matrix }
    }

    pub(crate) fn from_flat(space: SpaceDescriptor, flat: &[C64]) -> Self {
        let d = space.total_dim();
        Self {
            space,
            matrix: DMatrix::from_row_slice(d, d, &flat[..d * d]),
        }
    }

    pub(crate) fn to_flat(&self) -> Vec<C64> {
        row_major(&self.matrix)
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn hermitian_deviation(&self) -> f64 {
        hermitian_deviation(&self.matrix)
    }

    pub fn purity(&self) -> f64 {
        trace_of_product(&self.matrix, &self.matrix).re
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::from(0.5);
        h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// ρ ← (ρ + ρ†)/2
    pub fn hermitize(&mut self) {
        self.matrix = (&self.matrix + self.matrix.adjoint()) * C64::from(0.5);
    }
}

pub(crate) fn row_major(m: &DMatrix<C64>) -> Vec<C64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Which representation the coherent drive is integrated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    #[default]
    Lab,
    Displaced,
}

/// Drive applied to the V cavity mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    None,
    /// Constant Ω (ps⁻¹).
    Constant(C64),
    /// Ω(t) = √(n κ_1d) ξ(t).
    Pulse { shape: PulseShape, n_mean: f64 },
}

impl Drive {
    pub fn omega(&self, p: &SystemParams, t: f64) -> C64 {
        match self {
            Drive::None => ZERO,
            Drive::Constant(w) => *w,
            Drive::Pulse { shape, n_mean } => C64::from(rabi_amplitude(*n_mean, p, shape, t)),
        }
    }
}

/// Assembled master-equation model for one parameter set.
#[derive(Debug, Clone)]
pub struct LindbladModel {
    pub params: SystemParams,
    pub space: SpaceDescriptor,
    pub(crate) kernel: Kernel,
}

impl LindbladModel {
    pub fn new(params: SystemParams) -> Result<Self> {
        params.validate()?;
        let space = params.space();
        Ok(Self {
            kernel: Kernel::new(&params, space)?,
            params,
            space,
        })
    }

    pub(crate) fn apply(&self, rho: &[C64], fields: Fields, out: &mut [C64]) {
        self.kernel.apply(rho, fields, out)
    }
}

/// dρ/dt for the lab-frame master equation at time `t`.
pub fn lindblad_rhs(
    rho: &DensityMatrix,
    t: f64,
    model: &LindbladModel,
    drive: &Drive,
) -> Result<DMatrix<C64>> {
    if rho.space != model.space {
        return Err(Error::DimensionMismatch {
            expected: model.space.total_dim(),
            got: rho.space.total_dim(),
        });
    }
    let d = model.space.total_dim();
    let mut out = vec![ZERO; d * d];
    let fields = Fields {
        cavity: drive.omega(&model.params, t),
        exciton: ZERO,
    };
    model.apply(&rho.to_flat(), fields, &mut out);
    Ok(DMatrix::from_row_slice(d, d, &out))
}

/// Options shared by every time-domain simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOptions {
    pub tolerances: Tolerances,
    /// Number of uniform snapshots across the window.
    pub snapshots: usize,
    /// Simulation window (ps); defaults to the pulse's default window.
    pub window: Option<(f64, f64)>,
    pub frame: Frame,
    /// Initial state; defaults to |G,0,0⟩.
    pub initial: Option<DensityMatrix>,
    /// Additional output times inside the window, merged into the grid.
    pub extra_times: Vec<f64>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            snapshots: DEFAULT_SNAPSHOTS,
            window: None,
            frame: Frame::Lab,
            initial: None,
            extra_times: Vec::new(),
        }
    }
}

impl EvolveOptions {
    pub fn displaced() -> Self {
        Self {
            frame: Frame::Displaced,
            ..Self::default()
        }
    }

    pub fn output_grid(&self, pulse: &PulseShape) -> Result<Vec<f64>> {
        let (a, b) = self.window.unwrap_or_else(|| pulse.default_window());
        if !(b > a) || self.snapshots < 2 {
            return Err(Error::InvalidParameter {
                name: "window".into(),
                reason: format!("need end > start and >= 2 snapshots (got [{a}, {b}], {})", self.snapshots),
            });
        }
        let n = self.snapshots;
        let mut grid: Vec<f64> = (0..n)
            .map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
            .collect();
        if !self.extra_times.is_empty() {
            grid.extend(self.extra_times.iter().filter(|t| **t >= a && **t <= b));
            grid.sort_by(f64::total_cmp);
            grid.dedup();
        }
        Ok(grid)
    }

    pub(crate) fn initial_state(&self, space: SpaceDescriptor) -> Result<DensityMatrix> {
        match &self.initial {
            Some(rho) if rho.space == space => Ok(rho.clone()),
            Some(rho) => Err(Error::DimensionMismatch {
                expected: space.total_dim(),
                got: rho.space.total_dim(),
            }),
            None => Ok(DensityMatrix::ground(space)),
        }
    }
}

/// One simulated run: snapshots on a uniform output grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// States in the integration frame (see [`Trajectory::frame`]).
    pub states: Vec<DensityMatrix>,
    /// ξ(t) at each snapshot.
    pub pulse_samples: Vec<f64>,
    pub params: SystemParams,
    pub pulse: PulseShape,
    pub n_mean: f64,
    pub frame: Frame,
    /// Coherent V-mode amplitude α(t) for the displaced frame; empty otherwise.
    pub alpha: Vec<C64>,
}

/// Integrates the master equation for a Gaussian (or flat) pulse carrying
/// `n_mean` photons on average.
pub fn evolve_coherent(
    params: &SystemParams,
    pulse: &PulseShape,
    n_mean: f64,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    pulse.validate()?;
    if !(n_mean >= 0.0 && n_mean.is_finite()) {
        return Err(crate::error::invalid("n_mean", "must be >= 0"));
    }
    let model = LindbladModel::new(*params)?;
    let drive = Drive::Pulse {
        shape: *pulse,
        n_mean,
    };
    evolve_with_drive(&model, pulse, n_mean, drive, opts)
}

pub(crate) fn evolve_with_drive(
    model: &LindbladModel,
    pulse: &PulseShape,
    n_mean: f64,
    drive: Drive,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    let times = opts.output_grid(pulse)?;
    let space = model.space;
    let d = space.total_dim();
    let p = model.params;
    let rho0 = opts.initial_state(space)?;

    let mut y0 = rho0.to_flat();
    let displaced = opts.frame == Frame::Displaced;
    if displaced {
        y0.push(ZERO);
    }
    let g_rate = to_rate(p.g);
    let cavity_pole = C64::new(to_rate(p.kappa_tot) / 2.0, to_rate(p.delta_v));

    let mut states = Vec::with_capacity(times.len());
    let mut alpha = Vec::new();
    integrate(
        |t, y, dy| {
            let omega = drive.omega(&p, t);
            let fields = if displaced {
                let a = y[d * d];
                dy[d * d] = -cavity_pole * a - I * omega;
                Fields {
                    cavity: ZERO,
                    exciton: a * g_rate,
                }
            } else {
                Fields {
                    cavity: omega,
                    exciton: ZERO,
                }
            };
            model.apply(&y[..d * d], fields, &mut dy[..d * d]);
        },
        &times,
        y0,
        &opts.tolerances,
        |i, _, y| {
            let mut rho = DensityMatrix::from_flat(space, y);
            if i > 0 {
                rho.hermitize();
            }
            states.push(rho);
            if displaced {
                alpha.push(y[d * d]);
            }
        },
    )?;

    let pulse_samples = times.iter().map(|&t| pulse_envelope(pulse, t)).collect();
    Ok(Trajectory {
        times,
        states,
        pulse_samples,
        params: p,
        pulse: *pulse,
        n_mean,
        frame: opts.frame,
        alpha,
    })
}

/// Which definition of the flip probability to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipMode {
    /// max over t ≥ t0 of P_H + P_V.
    MaxAfterPulse,
    /// P_H + P_V at a fixed time, taken where the ⟨n⟩ = 1 run peaks.
    AtReferenceTime,
}

impl Trajectory {
    pub fn space(&self) -> SpaceDescriptor {
        self.states[0].space
    }

    fn series_unchecked(&self, op: &DMatrix<C64>) -> Vec<C64> {
        self.states
            .iter()
            .map(|rho| trace_of_product(op, &rho.matrix))
            .collect()
    }

    fn real_series(&self, op: &DMatrix<C64>) -> Vec<f64> {
        self.series_unchecked(op).into_iter().map(|z| z.re).collect()
    }

    /// P_V(t) = ⟨σ_V†σ_V⟩
    pub fn population_v(&self) -> Vec<f64> {
        let s = qd_lowering(self.space(), Polarization::V).matrix;
        self.real_series(&(s.adjoint() * s))
    }

    /// P_H(t) = ⟨σ_H†σ_H⟩
    pub fn population_h(&self) -> Vec<f64> {
        let s = qd_lowering(self.space(), Polarization::H).matrix;
        self.real_series(&(s.adjoint() * s))
    }

    /// P_V(t) + P_H(t)
    pub fn exciton_population(&self) -> Vec<f64> {
        self.population_v()
            .into_iter()
            .zip(self.population_h())
            .map(|(a, b)| a + b)
            .collect()
    }

    /// ⟨a_H†a_H⟩(t); unaffected by the V-mode displacement.
    pub fn photons_h(&self) -> Vec<f64> {
        let a = mode_lowering(self.space(), Polarization::H).matrix;
        self.real_series(&(a.adjoint() * a))
    }

    /// Lab-frame ⟨a_V†a_V⟩(t).
    pub fn photons_v(&self) -> Vec<f64> {
        let a = mode_lowering(self.space(), Polarization::V).matrix;
        let num = self.real_series(&(a.adjoint() * &a));
        match self.frame {
            Frame::Lab => num,
            Frame::Displaced => {
                let b = self.series_unchecked(&a);
                num.iter()
                    .zip(b)
                    .zip(&self.alpha)
                    .map(|((n, b), al)| n + 2.0 * (al.conj() * b).re + al.norm_sqr())
                    .collect()
            }
        }
    }

    /// Lab-frame ⟨a_V⟩(t).
    pub fn field_v(&self) -> Vec<C64> {
        let a = mode_lowering(self.space(), Polarization::V).matrix;
        let b = self.series_unchecked(&a);
        match self.frame {
            Frame::Lab => b,
            Frame::Displaced => b.iter().zip(&self.alpha).map(|(b, a)| b + a).collect(),
        }
    }

    pub fn trace_errors(&self) -> Vec<f64> {
        self.states.iter().map(|r| (r.trace() - ONE).norm()).collect()
    }

    /// Writes `t_ps, xi, P_V, P_H, n_cav_V, n_cav_H, trace_err` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t_ps", "xi", "P_V", "P_H", "n_cav_V", "n_cav_H", "trace_err"])?;
        let (pv, ph, nv, nh, te) = (
            self.population_v(),
            self.population_h(),
            self.photons_v(),
            self.photons_h(),
            self.trace_errors(),
        );
        for i in 0..self.times.len() {
            w.serialize((self.times[i], self.pulse_samples[i], pv[i], ph[i], nv[i], nh[i], te[i]))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ⟨op⟩(t) at every snapshot. The operator must be Hermitian; imaginary
/// parts above 1e-9 are reported as an error.
pub fn observable_series(traj: &Trajectory, op: &Operator) -> Result<Vec<(f64, f64)>> {
    op.check_space(traj.space())?;
    let dev = op.hermitian_deviation();
    if dev > 1e-12 {
        return Err(Error::NotHermitian(dev));
    }
    let mut out = Vec::with_capacity(traj.times.len());
    for (t, z) in traj.times.iter().zip(traj.series_unchecked(&op.matrix)) {
        if z.im.abs() > 1e-9 {
            return Err(Error::InvalidParameter {
                name: "state".into(),
                reason: format!("expectation value has imaginary part {:e} at t = {t}", z.im),
            });
        }
        out.push((*t, z.re));
    }
    Ok(out)
}

/// Trapezoidal integral of uniformly or non-uniformly sampled data.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Photons emitted into the H mode through the top mirror.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollectedPhotons {
    pub n_h: f64,
    /// ⟨a_H†a_H⟩ at the last snapshot divided by its peak.
    pub tail_ratio: f64,
    /// Emission was still running at the end of the window (tail ratio ≥ 1e-6).
    pub truncated: bool,
}

/// N_H = κ_1d ∫⟨a_H†a_H⟩ dt.
pub fn collected_photons_h(traj: &Trajectory) -> CollectedPhotons {
    let nh = traj.photons_h();
    let peak = nh.iter().cloned().fold(0.0, f64::max);
    let last = *nh.last().unwrap_or(&0.0);
    let tail_ratio = if peak > 0.0 { last / peak } else { 0.0 };
    let truncated = tail_ratio >= 1e-6;
    if truncated {
        log::warn!(
            "H emission not finished at t = {} ps (tail ratio {tail_ratio:e}); N_H is truncated",
            traj.times.last().unwrap_or(&0.0)
        );
    }
    CollectedPhotons {
        n_h: to_rate(traj.params.kappa_1d()) * trapezoid(&traj.times, &nh),
        tail_ratio,
        truncated,
    }
}

/// Index of the largest value among samples with `times[i] >= t_start`.
pub(crate) fn argmax_after(times: &[f64], values: &[f64], t_start: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&t, &v)) in times.iter().zip(values).enumerate() {
        if t >= t_start && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Linear interpolation of sampled data at `t`.
pub(crate) fn interpolate(times: &[f64], values: &[f64], t: f64) -> Result<f64> {
    let (start, end) = (times[0], times[times.len() - 1]);
    if !(t >= start && t <= end) {
        return Err(Error::OutOfWindow { t_ref: t, start, end });
    }
    let k = times.partition_point(|&x| x < t);
    if k == 0 {
        return Ok(values[0]);
    }
    if times[k] == t {
        return Ok(values[k]);
    }
    let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
    Ok(values[k - 1] * (1.0 - w) + values[k] * w)
}

/// Probability to find the dot excited.
pub fn flip_probability(traj: &Trajectory, mode: FlipMode, t_ref: Option<f64>) -> Result<f64> {
    flip_from_series(&traj.times, &traj.exciton_population(), traj.pulse.t0, mode, t_ref)
}

pub(crate) fn flip_from_series(
    times: &[f64],
    p_exc: &[f64],
    t0: f64,
    mode: FlipMode,
    t_ref: Option<f64>,
) -> Result<f64> {
    match mode {
        FlipMode::MaxAfterPulse => Ok(argmax_after(times, p_exc, t0)
            .map(|i| p_exc[i])
            .unwrap_or(0.0)),
        FlipMode::AtReferenceTime => {
            let t = t_ref.ok_or_else(|| {
                crate::error::invalid("t_ref", "required for the reference-time definition")
            })?;
            interpolate(times, p_exc, t)
        }
    }
}

/// Spacing of the local grid on which [`reference_time`] is refined (ps).
pub const REFERENCE_RESOLUTION: f64 = 0.01;

/// Time at which P_H + P_V peaks for a pulse carrying one photon on average.
///
/// The peak is located on the snapshot grid, then refined on a local grid
/// of spacing [`REFERENCE_RESOLUTION`] spanning the neighbouring snapshots.
pub fn reference_time(params: &SystemParams, pulse: &PulseShape, opts: &EvolveOptions) -> Result<f64> {
    let peak = |traj: &Trajectory| {
        argmax_after(&traj.times, &traj.exciton_population(), pulse.t0)
            .ok_or_else(|| crate::error::invalid("window", "no snapshot after the pulse center"))
    };
    let traj = evolve_coherent(params, pulse, 1.0, opts)?;
    let k = peak(&traj)?;
    let lo = traj.times[k.saturating_sub(1)].max(pulse.t0);
    let hi = traj.times[(k + 1).min(traj.times.len() - 1)];
    let count = ((hi - lo) / REFERENCE_RESOLUTION).ceil() as usize;
    let fine = EvolveOptions {
        extra_times: (0..=count).map(|i| lo + (hi - lo) * i as f64 / count.max(1) as f64).collect(),
        ..opts.clone()
    };
    let traj = evolve_coherent(params, pulse, 1.0, &fine)?;
    Ok(traj.times[peak(&traj)?])
}

/// Vectorized generator L with vec(dρ/dt) = L vec(ρ) under a constant drive.
///
/// vec stacks rows: vec(ρ)[i·d + j] = ρ[i, j], so vec(AρB) = (A ⊗ Bᵀ) vec(ρ).
pub fn liouvillian_matrix(params: &SystemParams, omega: C64) -> Result<DMatrix<C64>> {
    let space = params.space();
    let d = space.total_dim();
    let id = DMatrix::<C64>::identity(d, d);
    let h = hamiltonian_system(params, space)?.matrix + drive_hamiltonian(omega, space).matrix;
    let h = h * C64::from(1.0 / HBAR);
    let mut l = (kron(&h, &id) - kron(&id, &h.transpose())) * (-I);
    for ch in collapse_channels(params, space)? {
        let rate = to_rate(ch.rate);
        if rate == 0.0 {
            continue;
        }
        let x = &ch.jump.matrix;
        let xdx = x.adjoint() * x;
        l += (kron(x, &x.map(|z| z.conj())) * C64::from(1.0)
            - kron(&xdx, &id) * C64::from(0.5)
            - kron(&id, &xdx.transpose()) * C64::from(0.5))
            * C64::from(rate);
    }
    Ok(l)
}

fn norm1(m: &DMatrix<C64>) -> f64 {
    (0..m.ncols())
        .map(|c| m.column(c).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// exp(L t) v by scaled Taylor series.
pub fn expm_action(l: &DMatrix<C64>, v: &DVector<C64>, t: f64) -> DVector<C64> {
    let scale = norm1(l) * t.abs();
    // Substeps with ‖L h‖₁ ≤ 4 keep the series short and its terms below e⁴.
    let steps = ((scale / 4.0).ceil() as usize).max(1);
    let h = t / steps as f64;
    let mut out = v.clone();
    for _ in 0..steps {
        let mut term = out.clone();
        let mut acc = out.clone();
        for k in 1..=60 {
            term = (l * &term) * C64::from(h / k as f64);
            acc += &term;
            let tn = term.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let an = acc.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if tn <= 1e-17 * an.max(1e-300) {
                break;
            }
        }
        out = acc;
    }
    out
}

/// unvec(exp(L t) vec(ρ₀)).
pub fn propagate_expm(l: &DMatrix<C64>, rho0: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    let d = rho0.space.total_dim();
    if l.nrows() != d * d || l.ncols() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            got: l.nrows(),
        });
    }
    if t < 0.0 {
        return Err(crate::error::invalid("t", "must be >= 0"));
    }
    let v = DVector::from_vec(rho0.to_flat());
    let out = expm_action(l, &v, t);
    Ok(DensityMatrix::from_flat(rho0.space, out.as_slice()))
}
