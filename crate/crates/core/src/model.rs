//! Physical model: dot + bimodal cavity Hamiltonian, decay channels and the
//! drive envelope.
//!
//! Energies are in μeV and times in ps. Rates given as energies are turned
//! into angular frequencies with [`HBAR`].

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::operators::{
    mode_lowering, qd_lowering, Operator, Polarization, SpaceDescriptor,
};

/// ħ in μeV·ps.
pub const HBAR: f64 = 658.211_956_9;

/// Elementary charge, J per eV.
const EV_IN_JOULE: f64 = 1.602_176_634e-19;

/// Converts an energy in μeV to an angular frequency in ps⁻¹.
pub fn to_rate(energy_uev: f64) -> f64 {
    energy_uev / HBAR
}

/// Physical constants of the dot–cavity system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Dot–mode coupling ħg (μeV).
    pub g: f64,
    /// Total cavity energy-decay rate ħκ_tot (μeV).
    pub kappa_tot: f64,
    /// Fraction of κ_tot leaving through the top mirror (1D channel).
    pub eta_out: f64,
    /// Exciton decay rate ħγ per polarization (μeV).
    pub gamma: f64,
    /// Fine-structure splitting (μeV).
    pub delta_fss: f64,
    /// Rotation between exciton axes and cavity axes (rad).
    pub theta: f64,
    /// Cavity detunings from the pump (μeV).
    pub delta_v: f64,
    pub delta_h: f64,
    /// Exciton detunings from the pump (μeV).
    pub delta_x: f64,
    pub delta_y: f64,
    pub n_max_v: usize,
    pub n_max_h: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            g: 21.0,
            kappa_tot: 120.0,
            eta_out: 0.7,
            gamma: 0.3,
            delta_fss: 15.0,
            theta: PI / 4.0,
            delta_v: 0.0,
            delta_h: -70.0,
            delta_x: -7.5,
            delta_y: 7.5,
            n_max_v: 4,
            n_max_h: 2,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("g", self.g),
            ("kappa_tot", self.kappa_tot),
            ("eta_out", self.eta_out),
            ("gamma", self.gamma),
            ("delta_fss", self.delta_fss),
            ("theta", self.theta),
            ("delta_v", self.delta_v),
            ("delta_h", self.delta_h),
            ("delta_x", self.delta_x),
            ("delta_y", self.delta_y),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if self.g < 0.0 {
            return Err(invalid("g", "must be >= 0"));
        }
        // kappa_tot = 0 is a closed cavity, used for unitary checks.
        if self.kappa_tot < 0.0 {
            return Err(invalid("kappa_tot", "must be >= 0"));
        }
        if !(self.eta_out > 0.0 && self.eta_out <= 1.0) {
            return Err(invalid("eta_out", "must lie in (0, 1]"));
        }
        if self.gamma < 0.0 {
            return Err(invalid("gamma", "must be >= 0"));
        }
        SpaceDescriptor::new(self.n_max_v, self.n_max_h)?;
        Ok(())
    }

    pub fn space(&self) -> SpaceDescriptor {
        SpaceDescriptor {
            n_max_v: self.n_max_v.max(1),
            n_max_h: self.n_max_h.max(1),
        }
    }

    pub fn with_truncation(mut self, n_max_v: usize, n_max_h: usize) -> Self {
        self.n_max_v = n_max_v;
        self.n_max_h = n_max_h;
        self
    }

    /// Top-mirror (1D channel) decay rate ħκ_1d in μeV.
    pub fn kappa_1d(&self) -> f64 {
        self.eta_out * self.kappa_tot
    }

    pub fn kappa_loss(&self) -> f64 {
        (1.0 - self.eta_out) * self.kappa_tot
    }

    /// Detuning of the |V⟩ dot state: δ_X cos²θ + δ_Y sin²θ.
    pub fn delta_at_v(&self) -> f64 {
        let (s, c) = self.theta.sin_cos();
        self.delta_x * c * c + self.delta_y * s * s
    }

    /// Detuning of the |H⟩ dot state: δ_X sin²θ + δ_Y cos²θ.
    pub fn delta_at_h(&self) -> f64 {
        let (s, c) = self.theta.sin_cos();
        self.delta_x * s * s + self.delta_y * c * c
    }

    /// Coupling ⟨H|H_QD|V⟩ = Δ_FSS cosθ sinθ.
    pub fn vh_coupling(&self) -> f64 {
        let (s, c) = self.theta.sin_cos();
        self.delta_fss * c * s
    }

    /// Moves the pump frame by `laser_detuning` (μeV, laser minus pump
    /// reference): every detuning is lowered by that amount.
    pub fn shifted(mut self, laser_detuning: f64) -> Self {
        self.delta_v -= laser_detuning;
        self.delta_h -= laser_detuning;
        self.delta_x -= laser_detuning;
        self.delta_y -= laser_detuning;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseKind {
    Gaussian,
    /// Flat envelope ξ = τ^(-1/2) at all times.
    Constant,
}

/// Drive envelope ξ(t), normalized so that ∫ξ² dt = 1 for the Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseShape {
    /// Duration τ (ps): full width at half maximum of ξ(t).
    pub tau: f64,
    /// Pulse center (ps).
    pub t0: f64,
    pub kind: PulseKind,
}

impl Default for PulseShape {
    fn default() -> Self {
        Self {
            tau: 56.0,
            t0: 0.0,
            kind: PulseKind::Gaussian,
        }
    }
}

impl PulseShape {
    pub fn gaussian(tau: f64) -> Self {
        Self {
            tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau", "must be positive and finite"));
        }
        if !self.t0.is_finite() {
            return Err(invalid("t0", "must be finite"));
        }
        Ok(())
    }

    /// Default simulation window `[t0 − 3τ, t0 + max(6τ, 400 ps)]`.
    pub fn default_window(&self) -> (f64, f64) {
        (
            self.t0 - 3.0 * self.tau,
            self.t0 + (6.0 * self.tau).max(400.0),
        )
    }
}

/// ξ(t) in ps^(-1/2).
pub fn pulse_envelope(shape: &PulseShape, t: f64) -> f64 {
    match shape.kind {
        PulseKind::Gaussian => {
            let tau2 = shape.tau * shape.tau;
            let s = t - shape.t0;
            (8.0 * LN_2 / (PI * tau2)).powf(0.25) * (-s * s / tau2 * 4.0 * LN_2).exp()
        }
        PulseKind::Constant => shape.tau.powf(-0.5),
    }
}

/// Ω(t) = √(n κ_1d) ξ(t) in ps⁻¹.
pub fn rabi_amplitude(n_mean: f64, p: &SystemParams, shape: &PulseShape, t: f64) -> f64 {
    (n_mean * to_rate(p.kappa_1d())).sqrt() * pulse_envelope(shape, t)
}

/// Mean photon number per pulse ⟨n⟩ = P / (Γ_rep E).
pub fn mean_photon_from_power(power_w: f64, rep_rate_hz: f64, photon_energy_ev: f64) -> Result<f64> {
    if !(power_w >= 0.0 && power_w.is_finite()) {
        return Err(invalid("power", "must be >= 0"));
    }
    if !(rep_rate_hz > 0.0 && rep_rate_hz.is_finite()) {
        return Err(invalid("rep_rate", "must be > 0"));
    }
    if !(photon_energy_ev > 0.0 && photon_energy_ev.is_finite()) {
        return Err(invalid("photon_energy", "must be > 0"));
    }
    Ok(power_w / (rep_rate_hz * photon_energy_ev * EV_IN_JOULE))
}

/// Dot part H_QD (μeV).
pub fn hamiltonian_qd(p: &SystemParams, space: SpaceDescriptor) -> Operator {
    let sv = qd_lowering(space, Polarization::V);
    let sh = qd_lowering(space, Polarization::H);
    let svd = sv.matrix.adjoint();
    let shd = sh.matrix.adjoint();
    let m = (&svd * &sv.matrix) * C64::from(p.delta_at_v())
        + (&shd * &sh.matrix) * C64::from(p.delta_at_h())
        + (&shd * &sv.matrix + &svd * &sh.matrix) * C64::from(p.vh_coupling());
    Operator::new(space, m).expect("dimensions fixed by space")
}

/// H_s = H_QD + H_c + H_i in the pump frame (μeV).
pub fn hamiltonian_system(p: &SystemParams, space: SpaceDescriptor) -> Result<Operator> {
    p.validate()?;
    let sv = qd_lowering(space, Polarization::V).matrix;
    let sh = qd_lowering(space, Polarization::H).matrix;
    let av = mode_lowering(space, Polarization::V).matrix;
    let ah = mode_lowering(space, Polarization::H).matrix;

    let cavity = (av.adjoint() * &av) * C64::from(p.delta_v)
        + (ah.adjoint() * &ah) * C64::from(p.delta_h);
    let interaction = (&av * sv.adjoint()
        + &ah * sh.adjoint()
        + av.adjoint() * &sv
        + ah.adjoint() * &sh)
        * C64::from(p.g);
    let m = hamiltonian_qd(p, space).matrix + cavity + interaction;
    let mut op = Operator::new(space, m)?;
    // Exact by construction; clear rounding noise from the flag check.
    op.is_hermitian = true;
    Ok(op)
}

/// H_p = ħ(Ω* a_V + Ω a_V†) in μeV, with Ω in ps⁻¹.
pub fn drive_hamiltonian(omega: C64, space: SpaceDescriptor) -> Operator {
    let av = mode_lowering(space, Polarization::V).matrix;
    let m = (&av * omega.conj() + av.adjoint() * omega) * C64::from(HBAR);
    let mut op = Operator::new(space, m).expect("dimensions fixed by space");
    op.is_hermitian = true;
    op
}

/// One Lindblad decay channel D_{rate, jump}.
#[derive(Debug, Clone)]
pub struct CollapseChannel {
    pub label: &'static str,
    /// Rate as an energy (μeV).
    pub rate: f64,
    pub jump: Operator,
}

/// The four decay channels, in the order σ_H, σ_V, a_H, a_V.
pub fn collapse_channels(p: &SystemParams, space: SpaceDescriptor) -> Result<Vec<CollapseChannel>> {
    p.validate()?;
    Ok(vec![
        CollapseChannel {
            label: "sigma_H",
            rate: p.gamma,
            jump: qd_lowering(space, Polarization::H),
        },
        CollapseChannel {
            label: "sigma_V",
            rate: p.gamma,
            jump: qd_lowering(space, Polarization::V),
        },
        CollapseChannel {
            label: "a_H",
            rate: p.kappa_tot,
            jump: mode_lowering(space, Polarization::H),
        },
        CollapseChannel {
            label: "a_V",
            rate: p.kappa_tot,
            jump: mode_lowering(space, Polarization::V),
        },
    ])
}
