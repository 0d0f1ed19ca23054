//! Least-squares extraction of dot and cavity parameters from reflectivity
//! spectra.
//!
//! The model curve is the single-excitation reflectivity
//! ([`linear_response_reflectivity`]) with an optional affine nuisance
//! `scale · R + baseline`. Positive quantities are fitted in log space and
//! the out-coupling fraction in logit space; the remaining parameters are
//! fitted directly and projected back onto their bounds.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::SystemParams;
use crate::spectra::{cooperativity, linear_response_reflectivity};

pub const MAX_ITERATIONS: usize = 200;
pub const CONVERGENCE_TOL: f64 = 1e-8;
/// Relative forward-difference step for the Jacobian.
pub const JACOBIAN_STEP: f64 = 1e-6;

/// Parameters that may be freed in a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitParam {
    G,
    Gamma,
    KappaTot,
    EtaOut,
    DeltaFss,
    Theta,
    /// δ_H − δ_V (μeV); δ_V stays fixed.
    ModeSplitting,
    AmplitudeScale,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Transform {
    Identity,
    Log,
    Logit,
}

impl FitParam {
    pub const ALL: [FitParam; 9] = [
        FitParam::G,
        FitParam::Gamma,
        FitParam::KappaTot,
        FitParam::EtaOut,
        FitParam::DeltaFss,
        FitParam::Theta,
        FitParam::ModeSplitting,
        FitParam::AmplitudeScale,
        FitParam::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FitParam::G => "g",
            FitParam::Gamma => "gamma",
            FitParam::KappaTot => "kappa_tot",
            FitParam::EtaOut => "eta_out",
            FitParam::DeltaFss => "delta_fss",
            FitParam::Theta => "theta",
            FitParam::ModeSplitting => "mode_splitting",
            FitParam::AmplitudeScale => "amplitude_scale",
            FitParam::Baseline => "baseline",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| invalid("free", format!("unknown fit parameter '{name}'")))
    }

    fn transform(self) -> Transform {
        match self {
            FitParam::G | FitParam::Gamma | FitParam::KappaTot | FitParam::AmplitudeScale => {
                Transform::Log
            }
            FitParam::EtaOut => Transform::Logit,
            _ => Transform::Identity,
        }
    }

    /// Default (lo, hi) bounds.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            FitParam::G => (1e-3, 200.0),
            FitParam::Gamma => (1e-4, 50.0),
            FitParam::KappaTot => (1.0, 1000.0),
            FitParam::EtaOut => (1e-3, 1.0 - 1e-9),
            FitParam::DeltaFss => (-200.0, 200.0),
            FitParam::Theta => (-std::f64::consts::PI, std::f64::consts::PI),
            FitParam::ModeSplitting => (-500.0, 500.0),
            FitParam::AmplitudeScale => (1e-3, 10.0),
            FitParam::Baseline => (-1.0, 1.0),
        }
    }
}

impl Transform {
    fn to_internal(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Logit => (x / (1.0 - x)).ln(),
        }
    }

    fn to_external(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logit => 1.0 / (1.0 + (-u).exp()),
        }
    }

    /// dx/du
    fn derivative(self, u: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => u.exp(),
            Transform::Logit => {
                let s = 1.0 / (1.0 + (-u).exp());
                s * (1.0 - s)
            }
        }
    }
}

/// Physical parameters plus the affine nuisance terms of the fit model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitModel {
    pub params: SystemParams,
    pub amplitude_scale: f64,
    pub baseline: f64,
}

impl FitModel {
    pub fn new(params: SystemParams) -> Self {
        Self {
            params,
            amplitude_scale: 1.0,
            baseline: 0.0,
        }
    }

    pub fn get(&self, which: FitParam) -> f64 {
        let p = &self.params;
        match which {
            FitParam::G => p.g,
            FitParam::Gamma => p.gamma,
            FitParam::KappaTot => p.kappa_tot,
            FitParam::EtaOut => p.eta_out,
            FitParam::DeltaFss => p.delta_fss,
            FitParam::Theta => p.theta,
            FitParam::ModeSplitting => p.delta_h - p.delta_v,
            FitParam::AmplitudeScale => self.amplitude_scale,
            FitParam::Baseline => self.baseline,
        }
    }

    pub fn set(&mut self, which: FitParam, value: f64) {
        let p = &mut self.params;
        match which {
            FitParam::G => p.g = value,
            FitParam::Gamma => p.gamma = value,
            FitParam::KappaTot => p.kappa_tot = value,
            FitParam::EtaOut => p.eta_out = value,
            FitParam::DeltaFss => p.delta_fss = value,
            FitParam::Theta => p.theta = value,
            FitParam::ModeSplitting => p.delta_h = p.delta_v + value,
            FitParam::AmplitudeScale => self.amplitude_scale = value,
            FitParam::Baseline => self.baseline = value,
        }
    }

    /// scale · R(δ) + baseline
    pub fn evaluate(&self, detuning: f64) -> Result<f64> {
        Ok(self.amplitude_scale * linear_response_reflectivity(&self.params, detuning)? + self.baseline)
    }
}

/// One measured reflectivity sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub detuning: f64,
    pub reflectivity: f64,
    pub weight: f64,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    #[serde(rename = "detuning_ueV")]
    detuning: f64,
    reflectivity: f64,
    weight: Option<f64>,
}

/// Reads `detuning_ueV, reflectivity[, weight]` (header required).
pub fn read_data_csv<R: Read>(reader: R) -> Result<Vec<DataPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["detuning_ueV", "reflectivity"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Config(format!("data CSV is missing column '{required}'")));
        }
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: CsvRow = row?;
        out.push(DataPoint {
            detuning: row.detuning,
            reflectivity: row.reflectivity,
            weight: row.weight.unwrap_or(1.0),
        });
    }
    Ok(out)
}

/// Writes `detuning_ueV, reflectivity, weight`.
pub fn write_data_csv<W: Write>(data: &[DataPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["detuning_ueV", "reflectivity", "weight"])?;
    for d in data {
        w.write_record([d.detuning.to_string(), d.reflectivity.to_string(), d.weight.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Gaussian noise added to synthetic spectra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "level")]
pub enum Noise {
    /// R + σ ε
    Absolute(f64),
    /// R (1 + σ ε)
    Relative(f64),
}

/// Model curve sampled on `detunings` with seeded Gaussian noise.
pub fn synthetic_spectrum(model: &FitModel, detunings: &[f64], noise: Noise, seed: u64) -> Result<Vec<DataPoint>> {
    let sigma = match noise {
        Noise::Absolute(s) | Noise::Relative(s) => s,
    };
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid("noise", e.to_string()))?;
    let mut rng = StdRng::seed_from_u64(seed);
    detunings
        .iter()
        .map(|&d| {
            let clean = model.evaluate(d)?;
            let e = normal.sample(&mut rng);
            let reflectivity = match noise {
                Noise::Absolute(_) => clean + e,
                Noise::Relative(_) => clean * (1.0 + e),
            };
            Ok(DataPoint {
                detuning: d,
                reflectivity,
                weight: 1.0,
            })
        })
        .collect()
}

/// Weighted residuals √w (model − data).
pub fn residuals(model: &FitModel, data: &[DataPoint]) -> Result<DVector<f64>> {
    let r = data
        .iter()
        .map(|d| Ok(d.weight.sqrt() * (model.evaluate(d.detuning)? - d.reflectivity)))
        .collect::<Result<Vec<_>>>()?;
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular("non-finite residual".into()));
    }
    Ok(DVector::from_vec(r))
}

/// A bounded least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    pub data: Vec<DataPoint>,
    pub initial: FitModel,
    pub free: Vec<FitParam>,
    /// Bounds per free parameter; `None` uses [`FitParam::default_bounds`].
    pub bounds: Vec<Option<(f64, f64)>>,
}

impl FitProblem {
    pub fn new(data: Vec<DataPoint>, initial: FitModel, free: Vec<FitParam>) -> Self {
        let bounds = vec![None; free.len()];
        Self {
            data,
            initial,
            free,
            bounds,
        }
    }

    fn bound(&self, k: usize) -> (f64, f64) {
        self.bounds
            .get(k)
            .copied()
            .flatten()
            .unwrap_or_else(|| self.free[k].default_bounds())
    }

    pub fn validate(&self) -> Result<()> {
        if self.free.is_empty() {
            return Err(invalid("free", "no free parameters"));
        }
        let mut seen = self.free.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.free.len() {
            return Err(invalid("free", "parameters listed twice"));
        }
        if self.bounds.len() != self.free.len() {
            return Err(invalid("bounds", "one entry per free parameter required"));
        }
        if self.data.len() < 2 * self.free.len() {
            return Err(invalid(
                "data",
                format!(
                    "{} points for {} free parameters; need at least twice as many",
                    self.data.len(),
                    self.free.len()
                ),
            ));
        }
        if self
            .data
            .iter()
            .any(|d| !(d.detuning.is_finite() && d.reflectivity.is_finite() && d.weight >= 0.0))
        {
            return Err(invalid("data", "non-finite value or negative weight"));
        }
        for (k, &p) in self.free.iter().enumerate() {
            let (lo, hi) = self.bound(k);
            let x = self.initial.get(p);
            if !(lo < hi) || !(x >= lo && x <= hi) {
                return Err(invalid(
                    p.name(),
                    format!("initial value {x} outside bounds [{lo}, {hi}]"),
                ));
            }
            let t = p.transform();
            if (t == Transform::Log && lo <= 0.0) || (t == Transform::Logit && (lo <= 0.0 || hi > 1.0)) {
                return Err(invalid(p.name(), format!("bounds [{lo}, {hi}] incompatible with its transform")));
            }
        }
        Ok(())
    }

    fn internal_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.free.len())
            .map(|k| {
                let t = self.free[k].transform();
                let (lo, hi) = self.bound(k);
                (t.to_internal(lo), t.to_internal(hi))
            })
            .collect()
    }

    fn model_at(&self, u: &DVector<f64>) -> FitModel {
        let mut m = self.initial;
        for (k, &p) in self.free.iter().enumerate() {
            m.set(p, p.transform().to_external(u[k]));
        }
        m
    }

    fn internal(&self, m: &FitModel) -> DVector<f64> {
        DVector::from_iterator(
            self.free.len(),
            self.free.iter().map(|&p| p.transform().to_internal(m.get(p))),
        )
    }

    fn residuals_at(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        residuals(&self.model_at(u), &self.data)
    }

    fn jacobian(&self, u: &DVector<f64>, r: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(r.len(), u.len());
        for k in 0..u.len() {
            let h = JACOBIAN_STEP * u[k].abs().max(1.0);
            let mut up = u.clone();
            up[k] += h;
            let rp = self.residuals_at(&up)?;
            j.set_column(k, &((rp - r) / h));
        }
        Ok(j)
    }
}

/// Outcome of a fit. Values are in external units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub free: Vec<FitParam>,
    pub best: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Gauss–Newton covariance of the free parameters (delta method through
    /// the transforms, scaled by the reduced χ²).
    pub covariance: Vec<Vec<f64>>,
    /// ‖r‖₂ at the best point.
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// JᵀJ could not be inverted; the last iterate is reported as is.
    pub singular: bool,
    pub model: FitModel,
}

impl FitResult {
    pub fn value(&self, which: FitParam) -> Option<f64> {
        self.free.iter().position(|&p| p == which).map(|k| self.best[k])
    }

    pub fn std_error(&self, which: FitParam) -> Option<f64> {
        self.free.iter().position(|&p| p == which).map(|k| self.std_errors[k])
    }

    pub fn cooperativity(&self) -> Result<f64> {
        let p = &self.model.params;
        cooperativity(p.g, p.kappa_tot, p.gamma)
    }

    pub fn report(&self) -> FitReport {
        FitReport {
            parameters: self
                .free
                .iter()
                .zip(&self.best)
                .zip(&self.std_errors)
                .map(|((p, &value), &std_error)| ReportEntry {
                    name: p.name().to_string(),
                    value,
                    std_error,
                })
                .collect(),
            residual_norm: self.residual_norm,
            initial_residual_norm: self.initial_residual_norm,
            iterations: self.iterations,
            converged: self.converged,
            singular: self.singular,
            cooperativity: self.cooperativity().ok(),
            model: self.model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub name: String,
    pub value: f64,
    /// NaN (serialized as null) when the covariance is unavailable.
    pub std_error: f64,
}

/// JSON-serializable fit summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub parameters: Vec<ReportEntry>,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub singular: bool,
    pub cooperativity: Option<f64>,
    pub model: FitModel,
}

fn project(u: &mut DVector<f64>, bounds: &[(f64, f64)]) {
    for (x, &(lo, hi)) in u.iter_mut().zip(bounds) {
        *x = x.clamp(lo, hi);
    }
}

/// Levenberg–Marquardt from `problem.initial`.
pub fn fit_reflectivity(problem: &FitProblem) -> Result<FitResult> {
    problem.validate()?;
    let start = problem.internal(&problem.initial);
    levenberg_marquardt(problem, start)
}

fn levenberg_marquardt(problem: &FitProblem, start: DVector<f64>) -> Result<FitResult> {
    let bounds = problem.internal_bounds();
    let n = start.len();
    let mut u = start;
    project(&mut u, &bounds);
    let mut r = problem.residuals_at(&u)?;
    let mut cost = r.norm_squared();
    let initial_residual_norm = cost.sqrt();
    let mut j = problem.jacobian(&u, &r)?;
    let mut lambda = {
        let jtj = j.transpose() * &j;
        1e-3 * jtj.diagonal().max().max(f64::MIN_POSITIVE)
    };
    let mut iterations = 0;
    let mut converged = cost == 0.0;

    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let jtj = j.transpose() * &j;
        let grad = j.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e20 {
            let a = &jtj + DMatrix::identity(n, n) * lambda;
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -chol.solve(&grad);
            let mut trial = &u + &step;
            project(&mut trial, &bounds);
            let actual = &trial - &u;
            let r_new = match problem.residuals_at(&trial) {
                Ok(r) => r,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let cost_new = r_new.norm_squared();
            if cost_new < cost {
                let rel_step = actual.norm() / (u.norm() + CONVERGENCE_TOL);
                let rel_cost = (cost - cost_new) / cost;
                u = trial;
                r = r_new;
                cost = cost_new;
                lambda = (lambda / 10.0).max(1e-300);
                accepted = true;
                converged = (rel_step < CONVERGENCE_TOL && rel_cost < CONVERGENCE_TOL) || cost == 0.0;
                break;
            }
            if actual.norm() <= CONVERGENCE_TOL * (u.norm() + CONVERGENCE_TOL) {
                // No downhill step left at this resolution.
                converged = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            converged = converged || lambda >= 1e20;
            break;
        }
        if !converged {
            j = problem.jacobian(&u, &r)?;
        }
    }

    let model = problem.model_at(&u);
    j = problem.jacobian(&u, &r)?;
    let m = r.len();
    let dof = m.saturating_sub(n).max(1) as f64;
    let s2 = cost / dof;
    let inv = (j.transpose() * &j).try_inverse();
    let singular = inv.is_none();
    let cov_u = inv.unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN)) * s2;
    let dx: Vec<f64> = problem
        .free
        .iter()
        .enumerate()
        .map(|(k, p)| p.transform().derivative(u[k]))
        .collect();
    let covariance: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..n).map(|b| dx[a] * cov_u[(a, b)] * dx[b]).collect())
        .collect();
    let std_errors = (0..n).map(|k| covariance[k][k].sqrt()).collect();
    Ok(FitResult {
        free: problem.free.clone(),
        best: problem.free.iter().map(|&p| model.get(p)).collect(),
        std_errors,
        covariance,
        residual_norm: cost.sqrt(),
        initial_residual_norm,
        iterations,
        converged,
        singular,
        model,
    })
}

/// Runs `starts` fits in parallel: the initial point plus `starts − 1`
/// points drawn uniformly (in the fit coordinates) within the bounds. The
/// smallest residual wins; ties go to the lexicographically smallest
/// parameter vector.
pub fn fit_multistart(problem: &FitProblem, starts: usize, seed: u64) -> Result<FitResult> {
    problem.validate()?;
    let bounds = problem.internal_bounds();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut points = vec![problem.internal(&problem.initial)];
    for _ in 1..starts.max(1) {
        points.push(DVector::from_iterator(
            bounds.len(),
            bounds.iter().map(|&(lo, hi)| {
                let (lo, hi) = (lo.max(-50.0), hi.min(50.0));
                rng.random_range(lo..=hi)
            }),
        ));
    }
    let results: Vec<Result<FitResult>> = points
        .into_par_iter()
        .map(|u| levenberg_marquardt(problem, u))
        .collect();
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(r) => {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        r.residual_norm < b.residual_norm
                            || (r.residual_norm == b.residual_norm
                                && r.best.partial_cmp(&b.best) == Some(std::cmp::Ordering::Less))
                    }
                };
                if better {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| invalid("starts", "no start succeeded")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::linspace;

    fn truth() -> FitModel {
        FitModel::new(SystemParams::default())
    }

    fn clean(grid: &[f64]) -> Vec<DataPoint> {
        synthetic_spectrum(&truth(), grid, Noise::Absolute(0.0), 0).unwrap()
    }

    #[test]
    fn transforms_roundtrip() {
        for t in [Transform::Identity, Transform::Log, Transform::Logit] {
            let x = 0.37;
            assert!((t.to_external(t.to_internal(x)) - x).abs() < 1e-14);
            let u = t.to_internal(x);
            let fd = (t.to_external(u + 1e-6) - t.to_external(u - 1e-6)) / 2e-6;
            assert!((fd - t.derivative(u)).abs() < 1e-8);
        }
    }

    #[test]
    fn fixed_point_at_truth() {
        let problem = FitProblem::new(
            clean(&linspace(-150.0, 150.0, 61)),
            truth(),
            vec![FitParam::G, FitParam::Gamma],
        );
        let r = fit_reflectivity(&problem).unwrap();
        assert!(r.residual_norm < 1e-12);
        assert!(r.iterations <= 1);
        assert!(r.converged);
    }

    #[test]
    fn recovers_perturbed_start() {
        let mut start = truth();
        start.params.g = 17.0;
        start.params.gamma = 0.6;
        let problem = FitProblem::new(
            clean(&linspace(-150.0, 150.0, 121)),
            start,
            vec![FitParam::G, FitParam::Gamma],
        );
        let r = fit_reflectivity(&problem).unwrap();
        assert!(r.converged);
        assert!((r.value(FitParam::G).unwrap() - 21.0).abs() < 1e-5);
        assert!((r.value(FitParam::Gamma).unwrap() - 0.3).abs() < 1e-5);
        assert!(r.residual_norm <= r.initial_residual_norm);
    }

    #[test]
    fn forward_jacobian_matches_central() {
        let problem = FitProblem::new(
            clean(&linspace(-150.0, 150.0, 61)),
            truth(),
            vec![FitParam::G, FitParam::Gamma, FitParam::KappaTot, FitParam::EtaOut],
        );
        let u = problem.internal(&problem.initial);
        let r = problem.residuals_at(&u).unwrap();
        let j = problem.jacobian(&u, &r).unwrap();
        for k in 0..u.len() {
            let h = 1e-5 * u[k].abs().max(1.0);
            let (mut up, mut dn) = (u.clone(), u.clone());
            up[k] += h;
            dn[k] -= h;
            let c = (problem.residuals_at(&up).unwrap() - problem.residuals_at(&dn).unwrap()) / (2.0 * h);
            let scale = c.amax();
            assert!((j.column(k) - &c).amax() <= 1e-4 * scale, "column {k}");
        }
    }

    #[test]
    fn residual_properties() {
        let mut data = synthetic_spectrum(&truth(), &linspace(-100.0, 100.0, 21), Noise::Relative(0.01), 3).unwrap();
        let mut model = truth();
        model.params.g = 19.0;
        let n0 = residuals(&model, &data).unwrap().norm_squared();
        data.reverse();
        let n1 = residuals(&model, &data).unwrap().norm_squared();
        assert!((n0 - n1).abs() < 1e-14 * n0);
        for d in &mut data {
            d.weight *= 2.0;
        }
        let n2 = residuals(&model, &data).unwrap().norm_squared();
        assert!((n2 - 2.0 * n0).abs() < 1e-12 * n0);
    }

    #[test]
    fn validation() {
        let data = clean(&linspace(-10.0, 10.0, 3));
        let p = FitProblem::new(data, truth(), vec![FitParam::G, FitParam::Gamma]);
        assert!(p.validate().is_err());
        let mut p = FitProblem::new(clean(&linspace(-10.0, 10.0, 10)), truth(), vec![FitParam::G]);
        p.bounds[0] = Some((30.0, 40.0));
        assert!(p.validate().is_err());
        assert!(FitParam::from_name("nope").is_err());
        assert_eq!(FitParam::from_name("mode_splitting").unwrap(), FitParam::ModeSplitting);
    }

    #[test]
    fn multistart_is_deterministic() {
        let data = synthetic_spectrum(&truth(), &linspace(-150.0, 150.0, 61), Noise::Absolute(0.01), 9).unwrap();
        let problem = FitProblem::new(data, truth(), vec![FitParam::G, FitParam::Gamma]);
        let a = fit_multistart(&problem, 4, 42).unwrap();
        let b = fit_multistart(&problem, 4, 42).unwrap();
        assert_eq!(a, b);
        let single = fit_reflectivity(&problem).unwrap();
        assert!(a.residual_norm <= single.residual_norm + 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let data = synthetic_spectrum(&truth(), &[-5.0, 0.0, 5.0], Noise::Relative(0.01), 1).unwrap();
        let mut buf = Vec::new();
        write_data_csv(&data, &mut buf).unwrap();
        assert_eq!(read_data_csv(buf.as_slice()).unwrap(), data);
        let two = read_data_csv("detuning_ueV,reflectivity\n1.5,0.3\n".as_bytes()).unwrap();
        assert_eq!(two[0].weight, 1.0);
        assert!(read_data_csv("x,reflectivity\n1,2\n".as_bytes()).is_err());
    }
}
