//! Scenario runner: parameter scans, π-pulse searches and the file outputs
//! behind the command-line front end.
//!
//! Every scenario is described by a [`ScenarioConfig`] and produces a
//! [`ScanResult`]. Scan points are evaluated on a bounded rayon pool and
//! assembled by index, so results do not depend on the worker count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::dynamics::{
    collected_photons_h, evolve_coherent, flip_probability, reference_time, EvolveOptions,
    FlipMode, Frame, Trajectory,
};
use crate::error::{invalid, Error, Result};
use crate::fit::{
    fit_multistart, read_data_csv, synthetic_spectrum, FitModel, FitParam, FitProblem, Noise,
};
use crate::fock::{evolve_fock, Wavepacket};
use crate::model::{PulseShape, SystemParams};
use crate::ode::Tolerances;
use crate::spectra::{linear_response_reflectivity, linspace, reflectivity_spectrum, CW_TRUNCATION, DEFAULT_PROBE};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Relative change allowed when the truncation is raised.
pub const CONVERGENCE_TOL: f64 = 5e-3;
const MAX_ESCALATIONS: usize = 3;
/// No π-pulse is searched for beyond this photon number.
pub const PI_SEARCH_LIMIT: f64 = 100.0;
const PI_SEARCH_START: f64 = 0.25;
const PI_SEARCH_FACTOR: f64 = 1.15;
/// Golden-section refinement stops once the bracket is this fraction of n.
const PI_RELATIVE_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Reflectivity,
    PulseDynamics,
    RabiScan,
    PiPulse,
    FockCompare,
    FssSweep,
    Fit,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Reflectivity,
        Scenario::PulseDynamics,
        Scenario::RabiScan,
        Scenario::PiPulse,
        Scenario::FockCompare,
        Scenario::FssSweep,
        Scenario::Fit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Reflectivity => "reflectivity",
            Scenario::PulseDynamics => "pulse_dynamics",
            Scenario::RabiScan => "rabi_scan",
            Scenario::PiPulse => "pi_pulse",
            Scenario::FockCompare => "fock_compare",
            Scenario::FssSweep => "fss_sweep",
            Scenario::Fit => "fit",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{name}'")))
    }
}

/// Quantity whose first maximum over ⟨n⟩ defines the π-pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiObjective {
    /// P_H + P_V at the time where the ⟨n⟩ = 1 run peaks.
    #[default]
    FlipAtReferenceTime,
    /// max over t ≥ t0 of P_H + P_V.
    FlipMaxAfterPulse,
    /// Collected H photons N_H.
    CollectedPhotons,
}

impl PiObjective {
    /// Flip definition reported next to this objective.
    pub fn flip_mode(self) -> FlipMode {
        match self {
            PiObjective::FlipMaxAfterPulse => FlipMode::MaxAfterPulse,
            _ => FlipMode::AtReferenceTime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// A grid given either as an explicit list or as `{start, stop, count, log}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Range {
        start: f64,
        stop: f64,
        count: usize,
        #[serde(default)]
        log: bool,
    },
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            GridSpec::List(v) => v.clone(),
            GridSpec::Range {
                start,
                stop,
                count,
                log,
            } => {
                if *log {
                    if !(*start > 0.0 && *stop > 0.0) {
                        return Err(Error::Config("log grid needs positive bounds".into()));
                    }
                    let mut v: Vec<f64> = linspace(start.ln(), stop.ln(), *count)
                        .into_iter()
                        .map(f64::exp)
                        .collect();
                    // exp(ln x) is not always x
                    if let Some(first) = v.first_mut() {
                        *first = *start;
                    }
                    if *count > 1 {
                        v[*count - 1] = *stop;
                    }
                    v
                } else {
                    linspace(*start, *stop, *count)
                }
            }
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("grids must be non-empty and finite".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSpec {
    pub n_mean: Option<GridSpec>,
    pub tau: Option<GridSpec>,
    pub fss: Option<GridSpec>,
    pub detuning: Option<GridSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    pub format: Format,
}

/// Synthetic data for the fit scenario when no data file is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub noise: Noise,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            noise: Noise::Relative(0.01),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    /// CSV with `detuning_ueV, reflectivity[, weight]`.
    pub data: Option<PathBuf>,
    pub free: Vec<FitParam>,
    /// Per-parameter (lo, hi); missing entries use the defaults.
    pub bounds: Vec<(FitParam, f64, f64)>,
    pub starts: usize,
    /// Seed for the multi-start points.
    pub seed: u64,
    /// Starting values; the physical parameters start from `params`.
    pub amplitude_scale: f64,
    pub baseline: f64,
    pub synthetic: SyntheticSpec,
}

impl Default for FitSpec {
    fn default() -> Self {
        Self {
            data: None,
            free: vec![FitParam::G, FitParam::Gamma],
            bounds: Vec::new(),
            starts: 1,
            seed: 0,
            amplitude_scale: 1.0,
            baseline: 0.0,
            synthetic: SyntheticSpec::default(),
        }
    }
}

/// Complete description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub params: SystemParams,
    pub pulse: PulseShape,
    /// Photon number for `pulse_dynamics`.
    pub n_mean: f64,
    pub scan: ScanSpec,
    pub output: OutputSpec,
    pub tolerances: Tolerances,
    /// Worker threads; `None` uses one per core. Not written to metadata:
    /// results do not depend on it.
    #[serde(skip_serializing)]
    pub workers: Option<usize>,
    pub frame: Frame,
    pub objective: PiObjective,
    /// Simulation window (ps); `None` uses [`scan_window`].
    pub window: Option<(f64, f64)>,
    pub snapshots: usize,
    /// Raise the truncation until results move by less than 0.5 %.
    pub check_convergence: bool,
    /// cw probe ħΩ (μeV).
    pub probe: f64,
    /// Truncation used for cw spectra.
    pub cw_truncation: (usize, usize),
    pub fit: FitSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::RabiScan,
            params: SystemParams::default(),
            pulse: PulseShape::default(),
            n_mean: 3.8,
            scan: ScanSpec::default(),
            output: OutputSpec::default(),
            tolerances: Tolerances::default(),
            workers: None,
            frame: Frame::Displaced,
            objective: PiObjective::default(),
            window: None,
            snapshots: crate::dynamics::DEFAULT_SNAPSHOTS,
            check_convergence: true,
            probe: DEFAULT_PROBE,
            cw_truncation: CW_TRUNCATION,
            fit: FitSpec::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            ..Self::default()
        }
    }

    /// Parses a JSON document; errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn options(&self) -> ScanOptions {
        ScanOptions {
            tolerances: self.tolerances,
            frame: self.frame,
            window: self.window,
            snapshots: self.snapshots,
            check_convergence: self.check_convergence,
        }
    }

    pub fn n_mean_grid(&self) -> Result<Vec<f64>> {
        grid_or(&self.scan.n_mean, default_n_mean_grid)
    }

    pub fn tau_grid(&self) -> Result<Vec<f64>> {
        grid_or(&self.scan.tau, || {
            GridSpec::Range {
                start: 5.0,
                stop: 150.0,
                count: 20,
                log: true,
            }
            .values()
            .expect("valid default grid")
        })
    }

    pub fn fss_grid(&self) -> Result<Vec<f64>> {
        grid_or(&self.scan.fss, || vec![5.0, 15.0, 30.0])
    }

    pub fn detuning_grid(&self) -> Result<Vec<f64>> {
        grid_or(&self.scan.detuning, || linspace(-300.0, 300.0, 301))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.pulse.validate()?;
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(self.n_mean >= 0.0 && self.n_mean.is_finite()) {
            return Err(Error::Config("n_mean must be >= 0".into()));
        }
        if self.snapshots < 2 {
            return Err(Error::Config("snapshots must be at least 2".into()));
        }
        match self.scenario {
            Scenario::RabiScan => {
                self.n_mean_grid()?;
            }
            Scenario::FssSweep => {
                if self.fss_grid()?.iter().chain(&self.tau_grid()?).any(|&x| x <= 0.0) {
                    return Err(Error::Config("fss and tau grids must be positive".into()));
                }
            }
            Scenario::Reflectivity | Scenario::Fit => {
                self.detuning_grid()?;
            }
            _ => {}
        }
        Ok(())
    }
}

fn grid_or(spec: &Option<GridSpec>, default: impl FnOnce() -> Vec<f64>) -> Result<Vec<f64>> {
    match spec {
        Some(g) => g.values(),
        None => Ok(default()),
    }
}

/// 60 log-spaced photon numbers in [0.2, 40].
pub fn default_n_mean_grid() -> Vec<f64> {
    GridSpec::Range {
        start: 0.2,
        stop: 40.0,
        count: 60,
        log: true,
    }
    .values()
    .expect("valid default grid")
}

/// `[t0 − 3τ, t0 + max(6τ, 1200 ps)]`: long enough for the H emission to die
/// out, so that N_H is not truncated.
pub fn scan_window(pulse: &PulseShape) -> (f64, f64) {
    (pulse.t0 - 3.0 * pulse.tau, pulse.t0 + (6.0 * pulse.tau).max(1200.0))
}

/// Settings shared by the time-domain scenarios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub tolerances: Tolerances,
    pub frame: Frame,
    pub window: Option<(f64, f64)>,
    pub snapshots: usize,
    pub check_convergence: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScenarioConfig::default().options()
    }
}

impl ScanOptions {
    pub fn evolve_options(&self, pulse: &PulseShape) -> EvolveOptions {
        EvolveOptions {
            tolerances: self.tolerances,
            snapshots: self.snapshots,
            window: Some(self.window.unwrap_or_else(|| scan_window(pulse))),
            frame: self.frame,
            initial: None,
            extra_times: Vec::new(),
        }
    }
}

fn escalate(p: SystemParams) -> SystemParams {
    p.with_truncation(p.n_max_v + 2, p.n_max_h + 1)
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= CONVERGENCE_TOL * y.abs().max(1e-9))
}

/// Truncation-checked evaluation: `f` is rerun with (n_max_v + 2, n_max_h + 1)
/// until consecutive results agree to [`CONVERGENCE_TOL`]. Returns the values
/// at the lowest truncation that passed and whether any did.
fn with_convergence<F>(params: &SystemParams, check: bool, f: F) -> Result<(Vec<f64>, SystemParams, bool)>
where
    F: Fn(&SystemParams) -> Result<Vec<f64>>,
{
    let mut p = *params;
    let mut cur = f(&p)?;
    if !check {
        return Ok((cur, p, true));
    }
    for _ in 0..MAX_ESCALATIONS {
        let q = escalate(p);
        let next = f(&q)?;
        if close(&cur, &next) {
            return Ok((cur, p, true));
        }
        log::info!(
            "truncation ({}, {}) not converged; raising to ({}, {})",
            p.n_max_v,
            p.n_max_h,
            q.n_max_v,
            q.n_max_h
        );
        p = q;
        cur = next;
    }
    log::warn!("truncation not converged at ({}, {})", p.n_max_v, p.n_max_h);
    Ok((cur, p, false))
}

/// Named arrays serialized as a JSON object in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Columns(pub Vec<(String, Vec<f64>)>);

impl Columns {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    fn push(&mut self, name: &str, values: Vec<f64>) {
        self.0.push((name.to_string(), values));
    }
}

impl Serialize for Columns {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

/// Named scalars serialized as a JSON object in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scalars(pub Vec<(String, f64)>);

impl Scalars {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    fn push(&mut self, name: &str, value: f64) {
        self.0.push((name.to_string(), value));
    }
}

impl Serialize for Scalars {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

/// A scan point that could not be computed; its values are NaN.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointFailure {
    pub index: usize,
    pub message: String,
}

/// Truncation finally used at one scan point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointTruncation {
    pub n_max_v: usize,
    pub n_max_h: usize,
    pub converged: bool,
}

impl PointTruncation {
    fn of(p: &SystemParams, converged: bool) -> Self {
        Self {
            n_max_v: p.n_max_v,
            n_max_h: p.n_max_h,
            converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub version: String,
    pub config: ScenarioConfig,
    pub truncation: Vec<PointTruncation>,
    pub failures: Vec<PointFailure>,
    /// Unix seconds at creation; the only field that differs between reruns.
    pub timestamp: u64,
}

/// Output of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub scenario: Scenario,
    /// Grids. With two axes the values are stored row-major, first axis
    /// slowest.
    pub axes: Columns,
    pub values: Columns,
    pub scalars: Scalars,
    /// Fit report for the fit scenario.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<serde_json::Value>,
    pub metadata: Metadata,
}

impl ScanResult {
    fn new(config: &ScenarioConfig) -> Self {
        Self {
            scenario: config.scenario,
            axes: Columns::default(),
            values: Columns::default(),
            scalars: Scalars::default(),
            report: None,
            metadata: Metadata {
                version: ARTIFACT_VERSION.to_string(),
                config: config.clone(),
                truncation: Vec::new(),
                failures: Vec::new(),
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            },
        }
    }

    pub fn axis(&self, name: &str) -> Option<&[f64]> {
        self.axes.get(name)
    }

    pub fn value(&self, name: &str) -> Option<&[f64]> {
        self.values.get(name)
    }

    /// Writes axes and values as CSV: one row per point of the axes product.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<&str> = self
            .axes
            .0
            .iter()
            .chain(&self.values.0)
            .map(|(n, _)| n.as_str())
            .collect();
        w.write_record(&header)?;
        let shape: Vec<usize> = self.axes.0.iter().map(|(_, v)| v.len()).collect();
        let rows: usize = shape.iter().product();
        for row in 0..rows {
            let mut rec = Vec::with_capacity(header.len());
            let mut rem = row;
            let mut idx = vec![0; shape.len()];
            for k in (0..shape.len()).rev() {
                idx[k] = rem % shape[k];
                rem /= shape[k];
            }
            for (k, (_, v)) in self.axes.0.iter().enumerate() {
                rec.push(v[idx[k]].to_string());
            }
            for (_, v) in &self.values.0 {
                rec.push(v.get(row).map_or_else(String::new, |x| x.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// The JSON sidecar written next to a CSV: everything except the arrays.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "scenario": self.scenario,
            "scalars": self.scalars,
            "report": self.report,
            "metadata": self.metadata,
        })
    }
}

fn parallel_points<T, F>(count: usize, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// N_H and flip probability over a photon-number grid.
pub fn rabi_scan(config: &ScenarioConfig) -> Result<ScanResult> {
    let grid = config.n_mean_grid()?;
    let opts = config.options();
    let pulse = config.pulse;
    let eo = opts.evolve_options(&pulse);
    let t_ref = reference_time(&config.params, &pulse, &eo)?;
    let eo = EvolveOptions {
        extra_times: vec![t_ref],
        ..eo
    };
    let mode = config.objective.flip_mode();
    let points = parallel_points(grid.len(), |i| {
        with_convergence(&config.params, opts.check_convergence, |p| {
            let traj = evolve_coherent(p, &pulse, grid[i], &eo)?;
            Ok(vec![
                collected_photons_h(&traj).n_h,
                flip_probability(&traj, mode, Some(t_ref))?,
            ])
        })
    });
    let mut out = ScanResult::new(config);
    let (mut nh, mut flip) = (Vec::new(), Vec::new());
    for (i, r) in points.into_iter().enumerate() {
        match r {
            Ok((v, p, ok)) => {
                nh.push(v[0]);
                flip.push(v[1]);
                out.metadata.truncation.push(PointTruncation::of(&p, ok));
            }
            Err(e) => {
                nh.push(f64::NAN);
                flip.push(f64::NAN);
                out.metadata.truncation.push(PointTruncation::of(&config.params, false));
                out.metadata.failures.push(PointFailure {
                    index: i,
                    message: e.to_string(),
                });
            }
        }
    }
    if let Some(k) = first_local_max(&nh) {
        out.scalars.push("first_max_n_mean_N_H", grid[k]);
    }
    if let Some(k) = first_local_max(&flip) {
        out.scalars.push("first_max_n_mean_flip", grid[k]);
    }
    out.scalars.push("t_ref_ps", t_ref);
    out.axes.push("n_mean", grid);
    out.values.push("N_H", nh);
    out.values.push("flip_prob", flip);
    Ok(out)
}

/// Index of the first sample larger than both neighbours (finite values only).
pub fn first_local_max(v: &[f64]) -> Option<usize> {
    (1..v.len().saturating_sub(1)).find(|&i| v[i].is_finite() && v[i] > v[i - 1] && v[i] >= v[i + 1])
}

/// Result of a π-pulse search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PiPulse {
    pub n_pi: f64,
    pub objective: PiObjective,
    /// Objective value at n_pi.
    pub value: f64,
    /// Flip probability at n_pi in the objective's definition.
    pub flip_prob: f64,
    pub n_h: f64,
    pub t_ref: f64,
    pub n_max_v: usize,
    pub n_max_h: usize,
    pub converged: bool,
    pub evaluations: usize,
}

struct PiEval {
    value: f64,
    flip: f64,
    n_h: f64,
}

fn evaluate_pi(
    params: &SystemParams,
    pulse: &PulseShape,
    n: f64,
    objective: PiObjective,
    t_ref: f64,
    eo: &EvolveOptions,
) -> Result<PiEval> {
    let traj: Trajectory = evolve_coherent(params, pulse, n, eo)?;
    let flip = flip_probability(&traj, objective.flip_mode(), Some(t_ref))?;
    let n_h = collected_photons_h(&traj).n_h;
    let value = match objective {
        PiObjective::CollectedPhotons => n_h,
        _ => flip,
    };
    Ok(PiEval { value, flip, n_h })
}

fn search_pi(
    params: &SystemParams,
    pulse: &PulseShape,
    objective: PiObjective,
    opts: &ScanOptions,
) -> Result<PiPulse> {
    let eo = opts.evolve_options(pulse);
    let t_ref = reference_time(params, pulse, &eo)?;
    let eo = EvolveOptions {
        extra_times: vec![t_ref],
        ..eo
    };
    let mut evaluations = 1;
    let mut eval = |n: f64| {
        evaluations += 1;
        evaluate_pi(params, pulse, n, objective, t_ref, &eo)
    };

    // Geometric scan up to the first decrease.
    let mut ns = vec![PI_SEARCH_START];
    let mut vals = vec![eval(PI_SEARCH_START)?.value];
    loop {
        let n = ns[ns.len() - 1] * PI_SEARCH_FACTOR;
        if n > PI_SEARCH_LIMIT {
            return Err(Error::PiPulseNotFound(PI_SEARCH_LIMIT));
        }
        let v = eval(n)?.value;
        ns.push(n);
        vals.push(v);
        let k = vals.len() - 1;
        if k >= 1 && v < vals[k - 1] {
            break;
        }
    }
    let k = ns.len() - 2;
    let (mut a, mut b) = (if k == 0 { ns[0] / PI_SEARCH_FACTOR } else { ns[k - 1] }, ns[k + 1]);
    let (mut best_n, mut best_v) = (ns[k], vals[k]);

    // Golden-section refinement of the bracket.
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = eval(c)?.value;
    let mut fd = eval(d)?.value;
    for (n, v) in [(c, fc), (d, fd)] {
        if v > best_v {
            best_n = n;
            best_v = v;
        }
    }
    while b - a > PI_RELATIVE_TOL * best_n {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = eval(c)?.value;
            if fc > best_v {
                best_n = c;
                best_v = fc;
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = eval(d)?.value;
            if fd > best_v {
                best_n = d;
                best_v = fd;
            }
        }
    }
    let at = eval(best_n)?;
    Ok(PiPulse {
        n_pi: best_n,
        objective,
        value: at.value,
        flip_prob: at.flip,
        n_h: at.n_h,
        t_ref,
        n_max_v: params.n_max_v,
        n_max_h: params.n_max_h,
        converged: true,
        evaluations,
    })
}

/// Photon number of the first maximum of `objective` over ⟨n⟩, refined by
/// golden-section search to 1 %. With the convergence check on, the search
/// is repeated at raised truncation until n_pi and the flip probability
/// agree to 0.5 %.
pub fn find_pi_pulse(
    params: &SystemParams,
    pulse: &PulseShape,
    objective: PiObjective,
    opts: &ScanOptions,
) -> Result<PiPulse> {
    pulse.validate()?;
    let mut p = *params;
    let mut cur = search_pi(&p, pulse, objective, opts)?;
    if !opts.check_convergence {
        return Ok(cur);
    }
    for _ in 0..MAX_ESCALATIONS {
        // Cheap check first: the same photon number at raised truncation.
        let q = escalate(p);
        let eo = EvolveOptions {
            extra_times: vec![cur.t_ref],
            ..opts.evolve_options(pulse)
        };
        let at = evaluate_pi(&q, pulse, cur.n_pi, objective, cur.t_ref, &eo)?;
        if close(&[cur.value, cur.flip_prob], &[at.value, at.flip]) {
            return Ok(cur);
        }
        let next = search_pi(&q, pulse, objective, opts)?;
        let done = close(&[cur.n_pi, cur.flip_prob], &[next.n_pi, next.flip_prob]);
        p = q;
        cur = next;
        if done {
            return Ok(cur);
        }
    }
    cur.converged = false;
    log::warn!("π-pulse search not converged in truncation at ({}, {})", p.n_max_v, p.n_max_h);
    Ok(cur)
}

fn pi_pulse_scenario(config: &ScenarioConfig) -> Result<ScanResult> {
    let taus = match &config.scan.tau {
        Some(g) => g.values()?,
        None => vec![config.pulse.tau],
    };
    let opts = config.options();
    let points = parallel_points(taus.len(), |i| {
        let pulse = PulseShape {
            tau: taus[i],
            ..config.pulse
        };
        find_pi_pulse(&config.params, &pulse, config.objective, &opts)
    });
    let mut out = ScanResult::new(config);
    let mut cols: [Vec<f64>; 3] = Default::default();
    for (i, r) in points.into_iter().enumerate() {
        match r {
            Ok(pi) => {
                cols[0].push(pi.n_pi);
                cols[1].push(pi.flip_prob);
                cols[2].push(pi.n_h);
                out.metadata.truncation.push(PointTruncation {
                    n_max_v: pi.n_max_v,
                    n_max_h: pi.n_max_h,
                    converged: pi.converged,
                });
            }
            Err(e) => {
                cols.iter_mut().for_each(|c| c.push(f64::NAN));
                out.metadata.truncation.push(PointTruncation::of(&config.params, false));
                out.metadata.failures.push(PointFailure {
                    index: i,
                    message: e.to_string(),
                });
            }
        }
    }
    out.axes.push("tau", taus);
    let [n_pi, flip, n_h] = cols;
    out.values.push("n_pi", n_pi);
    out.values.push("flip_prob", flip);
    out.values.push("N_H", n_h);
    Ok(out)
}

/// n_pi(τ) for each fine-structure splitting.
pub fn fss_sweep(config: &ScenarioConfig) -> Result<ScanResult> {
    let fss = config.fss_grid()?;
    let taus = config.tau_grid()?;
    let opts = config.options();
    let nt = taus.len();
    let points = parallel_points(fss.len() * nt, |i| {
        let params = SystemParams {
            delta_fss: fss[i / nt],
            ..config.params
        };
        let pulse = PulseShape {
            tau: taus[i % nt],
            ..config.pulse
        };
        find_pi_pulse(&params, &pulse, config.objective, &opts)
    });
    let mut out = ScanResult::new(config);
    let (mut n_pi, mut flip) = (Vec::new(), Vec::new());
    for (i, r) in points.into_iter().enumerate() {
        match r {
            Ok(pi) => {
                n_pi.push(pi.n_pi);
                flip.push(pi.flip_prob);
                out.metadata.truncation.push(PointTruncation {
                    n_max_v: pi.n_max_v,
                    n_max_h: pi.n_max_h,
                    converged: pi.converged,
                });
            }
            Err(e) => {
                n_pi.push(f64::NAN);
                flip.push(f64::NAN);
                out.metadata.truncation.push(PointTruncation::of(&config.params, false));
                out.metadata.failures.push(PointFailure {
                    index: i,
                    message: e.to_string(),
                });
            }
        }
    }
    for (k, &d) in fss.iter().enumerate() {
        let curve = &n_pi[k * nt..(k + 1) * nt];
        if let Some((j, &m)) = curve
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))
        {
            out.scalars.push(&format!("min_n_pi_fss_{d}"), m);
            out.scalars.push(&format!("argmin_tau_fss_{d}"), taus[j]);
        }
    }
    out.axes.push("delta_fss", fss);
    out.axes.push("tau", taus);
    out.values.push("n_pi", n_pi);
    out.values.push("flip_prob", flip);
    Ok(out)
}

/// Exciton population for a single-photon Fock input and for a coherent
/// pulse with ⟨n⟩ = 1 of the same shape.
pub fn fock_compare(config: &ScenarioConfig) -> Result<ScanResult> {
    let pulse = config.pulse;
    let opts = config.options();
    let eo = opts.evolve_options(&pulse);
    let run = |p: &SystemParams| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let fock = evolve_fock(p, &Wavepacket::new(pulse), &eo)?;
        let coh = evolve_coherent(p, &pulse, 1.0, &eo)?;
        Ok((fock.times.clone(), fock.pulse_samples.clone(), fock.exciton_population(), coh.exciton_population()))
    };
    let peak = |t: &[f64], v: &[f64]| {
        t.iter()
            .zip(v)
            .filter(|(t, _)| **t >= pulse.t0)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (_, p, ok) = with_convergence(&config.params, opts.check_convergence, |p| {
        let (t, _, f, c) = run(p)?;
        Ok(vec![peak(&t, &f), peak(&t, &c)])
    })?;
    let (times, xi, fock, coh) = run(&p)?;
    let (pf, pc) = (peak(&times, &fock), peak(&times, &coh));
    let mut out = ScanResult::new(config);
    out.metadata.truncation.push(PointTruncation::of(&p, ok));
    out.scalars.push("fock_peak", pf);
    out.scalars.push("coherent_peak", pc);
    out.scalars.push("ratio", pf / pc);
    out.axes.push("t_ps", times);
    out.values.push("xi", xi);
    out.values.push("P_exc_fock", fock);
    out.values.push("P_exc_coherent_ref", coh);
    Ok(out)
}

/// One trajectory with the pulse, populations and cavity occupations.
pub fn pulse_dynamics(config: &ScenarioConfig) -> Result<ScanResult> {
    let pulse = config.pulse;
    let eo = EvolveOptions {
        window: Some(config.window.unwrap_or_else(|| pulse.default_window())),
        ..config.options().evolve_options(&pulse)
    };
    let traj = evolve_coherent(&config.params, &pulse, config.n_mean, &eo)?;
    let nh = traj.photons_h();
    let collected = collected_photons_h(&traj);
    let peak_h = crate::dynamics::argmax_after(&traj.times, &nh, f64::NEG_INFINITY).map(|i| traj.times[i]);
    let delay = peak_h.map(|t| t - pulse.t0).unwrap_or(f64::NAN);
    if config.n_mean > 0.0 && !(delay > 0.0) {
        log::warn!("H emission peak at {delay} ps relative to the pulse peak is not delayed");
    }
    let mut out = ScanResult::new(config);
    out.metadata.truncation.push(PointTruncation::of(&config.params, true));
    out.scalars.push("n_mean", config.n_mean);
    out.scalars.push("N_H", collected.n_h);
    out.scalars.push("flip_prob_max_after_pulse", flip_probability(&traj, FlipMode::MaxAfterPulse, None)?);
    out.scalars.push("emission_delay_ps", delay);
    out.values.push("xi", traj.pulse_samples.clone());
    out.values.push("P_V", traj.population_v());
    out.values.push("P_H", traj.population_h());
    out.values.push("n_cav_V", traj.photons_v());
    out.values.push("n_cav_H", nh);
    out.values.push("trace_err", traj.trace_errors());
    out.axes.push("t_ps", traj.times);
    Ok(out)
}

/// Master-equation reflectivity spectrum with the linear-response curve alongside.
pub fn reflectivity_scenario(config: &ScenarioConfig) -> Result<ScanResult> {
    let grid = config.detuning_grid()?;
    let (nv, nh) = config.cw_truncation;
    let params = config.params.with_truncation(nv, nh);
    let curve = reflectivity_spectrum(&params, &grid, config.probe)?;
    let lr = grid
        .iter()
        .map(|&d| linear_response_reflectivity(&params, d))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ScanResult::new(config);
    out.metadata.truncation.push(PointTruncation::of(&params, true));
    let p = &config.params;
    out.scalars.push("cooperativity", crate::spectra::cooperativity(p.g, p.kappa_tot, p.gamma)?);
    out.axes.push("detuning_ueV", grid);
    out.values.push("reflectivity", curve.reflectivity);
    out.values.push("reflectivity_linear_response", lr);
    Ok(out)
}

/// Fits the reflectivity model to a data file, or to a synthetic spectrum
/// generated from `params` when no file is given.
pub fn fit_scenario(config: &ScenarioConfig) -> Result<ScanResult> {
    let spec = &config.fit;
    let truth = FitModel {
        params: config.params,
        amplitude_scale: spec.amplitude_scale,
        baseline: spec.baseline,
    };
    let data = match &spec.data {
        Some(path) => read_data_csv(fs::File::open(path)?)?,
        None => synthetic_spectrum(&truth, &config.detuning_grid()?, spec.synthetic.noise, spec.synthetic.seed)?,
    };
    let mut problem = FitProblem::new(data, truth, spec.free.clone());
    for &(which, lo, hi) in &spec.bounds {
        let k = spec
            .free
            .iter()
            .position(|&f| f == which)
            .ok_or_else(|| invalid(which.name(), "bounds given for a parameter that is not free"))?;
        problem.bounds[k] = Some((lo, hi));
    }
    let result = fit_multistart(&problem, spec.starts, spec.seed)?;
    let mut out = ScanResult::new(config);
    let model_curve = problem
        .data
        .iter()
        .map(|d| result.model.evaluate(d.detuning))
        .collect::<Result<Vec<_>>>()?;
    for (k, p) in result.free.iter().enumerate() {
        out.scalars.push(p.name(), result.best[k]);
        out.scalars.push(&format!("{}_std_error", p.name()), result.std_errors[k]);
    }
    out.scalars.push("residual_norm", result.residual_norm);
    if let Ok(c) = result.cooperativity() {
        out.scalars.push("cooperativity", c);
    }
    out.report = Some(serde_json::to_value(result.report())?);
    out.axes.push("detuning_ueV", problem.data.iter().map(|d| d.detuning).collect());
    out.values.push("reflectivity", problem.data.iter().map(|d| d.reflectivity).collect());
    out.values.push("model", model_curve);
    Ok(out)
}

/// Runs the configured scenario on a pool of `config.workers` threads.
pub fn execute(config: &ScenarioConfig) -> Result<ScanResult> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| match config.scenario {
        Scenario::Reflectivity => reflectivity_scenario(config),
        Scenario::PulseDynamics => pulse_dynamics(config),
        Scenario::RabiScan => rabi_scan(config),
        Scenario::PiPulse => pi_pulse_scenario(config),
        Scenario::FockCompare => fock_compare(config),
        Scenario::FssSweep => fss_sweep(config),
        Scenario::Fit => fit_scenario(config),
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Path of the JSON sidecar written next to a CSV output.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Files written by [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub result: ScanResult,
    pub written: Vec<PathBuf>,
}

impl RunOutcome {
    /// Some scan points failed; the completed ones were still written.
    pub fn partial(&self) -> bool {
        !self.result.metadata.failures.is_empty()
    }
}

/// Renders the result in the configured format: the CSV text plus its JSON
/// sidecar, or a single JSON document.
pub fn render(result: &ScanResult, format: Format) -> Result<(Vec<u8>, Option<Vec<u8>>)> {
    match format {
        Format::Csv => {
            let mut csv = Vec::new();
            result.write_csv(&mut csv)?;
            let meta = serde_json::to_vec_pretty(&result.sidecar())?;
            Ok((csv, Some(meta)))
        }
        Format::Json => Ok((serde_json::to_vec_pretty(result)?, None)),
    }
}

/// Executes the scenario and writes its outputs atomically. Without an
/// output path nothing is written.
pub fn run(config: &ScenarioConfig) -> Result<RunOutcome> {
    let result = execute(config)?;
    let mut written = Vec::new();
    if let Some(path) = &config.output.path {
        let (main, sidecar) = render(&result, config.output.format)?;
        write_atomic(path, &main)?;
        written.push(path.clone());
        if let Some(meta) = sidecar {
            let sp = sidecar_path(path);
            write_atomic(&sp, &meta)?;
            written.push(sp);
        }
    }
    Ok(RunOutcome { result, written })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs() {
        let g: GridSpec = serde_json::from_str("[1, 2.5]").unwrap();
        assert_eq!(g.values().unwrap(), vec![1.0, 2.5]);
        let g: GridSpec = serde_json::from_str(r#"{"start": 1, "stop": 100, "count": 3, "log": true}"#).unwrap();
        let v = g.values().unwrap();
        assert!((v[1] - 10.0).abs() < 1e-12 && v[2] == 100.0);
        assert!(GridSpec::List(vec![]).values().is_err());
        let d = default_n_mean_grid();
        assert_eq!(d.len(), 60);
        assert!((d[0] - 0.2).abs() < 1e-12 && d[59] == 40.0);
    }

    #[test]
    fn config_defaults_and_errors() {
        let c = ScenarioConfig::from_json(r#"{"scenario": "pi_pulse", "params": {"g": 20}}"#).unwrap();
        assert_eq!(c.scenario, Scenario::PiPulse);
        assert_eq!(c.params.g, 20.0);
        assert_eq!(c.params.kappa_tot, 120.0);
        let err = ScenarioConfig::from_json("{\n  \"scenario\": \"rabi_scan\",\n  \"bogus\": 1\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 3"), "{msg}");
        assert!(ScenarioConfig::from_json(r#"{"scenario": "nope"}"#).is_err());
        assert_eq!(Scenario::from_name("fss_sweep").unwrap(), Scenario::FssSweep);
    }

    #[test]
    fn local_maximum() {
        assert_eq!(first_local_max(&[0.0, 1.0, 2.0, 1.5, 3.0]), Some(2));
        assert_eq!(first_local_max(&[0.0, 1.0, 2.0]), None);
    }

    #[test]
    fn two_axis_csv_is_row_major() {
        let mut r = ScanResult::new(&ScenarioConfig::default());
        r.axes.push("a", vec![1.0, 2.0]);
        r.axes.push("b", vec![10.0, 20.0, 30.0]);
        r.values.push("v", (0..6).map(f64::from).collect());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "a,b,v");
        assert_eq!(lines[1], "1,10,0");
        assert_eq!(lines[4], "2,10,3");
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
        assert_eq!(sidecar_path(&p).file_name().unwrap(), "out.csv.meta.json");
    }
}
