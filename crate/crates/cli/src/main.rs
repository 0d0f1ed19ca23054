//! `qdcav`: runs one simulation scenario and writes CSV or JSON results.
//!
//! Exit status: 0 on success, 1 when the scenario failed or some scan points
//! could not be computed, 2 for usage and configuration errors.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qdcav::experiments::{render, run, Format, PiObjective, Scenario, ScenarioConfig};
use qdcav::Error;

#[derive(Parser, Debug)]
#[command(name = "qdcav", version, about = "Quantum dot in a bimodal micropillar cavity: scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Weak-probe reflectivity spectrum
    #[command(name = "reflectivity")]
    Reflectivity(Common),
    /// One pulsed trajectory: pulse, populations, cavity occupations
    #[command(name = "pulse_dynamics", alias = "pulse-dynamics")]
    PulseDynamics(Common),
    /// N_H and flip probability over a photon-number grid
    #[command(name = "rabi_scan", alias = "rabi-scan")]
    RabiScan(Common),
    /// Photon number of the π-pulse
    #[command(name = "pi_pulse", alias = "pi-pulse")]
    PiPulse(Common),
    /// Single-photon Fock input against a coherent pulse with ⟨n⟩ = 1
    #[command(name = "fock_compare", alias = "fock-compare")]
    FockCompare(Common),
    /// π-pulse photon number versus pulse length for several fine-structure splittings
    #[command(name = "fss_sweep", alias = "fss-sweep")]
    FssSweep(Common),
    /// Fit the reflectivity model to a spectrum
    #[command(name = "fit")]
    Fit(FitArgs),
    /// Run whatever scenario the config file names
    #[command(name = "run")]
    Run(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON scenario config
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; results go to stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Worker threads for scans
    #[arg(long)]
    workers: Option<usize>,
    /// Pulse duration τ (ps)
    #[arg(long)]
    tau: Option<f64>,
    /// Mean photon number (pulse_dynamics)
    #[arg(long = "n-mean")]
    n_mean: Option<f64>,
    /// π-pulse objective
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// Skip the truncation convergence check
    #[arg(long)]
    no_convergence_check: bool,
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Measured spectrum: CSV with detuning_ueV, reflectivity[, weight]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed for multi-start fitting
    #[arg(long)]
    seed: Option<u64>,
    /// Number of starting points
    #[arg(long)]
    starts: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ObjectiveArg {
    #[value(name = "flip_at_reference_time")]
    FlipAtReferenceTime,
    #[value(name = "flip_max_after_pulse")]
    FlipMaxAfterPulse,
    #[value(name = "n_h")]
    CollectedPhotons,
}

fn build_config(scenario: Option<Scenario>, c: &Common) -> Result<ScenarioConfig, Error> {
    let mut config = match &c.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = scenario {
        if c.config.is_some() && config.scenario != s {
            log::warn!(
                "config names scenario '{}'; running '{}' as requested",
                config.scenario.name(),
                s.name()
            );
        }
        config.scenario = s;
    } else if c.config.is_none() {
        return Err(Error::Config("`run` needs --config".into()));
    }
    if let Some(out) = &c.out {
        config.output.path = Some(out.clone());
    }
    if let Some(f) = c.format {
        config.output.format = match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        };
    }
    if let Some(w) = c.workers {
        config.workers = Some(w);
    }
    if let Some(t) = c.tau {
        config.pulse.tau = t;
    }
    if let Some(n) = c.n_mean {
        config.n_mean = n;
    }
    if let Some(o) = c.objective {
        config.objective = match o {
            ObjectiveArg::FlipAtReferenceTime => PiObjective::FlipAtReferenceTime,
            ObjectiveArg::FlipMaxAfterPulse => PiObjective::FlipMaxAfterPulse,
            ObjectiveArg::CollectedPhotons => PiObjective::CollectedPhotons,
        };
    }
    if c.no_convergence_check {
        config.check_convergence = false;
    }
    config.validate()?;
    Ok(config)
}

fn config_for(cmd: &Command) -> Result<ScenarioConfig, Error> {
    match cmd {
        Command::Reflectivity(c) => build_config(Some(Scenario::Reflectivity), c),
        Command::PulseDynamics(c) => build_config(Some(Scenario::PulseDynamics), c),
        Command::RabiScan(c) => build_config(Some(Scenario::RabiScan), c),
        Command::PiPulse(c) => build_config(Some(Scenario::PiPulse), c),
        Command::FockCompare(c) => build_config(Some(Scenario::FockCompare), c),
        Command::FssSweep(c) => build_config(Some(Scenario::FssSweep), c),
        Command::Run(c) => build_config(None, c),
        Command::Fit(f) => {
            let mut config = build_config(Some(Scenario::Fit), &f.common)?;
            if let Some(d) = &f.data {
                config.fit.data = Some(d.clone());
            }
            if let Some(s) = f.seed {
                config.fit.seed = s;
            }
            if let Some(n) = f.starts {
                config.fit.starts = n;
            }
            Ok(config)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let config = match config_for(&cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = match run(&config) {
        Ok(o) => o,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if outcome.written.is_empty() {
        match render(&outcome.result, config.output.format) {
            Ok((main, _)) => {
                let mut out = std::io::stdout().lock();
                if out.write_all(&main).and_then(|_| out.flush()).is_err() {
                    return ExitCode::from(1);
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
    } else {
        for p in &outcome.written {
            eprintln!("wrote {}", p.display());
        }
    }
    for (name, value) in &outcome.result.scalars.0 {
        eprintln!("{name} = {value}");
    }
    if outcome.partial() {
        for f in &outcome.result.metadata.failures {
            eprintln!("point {} failed: {}", f.index, f.message);
        }
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
