//! Command implementations behind the `inimnet` binary.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use inimnet::tasks::{run_experiment, ExperimentRun, ExperimentSummary, TaskKind, TaskSpec};
use inimnet::train::{extrapolation_table, TrainConfig};
use inimnet::verify::{run_suite, Suite};
use inimnet::{Error, ParameterSharing};

use config::RunConfig;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    fn from_run(e: Error) -> Self {
        match e {
            Error::DivergedTraining(_) => Self::new(exit::FAILED, e.to_string()),
            other => Self::new(exit::USAGE, other.to_string()),
        }
    }
}

pub fn verify(suite: &str, tol: Option<f64>, seed: u64) -> Result<i32, Failure> {
    let suite: Suite = suite.parse().map_err(|e: Error| {
        let names: Vec<_> = Suite::ALL.iter().map(Suite::name).collect();
        Failure::new(exit::USAGE, format!("{e}; expected one of {}", names.join(", ")))
    })?;
    if let Some(t) = tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::new(exit::USAGE, format!("--tol must be positive, got {t}")));
        }
    }
    match run_suite(suite, tol, seed) {
        Ok(report) => {
            println!("{report}");
            Ok(if report.passed() { exit::OK } else { exit::FAILED })
        }
        Err(e) => {
            println!("suite {suite} failed: {e}");
            Ok(exit::FAILED)
        }
    }
}

#[derive(Serialize)]
struct Checkpoint<'a> {
    task: &'a TaskSpec,
    config: &'a TrainConfig,
    layer_sizes: &'a [usize],
    time_feature: bool,
    sharing: ParameterSharing,
    /// One flat parameter array per layer (a single entry when shared).
    theta: Vec<Vec<f64>>,
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| Failure::new(exit::IO, format!("cannot write {}: {e}", path.display())))
}

fn write_run(run: &ExperimentRun, out: &Path, timing: bool) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .map_err(|e| Failure::new(exit::IO, format!("cannot create {}: {e}", out.display())))?;
    write(out, "history.csv", &run.history.table(timing).to_csv())?;
    write(out, "depth_profile.csv", &run.history.profile_table().to_csv())?;
    let ckpt = Checkpoint {
        task: &run.spec,
        config: &run.config,
        layer_sizes: run.model.layer_sizes(),
        time_feature: run.model.time_feature(),
        sharing: run.params.sharing(),
        theta: run.params.blocks().iter().map(|b| b.iter().copied().collect()).collect(),
    };
    write(out, "checkpoint.json", &serde_json::to_string_pretty(&ckpt).unwrap())?;
    if let Some(report) = &run.summary.extrapolation {
        write(out, "extrapolation.csv", &extrapolation_table(report).to_csv())?;
    }
    write(out, "summary.json", &serde_json::to_string_pretty(&run.summary).unwrap())?;
    Ok(())
}

fn report(summary: &ExperimentSummary, out: &Path) {
    println!(
        "{:?} seed {}: loss {:.6e} -> {:.6e} ({:.2}s), results in {}",
        summary.task,
        summary.seed,
        summary.initial_loss,
        summary.final_loss,
        summary.runtime_seconds,
        out.display()
    );
}

pub fn train(config_path: &Path, out: &Path, timing: bool) -> Result<i32, Failure> {
    let text = fs::read_to_string(config_path).map_err(|e| {
        Failure::new(exit::IO, format!("cannot read {}: {e}", config_path.display()))
    })?;
    let cfg = RunConfig::parse(&text).map_err(|e| Failure::new(exit::USAGE, e.to_string()))?;
    let run = run_experiment(&cfg.task, &cfg.train).map_err(Failure::from_run)?;
    write_run(&run, out, timing)?;
    report(&run.summary, out);
    Ok(exit::OK)
}

pub fn experiment(name: &str, seed: u64, out: Option<PathBuf>, timing: bool) -> Result<i32, Failure> {
    let kind: TaskKind = name
        .parse()
        .map_err(|e: Error| Failure::new(exit::USAGE, format!("{e}; expected projectile or rotvec")))?;
    let spec = TaskSpec::of(kind);
    let config = spec.default_config(seed);
    let out = out.unwrap_or_else(|| PathBuf::from("results").join(name));
    let run = run_experiment(&spec, &config).map_err(Failure::from_run)?;
    write_run(&run, &out, timing)?;
    report(&run.summary, &out);
    Ok(exit::OK)
}
