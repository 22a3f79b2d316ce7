//! Flat `key = value` run configuration. `[section]` headers and `#`
//! comments are accepted and ignored; keys are the training-config field
//! names plus the task keys `task`, `samples`, `hidden`, `gravity`, `frames`
//! and `p_min`.

use std::fmt;

use inimnet::tasks::{TaskKind, TaskSpec};
use inimnet::train::{LrSchedule, Optimizer, TrainConfig, TrainMode};
use inimnet::{JacobianScheme, ParameterSharing, SchemeMode};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub train: TrainConfig,
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_schedule(value: &str) -> Result<LrSchedule, String> {
    if value == "Constant" {
        return Ok(LrSchedule::Constant);
    }
    let inner = value
        .strip_prefix("ExpDecay(")
        .and_then(|v| v.strip_suffix(')'))
        .ok_or_else(|| format!("lr_schedule: expected Constant or ExpDecay(factor, step_epochs), got {value:?}"))?;
    let (factor, step) = inner
        .split_once(',')
        .ok_or_else(|| "lr_schedule: ExpDecay takes two arguments".to_string())?;
    Ok(LrSchedule::ExpDecay {
        factor: number("lr_schedule factor", factor.trim())?,
        step_epochs: number("lr_schedule step_epochs", step.trim())?,
    })
}

fn parse_scheme(value: &str) -> Result<SchemeMode, String> {
    match value {
        "Exact" => Ok(SchemeMode::Exact),
        "SymmetricDiff" => Ok(SchemeMode::SymmetricDiff),
        "NewtonDiff" => Ok(SchemeMode::NewtonDiff),
        "Cropped" => Ok(SchemeMode::Cropped),
        other => Err(format!("scheme: unknown {other:?}")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError {
                line: k + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            pairs.push((k + 1, key.trim().to_string(), value.trim().to_string()));
        }
        let task_line = pairs.iter().find(|(_, key, _)| key == "task").ok_or_else(|| ConfigError {
            line: 0,
            message: "missing task".into(),
        })?;
        let kind: TaskKind = task_line.2.parse().map_err(|e: inimnet::Error| ConfigError {
            line: task_line.0,
            message: e.to_string(),
        })?;
        let mut task = TaskSpec::of(kind);
        let mut train = task.default_config(0);
        let mut deltas: Option<Vec<f64>> = None;
        let mut batch_given = false;
        for (line, key, value) in &pairs {
            let v = value.as_str();
            let applied: Result<(), String> = (|| {
                match key.as_str() {
                    "task" => {}
                    "samples" => task.samples = number(key, v)?,
                    "hidden" => task.hidden = number(key, v)?,
                    "gravity" => task.gravity = number(key, v)?,
                    "frames" => task.frames = number(key, v)?,
                    "p_min" => task.p_min = number(key, v)?,
                    "mode" => {
                        train.mode = match v {
                            "ThroughSystem" => TrainMode::ThroughSystem,
                            "AdjointUpdate" => TrainMode::AdjointUpdate,
                            _ => return Err(format!("mode: unknown {v:?}")),
                        }
                    }
                    "optimizer" => {
                        train.optimizer = match v {
                            "SGD" | "Sgd" => Optimizer::Sgd,
                            "Adam" => Optimizer::Adam,
                            _ => return Err(format!("optimizer: unknown {v:?}")),
                        }
                    }
                    "learning_rate" => train.learning_rate = number(key, v)?,
                    "epochs" => train.epochs = number(key, v)?,
                    "batch_size" => {
                        train.batch_size = number(key, v)?;
                        batch_given = true;
                    }
                    "parameter_sharing" => {
                        train.parameter_sharing = match v {
                            "Shared" => ParameterSharing::Shared,
                            "PerLayer" => ParameterSharing::PerLayer,
                            _ => return Err(format!("parameter_sharing: unknown {v:?}")),
                        }
                    }
                    "scheme" => train.scheme = JacobianScheme::new(parse_scheme(v)?),
                    "deltas" => {
                        deltas = Some(
                            v.split(',').map(|d| number(key, d.trim())).collect::<Result<_, _>>()?,
                        )
                    }
                    "lr_schedule" => train.lr_schedule = parse_schedule(v)?,
                    "seed" => train.seed = number(key, v)?,
                    "substeps" => train.substeps = number(key, v)?,
                    "residual_samples" => train.residual_samples = number(key, v)?,
                    other => return Err(format!("unknown key {other:?}")),
                }
                Ok(())
            })();
            applied.map_err(|message| ConfigError { line: *line, message })?;
        }
        if let Some(d) = deltas {
            train.scheme = train
                .scheme
                .clone()
                .with_deltas(d)
                .map_err(|e| ConfigError { line: 0, message: e.to_string() })?;
        }
        if kind == TaskKind::Projectile && !batch_given {
            train.batch_size = task.samples;
        }
        let invalid = |e: inimnet::Error| ConfigError { line: 0, message: e.to_string() };
        task.validate().map_err(invalid)?;
        train.validate().map_err(invalid)?;
        Ok(Self { task, train })
    }
}
