//! Generated-data experiments: learning vertical projectile motion from
//! four depths, and a rotating unit vector supervised at sixteen frames.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DepthGrid, JacobianScheme, LayerParams, ParameterSharing, SquaredError, StateVector};
use crate::dynamics::{projectile_closed_form, MlpDynamics};
use crate::error::{Error, Result};
use crate::train::{
    extrapolation_report, train_loop, LrSchedule, Optimizer, Sample, TrainConfig, TrainHistory,
    TrainMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Projectile,
    Rotvec,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projectile" => Ok(TaskKind::Projectile),
            "rotvec" => Ok(TaskKind::Rotvec),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

/// Data and model shape of an experiment; training settings live in [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub samples: usize,
    pub hidden: usize,
    /// Projectile only.
    pub gravity: f64,
    /// Rotvec only: supervised depth frames on `[p_min, 0]`.
    pub frames: usize,
    pub p_min: f64,
}

impl TaskSpec {
    pub fn projectile() -> Self {
        Self { kind: TaskKind::Projectile, samples: 4, hidden: 16, gravity: 9.81, frames: 5, p_min: 0.0 }
    }

    pub fn rotvec() -> Self {
        Self { kind: TaskKind::Rotvec, samples: 32, hidden: 16, gravity: 9.81, frames: 16, p_min: -4.0 }
    }

    pub fn of(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Projectile => Self::projectile(),
            TaskKind::Rotvec => Self::rotvec(),
        }
    }

    /// Training settings used by the `experiment` command.
    pub fn default_config(&self, seed: u64) -> TrainConfig {
        match self.kind {
            TaskKind::Projectile => TrainConfig {
                mode: TrainMode::AdjointUpdate,
                optimizer: Optimizer::Adam,
                learning_rate: 1e-3,
                epochs: 10,
                batch_size: self.samples,
                parameter_sharing: ParameterSharing::Shared,
                scheme: JacobianScheme::exact(),
                lr_schedule: LrSchedule::Constant,
                seed,
                substeps: 10,
                residual_samples: 4,
            },
            TaskKind::Rotvec => TrainConfig {
                mode: TrainMode::ThroughSystem,
                optimizer: Optimizer::Adam,
                learning_rate: 1e-2,
                epochs: 500,
                batch_size: 16,
                parameter_sharing: ParameterSharing::Shared,
                scheme: JacobianScheme::cropped(),
                lr_schedule: LrSchedule::ExpDecay { factor: 0.5, step_epochs: 30 },
                seed,
                substeps: 1,
                residual_samples: 4,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("samples and hidden must be positive".into()));
        }
        match self.kind {
            TaskKind::Projectile if !(self.gravity > 0.0 && self.gravity.is_finite()) => {
                Err(Error::InvalidArgument("gravity must be positive".into()))
            }
            TaskKind::Rotvec if self.frames < 2 || self.p_min.is_nan() || self.p_min >= 0.0 => {
                Err(Error::InvalidArgument("rotvec needs frames >= 2 and p_min < 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn grid(&self) -> Result<DepthGrid> {
        match self.kind {
            TaskKind::Projectile => DepthGrid::uniform(0.0, 1.0, 4),
            TaskKind::Rotvec => DepthGrid::uniform(self.p_min, 0.0, self.frames - 1),
        }
    }

    pub fn model(&self) -> MlpDynamics {
        MlpDynamics::new(vec![2, self.hidden, 2], false).expect("valid sizes")
    }

    /// Rotation per unit depth: one frame spacing turns `2 pi / frames`.
    fn angular_rate(&self) -> f64 {
        let spacing = -self.p_min / (self.frames - 1) as f64;
        2.0 * PI / self.frames as f64 / spacing
    }

    /// Ground truth `z(q; p, x)`.
    pub fn target(&self, x: &StateVector, p: f64) -> StateVector {
        match self.kind {
            TaskKind::Projectile => {
                let q = 1.0;
                projectile_closed_form(self.gravity, x, p.min(q), q)
            }
            TaskKind::Rotvec => {
                let (s, c) = (self.angular_rate() * (0.0 - p)).sin_cos();
                StateVector::from_vec(vec![c * x[0] - s * x[1], s * x[0] + c * x[1]])
            }
        }
    }

    pub fn inputs(&self, seed: u64) -> Vec<StateVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
        (0..self.samples)
            .map(|_| match self.kind {
                TaskKind::Projectile => {
                    StateVector::from_vec(vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..5.0)])
                }
                TaskKind::Rotvec => {
                    let a: f64 = rng.gen_range(0.0..2.0 * PI);
                    StateVector::from_vec(vec![a.cos(), a.sin()])
                }
            })
            .collect()
    }

    /// Every input supervised at every grid depth.
    pub fn dataset(&self, seed: u64) -> Result<Vec<Sample>> {
        let grid = self.grid()?;
        Ok(self
            .inputs(seed)
            .into_iter()
            .map(|x| {
                let targets = grid.points().iter().map(|&p| (p, self.target(&x, p))).collect();
                Sample::new(x, targets)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub task: TaskKind,
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_p_min_loss: Option<f64>,
    pub final_p_min_loss: Option<f64>,
    pub depths: Vec<f64>,
    pub final_profile: Vec<Option<f64>>,
    /// `(depth, loss)` on a grid of spacing 1/3 from one unit beyond `p_min` to 0.
    pub extrapolation: Option<Vec<(f64, f64)>>,
    pub runtime_seconds: f64,
}

pub struct ExperimentRun {
    pub spec: TaskSpec,
    pub config: TrainConfig,
    pub model: MlpDynamics,
    pub params: LayerParams,
    pub history: TrainHistory,
    pub summary: ExperimentSummary,
}

/// Data generation, training and evaluation for one task.
pub fn run_experiment(spec: &TaskSpec, config: &TrainConfig) -> Result<ExperimentRun> {
    spec.validate()?;
    let start = Instant::now();
    let grid = spec.grid()?;
    let model = spec.model();
    let dataset = spec.dataset(config.seed)?;
    let cost = SquaredError::mse(2);
    let init = model.init(config.seed);
    let (params, history) = train_loop(&model, &init, &grid, &dataset, &cost, config)?;
    let extrapolation = match (spec.kind, &params) {
        (TaskKind::Rotvec, LayerParams::Shared(_)) => {
            let lo = spec.p_min - 1.0;
            let ext = DepthGrid::uniform(lo, 0.0, (-3.0 * lo).round() as usize)?;
            let eval = spec.inputs(config.seed.wrapping_add(1));
            let target = |x: &StateVector, p: f64| spec.target(x, p);
            Some(extrapolation_report(
                &model,
                &params,
                &ext,
                &eval,
                &target,
                &cost,
                &config.scheme,
                &config.options(),
            )?)
        }
        _ => None,
    };
    let summary = ExperimentSummary {
        task: spec.kind,
        seed: config.seed,
        initial_loss: history.initial().loss,
        final_loss: history.last().loss,
        initial_p_min_loss: history.initial().p_min_loss(),
        final_p_min_loss: history.last().p_min_loss(),
        depths: history.depths.clone(),
        final_profile: history.last().profile.clone(),
        extrapolation,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(ExperimentRun { spec: spec.clone(), config: config.clone(), model, params, history, summary })
}
