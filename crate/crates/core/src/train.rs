//! Parameter optimization: reverse mode through the discrete imbedded
//! recursion, adjoint-based updates from the parameter block, SGD and Adam,
//! and the per-epoch history with depth diagnostics.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{backward_imbed_with, observation_indices, observation_parameter_gradients};
use crate::domain::{
    Cost, CostLoss, DepthGrid, DynamicsModel, ImbedOptions, JacobianScheme, LayerParams, Layout,
    ParamVector, ParameterSharing, SchemeMode, StateVector,
};
use crate::error::{ensure_finite, Error, Result};
use crate::io::Table;
use crate::jacobian::{Stencil, StencilKind};
use crate::propagate::{check_inputs, forward_imbed_with};

/// One training example: an input and targets at grid depths.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: StateVector,
    pub targets: Vec<(f64, StateVector)>,
}

impl Sample {
    pub fn new(x: StateVector, targets: Vec<(f64, StateVector)>) -> Self {
        Self { x, targets }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    ThroughSystem,
    AdjointUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant,
    ExpDecay { factor: f64, step_epochs: usize },
}

impl LrSchedule {
    /// Rate used during zero-based epoch `epoch`.
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::ExpDecay { factor, step_epochs } => {
                base * factor.powi((epoch / step_epochs.max(1)) as i32)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub parameter_sharing: ParameterSharing,
    pub scheme: JacobianScheme,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Euler sub-steps per grid interval.
    pub substeps: usize,
    /// Samples used for the optimality residual diagnostic.
    pub residual_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::ThroughSystem,
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 16,
            parameter_sharing: ParameterSharing::Shared,
            scheme: JacobianScheme::cropped(),
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            substeps: 1,
            residual_samples: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be at least 1".into()));
        }
        if let LrSchedule::ExpDecay { factor, step_epochs } = self.lr_schedule {
            if !(factor > 0.0 && factor.is_finite()) || step_epochs == 0 {
                return Err(Error::InvalidArgument(
                    "ExpDecay needs a positive factor and step_epochs >= 1".into(),
                ));
            }
        }
        if self.mode == TrainMode::AdjointUpdate && self.parameter_sharing != ParameterSharing::Shared {
            return Err(Error::SharingRequired(
                "adjoint updates use the shared parameter block Lambda_theta".into(),
            ));
        }
        Ok(())
    }

    pub fn options(&self) -> ImbedOptions {
        ImbedOptions::default().with_substeps(self.substeps)
    }
}

/// Diagnostics for one epoch, evaluated on the full dataset after its updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over samples of the per-sample mean target cost.
    pub loss: f64,
    /// Mean cost at each grid depth over samples observed there.
    pub profile: Vec<Option<f64>>,
    /// Mean optimality residual norm at each observed depth.
    pub residual: Vec<Option<f64>>,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn p_min_loss(&self) -> Option<f64> {
        self.profile[0]
    }
}

/// Epoch 0 (before any update) followed by one record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub depths: Vec<f64>,
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn initial(&self) -> &EpochRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &EpochRecord {
        self.records.last().unwrap()
    }

    /// One row per trained epoch at `p_min`. Wall-clock seconds are left
    /// empty unless requested so that seeded runs produce identical files.
    pub fn table(&self, with_seconds: bool) -> Table {
        let mut t = Table::new(&["epoch", "depth", "loss", "residual", "seconds"]);
        for r in &self.records[1..] {
            t.push(vec![
                Some(r.epoch as f64),
                Some(self.depths[0]),
                r.profile[0],
                r.residual[0],
                with_seconds.then_some(r.seconds),
            ]);
        }
        t
    }

    /// Per-depth loss and residual at epoch 0 and at the final epoch.
    pub fn profile_table(&self) -> Table {
        let mut t = Table::new(&["epoch", "depth", "loss", "residual"]);
        for r in [self.initial(), self.last()] {
            for (i, d) in self.depths.iter().enumerate() {
                t.push(vec![Some(r.epoch as f64), Some(*d), r.profile[i], r.residual[i]]);
            }
        }
        t
    }
}

type IndexedTargets<'a> = Vec<Vec<&'a StateVector>>;

fn indexed<'a>(grid: &DepthGrid, sample: &'a Sample) -> Result<(IndexedTargets<'a>, f64)> {
    if sample.targets.is_empty() {
        return Err(Error::InvalidArgument("sample without targets".into()));
    }
    let targets = observation_indices(grid, &sample.targets)?;
    Ok((targets, 1.0 / sample.targets.len() as f64))
}

/// Mean target cost of one sample and its per-layer parameter gradient.
#[allow(clippy::too_many_arguments)]
fn sample_gradient(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    sample: &Sample,
    cost: &dyn Cost,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
) -> Result<(f64, Vec<ParamVector>)> {
    check_inputs(model, params, grid, &sample.x)?;
    let layout = Layout::new(grid, options.substeps);
    let (targets, weight) = indexed(grid, sample)?;
    let mut grads = vec![ParamVector::zeros(model.param_count()); grid.layers()];
    let loss = match scheme.mode {
        SchemeMode::Cropped => {
            reverse_cropped(model, params, &layout, &sample.x, &targets, weight, cost, &mut grads)?
        }
        SchemeMode::Exact => {
            reverse_exact(model, params, &layout, &sample.x, &targets, weight, cost, &mut grads)?
        }
        SchemeMode::SymmetricDiff | SchemeMode::NewtonDiff => {
            let kind = if scheme.mode == SchemeMode::SymmetricDiff {
                StencilKind::Symmetric
            } else {
                StencilKind::Newton
            };
            let stencil = Stencil::new(&sample.x, &scheme.deltas_for(&sample.x)?, kind);
            reverse_diff(model, params, &layout, &stencil, &targets, weight, cost, &mut grads)?
        }
    };
    for g in &grads {
        ensure_finite(g.as_slice(), "parameter gradient")?;
    }
    Ok((loss, grads))
}

/// Adds the observation costs at fine point `j`, returning the cost and
/// accumulating its gradient into `zbar`.
fn deposit(
    layout: &Layout,
    j: usize,
    z: &StateVector,
    targets: &[Vec<&StateVector>],
    weight: f64,
    cost: &dyn Cost,
    zbar: &mut StateVector,
) -> f64 {
    let Some(i) = layout.coarse_index(j) else { return 0.0 };
    let mut total = 0.0;
    for y in &targets[i] {
        total += weight * cost.value(z, y);
        zbar.axpy(weight, &cost.grad(z, y), 1.0);
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn reverse_cropped(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    layout: &Layout,
    x: &StateVector,
    targets: &[Vec<&StateVector>],
    weight: f64,
    cost: &dyn Cost,
    grads: &mut [ParamVector],
) -> Result<f64> {
    let n = x.len();
    let last = layout.last();
    // Forward tape: z_j and J_{j+1}, Phi_j, grad Phi_j per step j.
    let mut zs = vec![StateVector::zeros(n); last + 1];
    let mut tape = Vec::with_capacity(last);
    let mut z = x.clone();
    let mut jac = DMatrix::identity(n, n);
    zs[last] = z.clone();
    for j in (0..last).rev() {
        let theta = params.layer(layout.layer[j]);
        let h = layout.h(j);
        let phi = model.eval(layout.t[j], x, theta);
        let a = model.d_dz(layout.t[j], x, theta)?;
        z += &jac * &phi * h;
        let next = &jac + &jac * &a * h;
        tape.push((jac, phi, a));
        jac = next;
        ensure_finite(z.as_slice(), "imbedded forward state")?;
        zs[j] = z.clone();
    }
    tape.reverse();

    let mut loss = 0.0;
    let mut zbar = StateVector::zeros(n);
    let mut jbar = DMatrix::zeros(n, n);
    for j in 0..last {
        loss += deposit(layout, j, &zs[j], targets, weight, cost, &mut zbar);
        let (j_next, phi, a) = &tape[j];
        let layer = layout.layer[j];
        let theta = params.layer(layer);
        let h = layout.h(j);
        let phibar = j_next.tr_mul(&zbar) * h;
        let abar = j_next.tr_mul(&jbar) * h;
        let jbar_next = &zbar * phi.transpose() * h + &jbar + &jbar * a.transpose() * h;
        let ftheta = model.d_dtheta(layout.t[j], x, theta)?;
        grads[layer] += ftheta.tr_mul(&phibar);
        if abar.iter().any(|v| *v != 0.0) {
            grads[layer] += model.jacobian_contraction_grads(layout.t[j], x, theta, &abar)?.1;
        }
        jbar = jbar_next;
    }
    loss += deposit(layout, last, &zs[last], targets, weight, cost, &mut zbar);
    Ok(loss)
}

#[allow(clippy::too_many_arguments)]
fn reverse_exact(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    layout: &Layout,
    x: &StateVector,
    targets: &[Vec<&StateVector>],
    weight: f64,
    cost: &dyn Cost,
    grads: &mut [ParamVector],
) -> Result<f64> {
    let n = x.len();
    let last = layout.last();
    // Direct Euler path and variational matrices from x started at every
    // fine point share the same per-step maps, so one pass from each start is needed.
    let mut zs = vec![StateVector::zeros(n); last + 1];
    let mut jacs = vec![DMatrix::identity(n, n); last + 1];
    let mut phis = vec![StateVector::zeros(n); last];
    let mut z = x.clone();
    zs[last] = z.clone();
    for j in (0..last).rev() {
        let theta = params.layer(layout.layer[j]);
        let h = layout.h(j);
        phis[j] = model.eval(layout.t[j], x, theta);
        z += &jacs[j + 1] * &phis[j] * h;
        ensure_finite(z.as_slice(), "imbedded forward state")?;
        zs[j] = z.clone();
        if j > 0 {
            jacs[j] = crate::jacobian::direct_state_jacobian(model, params, layout, j, x)?;
        }
    }

    let mut loss = 0.0;
    let mut zbar = StateVector::zeros(n);
    for j in 0..last {
        loss += deposit(layout, j, &zs[j], targets, weight, cost, &mut zbar);
        let layer = layout.layer[j];
        let theta = params.layer(layer);
        let h = layout.h(j);
        let phibar = jacs[j + 1].tr_mul(&zbar) * h;
        grads[layer] += model.d_dtheta(layout.t[j], x, theta)?.tr_mul(&phibar);
        if j + 1 < last {
            let vbar = &zbar * phis[j].transpose() * h;
            variational_reverse(model, params, layout, j + 1, x, vbar, grads)?;
        }
    }
    loss += deposit(layout, last, &zs[last], targets, weight, cost, &mut zbar);
    Ok(loss)
}

/// Pulls the adjoint `vbar` of `grad_x z(q; t_g, x)` back onto the layer
/// parameters through the Euler variational chain.
fn variational_reverse(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    layout: &Layout,
    g: usize,
    x: &StateVector,
    vbar: DMatrix<f64>,
    grads: &mut [ParamVector],
) -> Result<()> {
    let n = x.len();
    let last = layout.last();
    let mut ws = Vec::with_capacity(last - g + 1);
    let mut ms = Vec::with_capacity(last - g + 1);
    let mut w = x.clone();
    let mut m = DMatrix::identity(n, n);
    for k in g..last {
        let theta = params.layer(layout.layer[k]);
        let h = layout.h(k);
        let a = model.d_dz(layout.t[k], &w, theta)?;
        let f = model.eval(layout.t[k], &w, theta);
        let m_next = &m + &a * &m * h;
        ws.push(w.clone());
        ms.push(m);
        w.axpy(h, &f, 1.0);
        m = m_next;
    }
    let mut mbar = vbar;
    let mut wbar = StateVector::zeros(n);
    for k in (g..last).rev() {
        let i = k - g;
        let layer = layout.layer[k];
        let theta = params.layer(layer);
        let h = layout.h(k);
        let (a, ftheta) = model.partials(layout.t[k], &ws[i], theta)?;
        let abar = &mbar * ms[i].transpose() * h;
        let (gz, gtheta) = model.jacobian_contraction_grads(layout.t[k], &ws[i], theta, &abar)?;
        grads[layer] += gtheta + ftheta.tr_mul(&wbar) * h;
        wbar = &wbar + a.tr_mul(&wbar) * h + gz;
        mbar = &mbar + a.tr_mul(&mbar) * h;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn reverse_diff(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    layout: &Layout,
    stencil: &Stencil,
    targets: &[Vec<&StateVector>],
    weight: f64,
    cost: &dyn Cost,
    grads: &mut [ParamVector],
) -> Result<f64> {
    let n = stencil.dim();
    let k_count = stencil.points.len();
    let last = layout.last();
    let mut centre = vec![StateVector::zeros(n); last + 1];
    let mut jac_used = vec![DMatrix::identity(n, n); last];
    let mut phis = vec![Vec::new(); last];
    let mut states = stencil.points.clone();
    let mut jac = DMatrix::identity(n, n);
    centre[last] = states[0].clone();
    for j in (0..last).rev() {
        let theta = params.layer(layout.layer[j]);
        let h = layout.h(j);
        let phi: Vec<StateVector> =
            stencil.points.iter().map(|x0| model.eval(layout.t[j], x0, theta)).collect();
        for (z, p) in states.iter_mut().zip(&phi) {
            *z += &jac * p * h;
            ensure_finite(z.as_slice(), "difference co-state")?;
        }
        jac_used[j] = jac;
        phis[j] = phi;
        jac = stencil.gradient(&states);
        centre[j] = states[0].clone();
    }

    let mut loss = 0.0;
    let mut sbar = vec![StateVector::zeros(n); k_count];
    for j in 0..last {
        loss += deposit(layout, j, &centre[j], targets, weight, cost, &mut sbar[0]);
        let layer = layout.layer[j];
        let theta = params.layer(layer);
        let h = layout.h(j);
        let mut jbar = DMatrix::zeros(n, n);
        for k in 0..k_count {
            jbar += &sbar[k] * phis[j][k].transpose() * h;
            let phibar = jac_used[j].tr_mul(&sbar[k]) * h;
            grads[layer] += model.d_dtheta(layout.t[j], &stencil.points[k], theta)?.tr_mul(&phibar);
        }
        // The Jacobian at the terminal point is the constant identity.
        if j + 1 < last {
            for c in 0..n {
                let (hi, lo, span) = stencil.pair(c);
                let col = jbar.column(c) / span;
                sbar[hi] += &col;
                sbar[lo] -= &col;
            }
        }
    }
    loss += deposit(layout, last, &centre[last], targets, weight, cost, &mut sbar[0]);
    Ok(loss)
}

fn shape_like(params: &LayerParams, per_layer: Vec<ParamVector>) -> LayerParams {
    match params {
        LayerParams::Shared(theta) => {
            let mut total = ParamVector::zeros(theta.len());
            for g in &per_layer {
                total += g;
            }
            LayerParams::Shared(total)
        }
        LayerParams::PerLayer(_) => LayerParams::PerLayer(per_layer),
    }
}

fn mean_of(blocks: Vec<(f64, Vec<ParamVector>)>) -> (f64, Vec<ParamVector>) {
    let count = blocks.len() as f64;
    let mut iter = blocks.into_iter();
    let (mut loss, mut grads) = iter.next().unwrap();
    for (l, g) in iter {
        loss += l;
        for (acc, v) in grads.iter_mut().zip(g) {
            *acc += v;
        }
    }
    for g in &mut grads {
        *g /= count;
    }
    (loss / count, grads)
}

/// Mean batch loss and its exact reverse-mode gradient through the discrete
/// imbedded recursion of the chosen scheme. The gradient has the same shape
/// as `params`. Samples are evaluated in parallel and reduced in order.
pub fn grad_through_system(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    batch: &[Sample],
    cost: &dyn Cost,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
) -> Result<(f64, LayerParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_sample = batch
        .par_iter()
        .map(|s| sample_gradient(model, params, grid, s, cost, scheme, options))
        .collect::<Result<Vec<_>>>()?;
    let (loss, grads) = mean_of(per_sample);
    Ok((loss, shape_like(params, grads)))
}

/// Mean batch loss and the batch-averaged parameter adjoint: for each target
/// `(p_j, y_j)`, `Lambda_theta(p_j, x)` of `C(z(q; p_j, x), y_j)`. Needs shared parameters.
pub fn adjoint_update_direction(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    batch: &[Sample],
    cost: &dyn Cost,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
) -> Result<(f64, LayerParams)> {
    if params.shared().is_none() {
        return Err(Error::SharingRequired("adjoint updates need shared parameters".into()));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_sample = batch
        .par_iter()
        .map(|s| {
            let (targets, weight) = indexed(grid, s)?;
            let bundle = forward_imbed_with(model, params, &s.x, grid, scheme, options)?;
            let loss = sample_cost(&bundle.outputs, &targets, weight, cost);
            let grads = observation_parameter_gradients(
                model, params, grid, &s.x, &targets, cost, scheme, options,
            )?;
            Ok((loss, vec![grads.into_iter().next().unwrap() * weight]))
        })
        .collect::<Result<Vec<_>>>()?;
    let (loss, mut grads) = mean_of(per_sample);
    Ok((loss, LayerParams::Shared(grads.swap_remove(0))))
}

fn sample_cost(outputs: &[StateVector], targets: &[Vec<&StateVector>], weight: f64, cost: &dyn Cost) -> f64 {
    let mut total = 0.0;
    for (z, ys) in outputs.iter().zip(targets) {
        for y in ys {
            total += weight * cost.value(z, y);
        }
    }
    total
}

struct SampleEval {
    loss: f64,
    per_depth: Vec<Option<f64>>,
    residual: Vec<Option<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn eval_sample(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    sample: &Sample,
    cost: &dyn Cost,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
    with_residual: bool,
) -> Result<SampleEval> {
    let (targets, weight) = indexed(grid, sample)?;
    let bundle = forward_imbed_with(model, params, &sample.x, grid, scheme, options)?;
    let loss = sample_cost(&bundle.outputs, &targets, weight, cost);
    let per_depth = bundle
        .outputs
        .iter()
        .zip(&targets)
        .map(|(z, ys)| {
            (!ys.is_empty())
                .then(|| ys.iter().map(|y| cost.value(z, y)).sum::<f64>() / ys.len() as f64)
        })
        .collect();
    let mut residual = vec![None; grid.len()];
    if with_residual && model.param_count() > 0 {
        let top = grid.len() - 1;
        let p = grid.points();
        for (i, ys) in targets.iter().enumerate() {
            if ys.is_empty() {
                continue;
            }
            let theta = params.layer(i.min(grid.layers() - 1));
            let ftheta = model.d_dtheta(p[i], &sample.x, theta)?;
            let mut total = 0.0;
            for y in ys {
                let lambda = if i == top {
                    cost.grad(&sample.x, y)
                } else {
                    let loss = CostLoss { cost, target: y };
                    let sub = grid.tail(i)?;
                    let adj = backward_imbed_with(
                        model, &params.tail(i), &sub, &sample.x, &loss, scheme, options,
                    )?;
                    adj.lambda.into_iter().next().unwrap()
                };
                total += ftheta.tr_mul(&lambda).norm();
            }
            residual[i] = Some(total / ys.len() as f64);
        }
    }
    Ok(SampleEval { loss, per_depth, residual })
}

fn column_mean(rows: &[Vec<Option<f64>>], i: usize) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(|r| r[i]).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Loss, per-depth profile and optimality residuals over a dataset; the
/// residual uses the first `residual_samples` samples.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    dataset: &[Sample],
    cost: &dyn Cost,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
    residual_samples: usize,
) -> Result<EpochRecord> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let evals = dataset
        .par_iter()
        .enumerate()
        .map(|(k, s)| eval_sample(model, params, grid, s, cost, scheme, options, k < residual_samples))
        .collect::<Result<Vec<_>>>()?;
    let loss = evals.iter().map(|e| e.loss).sum::<f64>() / evals.len() as f64;
    let depth_rows: Vec<_> = evals.iter().map(|e| e.per_depth.clone()).collect();
    let residual_rows: Vec<_> = evals.iter().map(|e| e.residual.clone()).collect();
    Ok(EpochRecord {
        epoch: 0,
        loss,
        profile: (0..grid.len()).map(|i| column_mean(&depth_rows, i)).collect(),
        residual: (0..grid.len()).map(|i| column_mean(&residual_rows, i)).collect(),
        seconds: 0.0,
    })
}

struct OptimizerState {
    kind: Optimizer,
    m: Vec<ParamVector>,
    v: Vec<ParamVector>,
    step: i32,
}

impl OptimizerState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(kind: Optimizer, blocks: &[ParamVector]) -> Self {
        let zeros: Vec<_> = blocks.iter().map(|b| ParamVector::zeros(b.len())).collect();
        Self { kind, m: zeros.clone(), v: zeros, step: 0 }
    }

    fn apply(&mut self, blocks: &mut [ParamVector], grads: &[ParamVector], lr: f64) {
        self.step += 1;
        for (k, (theta, g)) in blocks.iter_mut().zip(grads).enumerate() {
            match self.kind {
                Optimizer::Sgd => theta.axpy(-lr, g, 1.0),
                Optimizer::Adam => {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    let c1 = 1.0 - Self::BETA1.powi(self.step);
                    let c2 = 1.0 - Self::BETA2.powi(self.step);
                    for i in 0..theta.len() {
                        m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                        v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                        theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                    }
                }
            }
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var("INIMNET_THREADS") {
        let n: usize = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("INIMNET_THREADS={value:?} is not a count")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Trains from `init`, replicated per layer or shared according to the
/// config. Returns the trained parameters and the history; epoch 0 of the
/// history is the untrained model.
pub fn train_loop(
    model: &dyn DynamicsModel,
    init: &ParamVector,
    grid: &DepthGrid,
    dataset: &[Sample],
    cost: &dyn Cost,
    config: &TrainConfig,
) -> Result<(LayerParams, TrainHistory)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut blocks = match config.parameter_sharing {
        ParameterSharing::Shared => vec![init.clone()],
        ParameterSharing::PerLayer => vec![init.clone(); grid.layers()],
    };
    let pack = |blocks: &[ParamVector]| match config.parameter_sharing {
        ParameterSharing::Shared => LayerParams::Shared(blocks[0].clone()),
        ParameterSharing::PerLayer => LayerParams::PerLayer(blocks.to_vec()),
    };
    pack(&blocks).validate(model, grid)?;
    let options = config.options();
    let pool = thread_pool()?;
    pool.install(|| {
        let eval = |params: &LayerParams, epoch: usize, seconds: f64| -> Result<EpochRecord> {
            let mut r = evaluate(
                model,
                params,
                grid,
                dataset,
                cost,
                &config.scheme,
                &options,
                config.residual_samples,
            )?;
            r.epoch = epoch;
            r.seconds = seconds;
            Ok(r)
        };
        let mut records = vec![eval(&pack(&blocks), 0, 0.0)?];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut opt = OptimizerState::new(config.optimizer, &blocks);
        for epoch in 1..=config.epochs {
            let start = Instant::now();
            let lr = config.lr_schedule.rate(config.learning_rate, epoch - 1);
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<Sample> = chunk.iter().map(|&k| dataset[k].clone()).collect();
                let params = pack(&blocks);
                let step = match config.mode {
                    TrainMode::ThroughSystem => grad_through_system(
                        model, &params, grid, &batch, cost, &config.scheme, &options,
                    ),
                    TrainMode::AdjointUpdate => adjoint_update_direction(
                        model, &params, grid, &batch, cost, &config.scheme, &options,
                    ),
                };
                let (loss, grads) = match step {
                    Err(Error::NonFinite(_)) => return Err(Error::DivergedTraining(epoch)),
                    other => other?,
                };
                let grads: Vec<ParamVector> = grads.blocks().into_iter().cloned().collect();
                if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                    return Err(Error::DivergedTraining(epoch));
                }
                opt.apply(&mut blocks, &grads, lr);
            }
            let seconds = start.elapsed().as_secs_f64();
            let record = match eval(&pack(&blocks), epoch, seconds) {
                Err(Error::NonFinite(_)) => return Err(Error::DivergedTraining(epoch)),
                other => other?,
            };
            if !record.loss.is_finite() {
                return Err(Error::DivergedTraining(epoch));
            }
            records.push(record);
        }
        Ok((pack(&blocks), TrainHistory { depths: grid.points().to_vec(), records }))
    })
}

/// Mean cost over `eval` at every depth of `grid`, against
/// `target(x, p)`. The grid may reach beyond the depths seen in training.
#[allow(clippy::too_many_arguments)]
pub fn extrapolation_report(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    eval: &[StateVector],
    target: &(dyn Fn(&StateVector, f64) -> StateVector + Sync),
    cost: &dyn Cost,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
) -> Result<Vec<(f64, f64)>> {
    let Some(theta) = params.shared() else {
        return Err(Error::SharingRequired(
            "per-layer parameters have no block for depths outside the trained layers".into(),
        ));
    };
    if eval.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let params = LayerParams::Shared(theta.clone());
    let per_sample = eval
        .par_iter()
        .map(|x| {
            let bundle = forward_imbed_with(model, &params, x, grid, scheme, options)?;
            Ok(bundle
                .outputs
                .iter()
                .zip(grid.points())
                .map(|(z, p)| cost.value(z, &target(x, *p)))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(grid
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| (*p, per_sample.iter().map(|l| l[i]).sum::<f64>() / eval.len() as f64))
        .collect())
}

pub fn extrapolation_table(report: &[(f64, f64)]) -> Table {
    let mut t = Table::new(&["depth", "loss"]);
    for (p, l) in report {
        t.push(vec![Some(*p), Some(*l)]);
    }
    t
}
