//! Backward passes: the direct Euler-Lagrange adjoint, the imbedded adjoint
//! propagated in depth, its augmented parameter and depth blocks, the
//! time-series recursion and the first-order optimality residual.
//!
//! Every propagated quantity `Q(p, x)` obeys `-d_p Q = grad_x Q . Phi + S_Q`,
//! so one engine serves all blocks; the Jacobian scheme only decides how
//! `grad_x Q` is estimated.

use nalgebra::DMatrix;

use crate::domain::{
    AdjointBundle, AdjointGradientAt, Cost, DepthAdjointForm, DepthGrid, DynamicsModel,
    ImbedOptions, JacobianScheme, LayerParams, Layout, LossSpec, ParamVector, SchemeMode,
    StateVector, SumLoss, ThetaSchedule,
};
use crate::error::{ensure_finite, Error, Result};
use crate::io::Table;
use crate::jacobian::{direct_second_order, SecondOrder, Stencil, StencilKind};
use crate::propagate::{check_inputs, forward_run, ForwardRun, Trajectory};

/// Result of the classical adjoint sweep along a direct trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectAdjoint {
    /// `lambda(t_k)` at every trajectory point; `lambda[0]` is the gradient
    /// of the total loss with respect to the input.
    pub lambda: Vec<StateVector>,
    /// Gradient with respect to a parameter block held constant in `t`.
    pub theta_grad: ParamVector,
    /// Discrete total loss `sum_k h_k R(t_k, z_k) + T(z_K)`.
    pub loss: f64,
}

/// Adjoint of the Euler scheme along `trajectory`:
/// `lambda_k = lambda_{k+1} + h (grad_z f^T lambda_{k+1} + grad_z R)`,
/// `lambda_K = grad_z T(z_K)`.
pub fn adjoint_direct(
    model: &dyn DynamicsModel,
    schedule: &dyn ThetaSchedule,
    trajectory: &Trajectory,
    loss: &dyn LossSpec,
) -> Result<DirectAdjoint> {
    let steps = trajectory.t.len() - 1;
    let z = &trajectory.states;
    let mut lambda = vec![StateVector::zeros(0); steps + 1];
    lambda[steps] = loss.terminal_grad(&z[steps]);
    let mut total = loss.terminal(&z[steps]);
    let mut theta_grad: Option<ParamVector> = None;
    for k in (0..steps).rev() {
        let t = trajectory.t[k];
        let h = trajectory.t[k + 1] - t;
        let theta = schedule.theta_at(t + 0.5 * h);
        let a = model.d_dz(t, &z[k], theta)?;
        let mut next = &lambda[k + 1] + a.tr_mul(&lambda[k + 1]) * h;
        let mut gtheta = if theta.is_empty() {
            ParamVector::zeros(0)
        } else {
            model.d_dtheta(t, &z[k], theta)?.tr_mul(&lambda[k + 1]) * h
        };
        if loss.has_running() {
            next += loss.running_grad_z(t, &z[k], theta) * h;
            gtheta += loss.running_grad_theta(t, &z[k], theta) * h;
            total += h * loss.running(t, &z[k], theta);
        }
        ensure_finite(next.as_slice(), "direct adjoint")?;
        theta_grad = Some(match theta_grad {
            Some(acc) => acc + gtheta,
            None => gtheta,
        });
        lambda[k] = next;
    }
    let theta_grad = theta_grad.unwrap_or_else(|| ParamVector::zeros(schedule.theta_at(trajectory.t[0]).len()));
    Ok(DirectAdjoint { lambda, theta_grad, loss: total })
}

/// Discrete total loss of a direct Euler solve from depth `p`.
pub fn direct_total_loss(
    model: &dyn DynamicsModel,
    schedule: &dyn ThetaSchedule,
    x: &StateVector,
    p: f64,
    q: f64,
    steps: usize,
    loss: &dyn LossSpec,
) -> Result<f64> {
    let traj = crate::propagate::forward_direct_trajectory(model, schedule, x, p, q, steps)?;
    let mut total = loss.terminal(&traj.states[steps]);
    if loss.has_running() {
        for k in 0..steps {
            let h = traj.t[k + 1] - traj.t[k];
            total += h * loss.running(traj.t[k], &traj.states[k], schedule.theta_at(traj.t[k] + 0.5 * h));
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Blocks {
    pub theta: bool,
    pub depth: bool,
}

/// Observation gradients added at grid depths by the time-series recursion.
pub(crate) struct Deposits<'a> {
    pub cost: &'a dyn Cost,
    /// Targets observed at each grid index.
    pub targets: Vec<Vec<&'a StateVector>>,
    pub forward: ForwardRun,
}

/// Pure terminal-free loss used when all signal comes from deposits.
struct NoLoss;

impl LossSpec for NoLoss {
    fn terminal(&self, _z: &StateVector) -> f64 {
        0.0
    }

    fn terminal_grad(&self, z: &StateVector) -> StateVector {
        StateVector::zeros(z.len())
    }

    fn terminal_hessian(&self, z: &StateVector) -> DMatrix<f64> {
        DMatrix::zeros(z.len(), z.len())
    }
}

struct Engine<'a> {
    model: &'a dyn DynamicsModel,
    params: &'a LayerParams,
    loss: &'a dyn LossSpec,
    layout: Layout,
    blocks: Blocks,
    form: DepthAdjointForm,
    n: usize,
    m: usize,
}

impl Engine<'_> {
    fn dim(&self) -> usize {
        self.n + if self.blocks.theta { self.m } else { 0 } + usize::from(self.blocks.depth)
    }

    fn theta_row(&self) -> usize {
        self.n
    }

    fn depth_row(&self) -> usize {
        self.dim() - 1
    }

    /// Parameters active at fine point `g` (the terminal point uses the last layer).
    fn theta_at_point(&self, g: usize) -> &ParamVector {
        let j = g.min(self.layout.last() - 1);
        self.params.layer(self.layout.layer[j])
    }

    fn terminal_value(&self, x0: &StateVector) -> StateVector {
        let mut q = StateVector::zeros(self.dim());
        let grad = self.loss.terminal_grad(x0);
        q.rows_mut(0, self.n).copy_from(&grad);
        if self.blocks.depth {
            let last = self.layout.last();
            let theta = self.theta_at_point(last);
            let t = self.layout.t[last];
            let mut v = grad.dot(&self.model.eval(t, x0, theta));
            if self.form == DepthAdjointForm::Transport {
                v += self.loss.running(t, x0, theta);
            }
            q[self.depth_row()] = v;
        }
        q
    }

    /// `Phi` and the non-transport source `S_Q` at `(t, x0, theta)`.
    fn source(
        &self,
        t: f64,
        x0: &StateVector,
        theta: &ParamVector,
        q: &StateVector,
    ) -> Result<(StateVector, StateVector)> {
        let phi = self.model.eval(t, x0, theta);
        let lambda = q.rows(0, self.n).into_owned();
        let mut s = StateVector::zeros(self.dim());
        let (a, ftheta) = if self.blocks.theta {
            self.model.partials(t, x0, theta)?
        } else {
            (self.model.d_dz(t, x0, theta)?, DMatrix::zeros(0, 0))
        };
        let rz = if self.loss.has_running() {
            self.loss.running_grad_z(t, x0, theta)
        } else {
            StateVector::zeros(self.n)
        };
        s.rows_mut(0, self.n).copy_from(&(a.tr_mul(&lambda) + &rz));
        if self.blocks.theta {
            let mut st = ftheta.tr_mul(&lambda);
            if self.loss.has_running() {
                st += self.loss.running_grad_theta(t, x0, theta);
            }
            s.rows_mut(self.theta_row(), self.m).copy_from(&st);
        }
        if self.blocks.depth && self.form == DepthAdjointForm::AsPrinted {
            let r = self.depth_row();
            s[r] = (&a * &phi).dot(&lambda) + rz.dot(&phi);
        }
        Ok((phi, s))
    }

    /// Rows `[H; K; g^T]` assembled from a direct second-order solve at fine point `g`.
    fn exact_gradient(&self, g: usize, x: &StateVector, so: &SecondOrder) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.dim(), self.n);
        out.rows_mut(0, self.n).copy_from(&so.hessian);
        if self.blocks.theta {
            out.rows_mut(self.theta_row(), self.m).copy_from(so.mixed.as_ref().unwrap());
        }
        if self.blocks.depth {
            let t = self.layout.t[g];
            let theta = self.theta_at_point(g);
            let phi = self.model.eval(t, x, theta);
            let a = self.model.d_dz(t, x, theta)?;
            let mut gt = so.hessian.tr_mul(&phi) + a.tr_mul(&so.lambda);
            if self.loss.has_running() {
                gt += self.loss.running_grad_z(t, x, theta);
            }
            let r = self.depth_row();
            out.row_mut(r).copy_from(&gt.transpose());
        }
        Ok(out)
    }

    fn cropped_terminal(&self, x: &StateVector) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.dim(), self.n);
        let hess = self.loss.terminal_hessian(x);
        if self.blocks.depth {
            let last = self.layout.last();
            let t = self.layout.t[last];
            let theta = self.theta_at_point(last);
            let phi = self.model.eval(t, x, theta);
            let a = self.model.d_dz(t, x, theta)?;
            let mut gt = &hess * &phi + a.tr_mul(&self.loss.terminal_grad(x));
            if self.form == DepthAdjointForm::Transport && self.loss.has_running() {
                gt += self.loss.running_grad_z(t, x, theta);
            }
            let r = self.depth_row();
            out.row_mut(r).copy_from(&gt.transpose());
        }
        out.rows_mut(0, self.n).copy_from(&hess);
        Ok(out)
    }

    /// Cropped update of `[H; K; g^T]` through one layer, dropping third-order terms.
    fn cropped_step(
        &self,
        grad: &DMatrix<f64>,
        t: f64,
        x: &StateVector,
        theta: &ParamVector,
        lambda: &StateVector,
        h: f64,
    ) -> Result<DMatrix<f64>> {
        let n = self.n;
        let (a, ftheta) = if self.blocks.theta {
            self.model.partials(t, x, theta)?
        } else {
            (self.model.d_dz(t, x, theta)?, DMatrix::zeros(0, 0))
        };
        let hess = grad.rows(0, n).into_owned();
        let mut out = grad.clone();
        let mut dh = &hess * &a + a.tr_mul(&hess) + self.model.d2_state(t, x, theta, lambda)?;
        if self.loss.has_running() {
            dh += self.loss.running_hessian_zz(t, x, theta);
        }
        {
            let mut view = out.rows_mut(0, n);
            view += dh * h;
        }
        if self.blocks.theta {
            let k = grad.rows(self.theta_row(), self.m).into_owned();
            let mut dk = &k * &a + ftheta.tr_mul(&hess) + self.model.d2_mixed(t, x, theta, lambda)?;
            if self.loss.has_running() {
                dk += self.loss.running_hessian_theta_z(t, x, theta);
            }
            let mut view = out.rows_mut(self.theta_row(), self.m);
            view += dk * h;
        }
        if self.blocks.depth {
            let r = self.depth_row();
            let g = grad.row(r).into_owned();
            let dg = &g * &a;
            let mut view = out.row_mut(r);
            view += dg * h;
        }
        Ok(out)
    }
}


struct Recorder {
    lambda: Vec<StateVector>,
    jacobians: Vec<DMatrix<f64>>,
    theta: Vec<ParamVector>,
    depth: Vec<f64>,
}

impl Recorder {
    fn new(len: usize) -> Self {
        Self {
            lambda: vec![StateVector::zeros(0); len],
            jacobians: vec![DMatrix::zeros(0, 0); len],
            theta: vec![ParamVector::zeros(0); len],
            depth: vec![0.0; len],
        }
    }

    fn record(&mut self, engine: &Engine, i: usize, q: &StateVector, grad: &DMatrix<f64>) {
        let n = engine.n;
        self.lambda[i] = q.rows(0, n).into_owned();
        self.jacobians[i] = grad.rows(0, n).into_owned();
        if engine.blocks.theta {
            self.theta[i] = q.rows(engine.theta_row(), engine.m).into_owned();
        }
        if engine.blocks.depth {
            self.depth[i] = q[engine.depth_row()];
        }
    }
}

impl Deposits<'_> {
    /// Adds `J_i^T grad C(z_i, y)` for every target at grid index `i`; with
    /// `hessian` also adds `J_i^T hess C J_i` to the tracked `grad_x Lambda`.
    fn apply_center(&self, i: usize, q: &mut StateVector, hessian: Option<&mut DMatrix<f64>>) {
        let n = q.len().min(self.forward.bundle.input.len());
        let z = &self.forward.bundle.outputs[i];
        let jac = &self.forward.bundle.jacobians[i];
        let mut dh = DMatrix::zeros(n, n);
        for y in &self.targets[i] {
            let g = jac.tr_mul(&self.cost.grad(z, y));
            let mut view = q.rows_mut(0, n);
            view += g;
            dh += jac.tr_mul(&(self.cost.hessian(z, y) * jac));
        }
        if let Some(hess) = hessian {
            let mut view = hess.rows_mut(0, n);
            view += dh;
        }
    }

    fn apply_costates(&self, i: usize, qs: &mut [StateVector]) {
        let (_, recorded) = self.forward.costates.as_ref().expect("difference co-states");
        let jac = &self.forward.bundle.jacobians[i];
        let n = jac.nrows();
        for (q, z) in qs.iter_mut().zip(&recorded[i]) {
            for y in &self.targets[i] {
                let mut view = q.rows_mut(0, n);
                view += jac.tr_mul(&self.cost.grad(z, y));
            }
        }
    }
}

const FIXED_POINT_SWEEPS: usize = 3;

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_core(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    x: &StateVector,
    loss: &dyn LossSpec,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
    blocks: Blocks,
    deposits: Option<&Deposits>,
) -> Result<AdjointBundle> {
    check_inputs(model, params, grid, x)?;
    if blocks.theta && params.shared().is_none() {
        return Err(Error::AssumptionViolated(
            "the parameter block must be constant over depth".into(),
        ));
    }
    if blocks.depth && !(model.is_autonomous() && loss.is_autonomous()) {
        return Err(Error::AssumptionViolated(
            "the depth block needs autonomous dynamics and running loss".into(),
        ));
    }
    let layout = Layout::new(grid, options.substeps);
    let engine = Engine {
        model,
        params,
        loss,
        layout,
        blocks,
        form: options.depth_form,
        n: x.len(),
        m: model.param_count(),
    };
    let layout = &engine.layout;
    let last = layout.last();
    let top = grid.len() - 1;
    let mut rec = Recorder::new(grid.len());
    let current = options.adjoint_gradient == AdjointGradientAt::Current;

    match scheme.mode {
        SchemeMode::Exact => {
            let oracle = |g: usize| -> Result<DMatrix<f64>> {
                let so = match deposits {
                    None => direct_second_order(model, params, layout, g, x, loss, blocks.theta)?,
                    Some(dep) => {
                        let targets = dep
                            .targets
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| layout.coarse[*i] >= g)
                            .flat_map(|(_, ys)| ys.iter().copied())
                            .collect();
                        let sum = SumLoss { cost: dep.cost, targets, dim: engine.n };
                        direct_second_order(model, params, layout, g, x, &sum, blocks.theta)?
                    }
                };
                engine.exact_gradient(g, x, &so)
            };
            let mut q = engine.terminal_value(x);
            if let Some(dep) = deposits {
                dep.apply_center(top, &mut q, None);
            }
            let mut grad = oracle(last)?;
            rec.record(&engine, top, &q, &grad);
            for j in (0..last).rev() {
                let t = layout.t[j];
                let theta = params.layer(layout.layer[j]);
                let use_grad = if current { oracle(j)? } else { grad };
                let (phi, s) = engine.source(t, x, theta, &q)?;
                q += (&use_grad * phi + s) * layout.h(j);
                grad = if current { use_grad } else { oracle(j)? };
                ensure_finite(q.as_slice(), "imbedded adjoint")?;
                if let Some(i) = layout.coarse_index(j) {
                    if let Some(dep) = deposits {
                        dep.apply_center(i, &mut q, None);
                    }
                    rec.record(&engine, i, &q, &grad);
                }
            }
        }
        SchemeMode::Cropped => {
            let mut q = engine.terminal_value(x);
            let mut grad = engine.cropped_terminal(x)?;
            if let Some(dep) = deposits {
                dep.apply_center(top, &mut q, Some(&mut grad));
            }
            rec.record(&engine, top, &q, &grad);
            for j in (0..last).rev() {
                let t = layout.t[j];
                let h = layout.h(j);
                let theta = params.layer(layout.layer[j]);
                let lambda = q.rows(0, engine.n).into_owned();
                let next_grad = engine.cropped_step(&grad, t, x, theta, &lambda, h)?;
                let use_grad = if current { &next_grad } else { &grad };
                let (phi, s) = engine.source(t, x, theta, &q)?;
                q += (use_grad * phi + s) * h;
                grad = next_grad;
                ensure_finite(q.as_slice(), "imbedded adjoint")?;
                ensure_finite(grad.as_slice(), "imbedded adjoint Jacobian")?;
                if let Some(i) = layout.coarse_index(j) {
                    if let Some(dep) = deposits {
                        dep.apply_center(i, &mut q, Some(&mut grad));
                    }
                    rec.record(&engine, i, &q, &grad);
                }
            }
        }
        SchemeMode::SymmetricDiff | SchemeMode::NewtonDiff => {
            let kind = if scheme.mode == SchemeMode::SymmetricDiff {
                StencilKind::Symmetric
            } else {
                StencilKind::Newton
            };
            let stencil = Stencil::new(x, &scheme.deltas_for(x)?, kind);
            let mut qs: Vec<StateVector> =
                stencil.points.iter().map(|x0| engine.terminal_value(x0)).collect();
            if let Some(dep) = deposits {
                dep.apply_costates(top, &mut qs);
            }
            let mut grad = stencil.gradient(&qs);
            rec.record(&engine, top, &qs[0], &grad);
            for j in (0..last).rev() {
                let t = layout.t[j];
                let h = layout.h(j);
                let theta = params.layer(layout.layer[j]);
                let parts = stencil
                    .points
                    .iter()
                    .zip(&qs)
                    .map(|(x0, q)| engine.source(t, x0, theta, q))
                    .collect::<Result<Vec<_>>>()?;
                let step = |g: &DMatrix<f64>| -> Vec<StateVector> {
                    qs.iter()
                        .zip(&parts)
                        .map(|(q, (phi, s))| q + (g * phi + s) * h)
                        .collect()
                };
                let mut next = step(&grad);
                if current {
                    for _ in 0..FIXED_POINT_SWEEPS {
                        next = step(&stencil.gradient(&next));
                    }
                }
                qs = next;
                for q in &qs {
                    ensure_finite(q.as_slice(), "adjoint co-state")?;
                }
                let coarse = layout.coarse_index(j);
                if let (Some(i), Some(dep)) = (coarse, deposits) {
                    dep.apply_costates(i, &mut qs);
                }
                grad = stencil.gradient(&qs);
                if let Some(i) = coarse {
                    rec.record(&engine, i, &qs[0], &grad);
                }
            }
        }
    }

    Ok(AdjointBundle {
        input: x.clone(),
        depths: grid.points().to_vec(),
        lambda: rec.lambda,
        lambda_jacobians: rec.jacobians,
        lambda_theta: blocks.theta.then_some(rec.theta),
        lambda_t: blocks.depth.then_some(rec.depth),
    })
}

/// Imbedded adjoints `Lambda(p_i, x)` at every depth, propagated from
/// `Lambda(q, x) = grad T(x)` without any forward pass of the state.
pub fn backward_imbed(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    x: &StateVector,
    loss: &dyn LossSpec,
    scheme: &JacobianScheme,
) -> Result<AdjointBundle> {
    backward_imbed_with(model, params, grid, x, loss, scheme, &ImbedOptions::default())
}

pub fn backward_imbed_with(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    x: &StateVector,
    loss: &dyn LossSpec,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
) -> Result<AdjointBundle> {
    let blocks = Blocks { theta: false, depth: false };
    backward_core(model, params, grid, x, loss, scheme, options, blocks, None)
}

/// Imbedded adjoint with the parameter block `Lambda_theta` (the total-loss
/// gradient in a shared parameter block) and the depth block `Lambda_t`
/// (equal to `-dJ/dp`).
pub fn backward_augmented(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    x: &StateVector,
    loss: &dyn LossSpec,
    scheme: &JacobianScheme,
) -> Result<AdjointBundle> {
    backward_augmented_with(model, params, grid, x, loss, scheme, &ImbedOptions::default())
}

pub fn backward_augmented_with(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    x: &StateVector,
    loss: &dyn LossSpec,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
) -> Result<AdjointBundle> {
    let blocks = Blocks { theta: true, depth: true };
    backward_core(model, params, grid, x, loss, scheme, options, blocks, None)
}

/// `Lambda_theta(p_min, x)` alone, for a shared parameter block.
pub(crate) fn parameter_adjoint(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    x: &StateVector,
    loss: &dyn LossSpec,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
) -> Result<ParamVector> {
    let blocks = Blocks { theta: true, depth: false };
    let bundle = backward_core(model, params, grid, x, loss, scheme, options, blocks, None)?;
    Ok(bundle.lambda_theta.unwrap().swap_remove(0))
}

pub(crate) fn observation_indices<'a>(
    grid: &DepthGrid,
    observations: &'a [(f64, StateVector)],
) -> Result<Vec<Vec<&'a StateVector>>> {
    let mut targets = vec![Vec::new(); grid.len()];
    for (p, y) in observations {
        let i = grid.index_of(*p).ok_or(Error::ObservationOffGrid(*p))?;
        targets[i].push(y);
    }
    Ok(targets)
}

/// Gradient in a shared parameter block of `sum_j C(z(q; p_j, x), y_j)`,
/// one augmented pass per observation depth. Entry `i` sums the
/// observations at depths `p_i` and shallower.
#[allow(clippy::too_many_arguments)]
pub(crate) fn observation_parameter_gradients(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    x: &StateVector,
    targets: &[Vec<&StateVector>],
    cost: &dyn Cost,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
) -> Result<Vec<ParamVector>> {
    let m = model.param_count();
    let top = grid.len() - 1;
    let mut per_depth = vec![ParamVector::zeros(m); grid.len()];
    for i in 0..top {
        if targets[i].is_empty() {
            continue;
        }
        let sub = grid.tail(i)?;
        let sub_params = params.tail(i);
        for y in &targets[i] {
            let loss = crate::domain::CostLoss { cost, target: y };
            per_depth[i] += parameter_adjoint(model, &sub_params, &sub, x, &loss, scheme, options)?;
        }
    }
    for i in (0..top).rev() {
        let shallower = per_depth[i + 1].clone();
        per_depth[i] += shallower;
    }
    Ok(per_depth)
}

/// Time-series adjoint for observations `(p_j, y_j)` on grid points.
///
/// `Lambda` follows `Lambda_i = Lambda_{i+1} + J_i^T grad C(z_i, y_i)
/// + h_i [grad_x Lambda . Phi + grad_z f^T Lambda_{i+1}]` with a co-running
/// forward bundle for `z_i` and `J_i`. When the parameters are shared,
/// `Lambda_theta_i` is the parameter gradient of the summed endpoint cost
/// `sum_{p_j >= p_i} C(z(q; p_j, x), y_j)`.
pub fn backward_timeseries(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    x: &StateVector,
    observations: &[(f64, StateVector)],
    cost: &dyn Cost,
    scheme: &JacobianScheme,
) -> Result<AdjointBundle> {
    backward_timeseries_with(model, params, grid, x, observations, cost, scheme, &ImbedOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn backward_timeseries_with(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    x: &StateVector,
    observations: &[(f64, StateVector)],
    cost: &dyn Cost,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
) -> Result<AdjointBundle> {
    let targets = observation_indices(grid, observations)?;
    let forward = forward_run(model, params, x, grid, scheme, options)?;
    let deposits = Deposits { cost, targets: targets.clone(), forward };
    let blocks = Blocks { theta: false, depth: false };
    let mut bundle =
        backward_core(model, params, grid, x, &NoLoss, scheme, options, blocks, Some(&deposits))?;
    if params.shared().is_some() {
        bundle.lambda_theta = Some(observation_parameter_gradients(
            model, params, grid, x, &targets, cost, scheme, options,
        )?);
    }
    Ok(bundle)
}

/// `|grad_theta R + grad_theta f^T Lambda|` at every depth, evaluated at
/// `(p_i, x, Psi(p_i))`; zero at a first-order optimum.
pub fn optimality_residual(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    x: &StateVector,
    loss: &dyn LossSpec,
    adjoint: &AdjointBundle,
) -> Result<Vec<f64>> {
    if model.param_count() == 0 {
        return Err(Error::SchemeUnavailable("model has no parameters to optimize".into()));
    }
    if adjoint.len() != grid.len() {
        return Err(Error::LengthMismatch(format!(
            "adjoint has {} depths, grid has {}",
            adjoint.len(),
            grid.len()
        )));
    }
    let p = grid.points();
    (0..grid.len())
        .map(|i| {
            let theta = params.layer(i.min(grid.layers() - 1));
            let mut r = model.d_dtheta(p[i], x, theta)?.tr_mul(&adjoint.lambda[i]);
            if loss.has_running() {
                r += loss.running_grad_theta(p[i], x, theta);
            }
            Ok(r.norm())
        })
        .collect()
}

/// CSV view: depth, adjoint components, optional residual norm and depth block.
pub fn adjoint_table(bundle: &AdjointBundle, residual: Option<&[f64]>) -> Table {
    let n = bundle.input.len();
    let mut header = vec!["depth".to_string()];
    header.extend((0..n).map(|k| format!("lambda{k}")));
    header.push("residual".into());
    header.push("lambda_t".into());
    let rows = (0..bundle.len())
        .map(|i| {
            let mut row = vec![Some(bundle.depths[i])];
            row.extend(bundle.lambda[i].iter().map(|v| Some(*v)));
            row.push(residual.map(|r| r[i]));
            row.push(bundle.lambda_t.as_ref().map(|l| l[i]));
            row
        })
        .collect();
    Table { header, rows }
}
