//! Forward passes: direct integration in `t` and the depth recursion of the
//! imbedded network.

use nalgebra::DMatrix;

use crate::domain::{
    Cost, DepthGrid, DynamicsModel, ImbedOptions, JacobianScheme, LayerParams, Layout, SchemeMode,
    StateBundle, StateVector, ThetaSchedule,
};
use crate::error::{ensure_finite, Error, Result};
use crate::io::Table;
use crate::jacobian::{cropped_jacobian_step, direct_state_jacobian, Stencil, StencilKind};

/// Fixed-step integrator for direct solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

/// A direct solve recorded at every step (Euler only).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<StateVector>,
}

fn step_times(p: f64, q: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if p.is_nan() || q.is_nan() || q < p {
        return Err(Error::InvalidArgument(format!("need q >= p, got p = {p}, q = {q}")));
    }
    let mut t: Vec<f64> = (0..=steps).map(|k| p + (q - p) * k as f64 / steps as f64).collect();
    t[steps] = q;
    Ok(t)
}

/// Euler path of `dz/dt = f(t, z, theta(t))` from `z(p) = x`. Each step takes
/// its parameters from the schedule at the step midpoint.
pub fn forward_direct_trajectory(
    model: &dyn DynamicsModel,
    schedule: &dyn ThetaSchedule,
    x: &StateVector,
    p: f64,
    q: f64,
    steps: usize,
) -> Result<Trajectory> {
    let t = step_times(p, q, steps)?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut z = x.clone();
    states.push(z.clone());
    for k in 0..steps {
        let h = t[k + 1] - t[k];
        let theta = schedule.theta_at(t[k] + 0.5 * h);
        let f = model.eval(t[k], &z, theta);
        z.axpy(h, &f, 1.0);
        ensure_finite(z.as_slice(), "direct solve")?;
        states.push(z.clone());
    }
    Ok(Trajectory { t, states })
}

/// `z(q; p, x)` by `steps` fixed steps of Euler or RK4.
pub fn forward_direct(
    model: &dyn DynamicsModel,
    schedule: &dyn ThetaSchedule,
    x: &StateVector,
    p: f64,
    q: f64,
    steps: usize,
    method: Integrator,
) -> Result<StateVector> {
    let t = step_times(p, q, steps)?;
    let mut z = x.clone();
    for k in 0..steps {
        let h = t[k + 1] - t[k];
        let theta = schedule.theta_at(t[k] + 0.5 * h);
        match method {
            Integrator::Euler => {
                let f = model.eval(t[k], &z, theta);
                z.axpy(h, &f, 1.0);
            }
            Integrator::Rk4 => {
                let k1 = model.eval(t[k], &z, theta);
                let k2 = model.eval(t[k] + 0.5 * h, &(&z + &k1 * (0.5 * h)), theta);
                let k3 = model.eval(t[k] + 0.5 * h, &(&z + &k2 * (0.5 * h)), theta);
                let k4 = model.eval(t[k + 1], &(&z + &k3 * h), theta);
                z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
        }
        ensure_finite(z.as_slice(), "direct solve")?;
    }
    Ok(z)
}

/// Both sides of the imbedding rule `z(q; p2, x) = z(q; p1, z(p1; p2, x))`,
/// each solved directly with steps proportional to interval length.
#[allow(clippy::too_many_arguments)]
pub fn compose_imbedding(
    model: &dyn DynamicsModel,
    schedule: &dyn ThetaSchedule,
    x: &StateVector,
    p2: f64,
    p1: f64,
    q: f64,
    steps: usize,
    method: Integrator,
) -> Result<(StateVector, StateVector)> {
    if !(p2 < p1 && p1 < q) {
        return Err(Error::InvalidArgument(format!("need p2 < p1 < q, got {p2}, {p1}, {q}")));
    }
    let span = q - p2;
    let split = |a: f64, b: f64| (((b - a) / span * steps as f64).round() as usize).max(1);
    let lhs = forward_direct(model, schedule, x, p2, q, steps, method)?;
    let mid = forward_direct(model, schedule, x, p2, p1, split(p2, p1), method)?;
    let rhs = forward_direct(model, schedule, &mid, p1, q, split(p1, q), method)?;
    Ok((lhs, rhs))
}

pub(crate) fn check_inputs(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    x: &StateVector,
) -> Result<()> {
    crate::domain::validate_state(x)?;
    if x.len() != model.state_dim() {
        return Err(Error::LengthMismatch(format!(
            "input of length {} for a model of dimension {}",
            x.len(),
            model.state_dim()
        )));
    }
    params.validate(model, grid)
}

/// Forward pass plus, for the difference schemes, the co-states at every grid depth.
pub(crate) struct ForwardRun {
    pub bundle: StateBundle,
    pub costates: Option<(Stencil, Vec<Vec<StateVector>>)>,
}

pub(crate) fn forward_run(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    x: &StateVector,
    grid: &DepthGrid,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
) -> Result<ForwardRun> {
    check_inputs(model, params, grid, x)?;
    let layout = Layout::new(grid, options.substeps);
    let n = x.len();
    let mut outputs = vec![StateVector::zeros(0); grid.len()];
    let mut jacobians = vec![DMatrix::zeros(0, 0); grid.len()];
    let last = layout.last();
    outputs[grid.len() - 1] = x.clone();
    jacobians[grid.len() - 1] = DMatrix::identity(n, n);
    let mut costates = None;

    match scheme.mode {
        SchemeMode::Exact | SchemeMode::Cropped => {
            let mut z = x.clone();
            let mut jac = DMatrix::identity(n, n);
            for j in (0..last).rev() {
                let theta = params.layer(layout.layer[j]);
                let h = layout.h(j);
                let phi = model.eval(layout.t[j], x, theta);
                z += &jac * phi * h;
                jac = if scheme.mode == SchemeMode::Exact {
                    direct_state_jacobian(model, params, &layout, j, x)?
                } else {
                    cropped_jacobian_step(&jac, &model.d_dz(layout.t[j], x, theta)?, h)
                };
                ensure_finite(z.as_slice(), "imbedded forward state")?;
                ensure_finite(jac.as_slice(), "imbedded forward Jacobian")?;
                if let Some(i) = layout.coarse_index(j) {
                    outputs[i] = z.clone();
                    jacobians[i] = jac.clone();
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
            let mut states = stencil.points.clone();
            let mut jac = DMatrix::identity(n, n);
            let mut recorded = vec![Vec::new(); grid.len()];
            recorded[grid.len() - 1] = states.clone();
            for j in (0..last).rev() {
                let theta = params.layer(layout.layer[j]);
                let h = layout.h(j);
                for (z, x0) in states.iter_mut().zip(&stencil.points) {
                    let phi = model.eval(layout.t[j], x0, theta);
                    *z += &jac * phi * h;
                    ensure_finite(z.as_slice(), "difference co-state")?;
                }
                jac = stencil.gradient(&states);
                if let Some(i) = layout.coarse_index(j) {
                    outputs[i] = states[0].clone();
                    jacobians[i] = jac.clone();
                    recorded[i] = states.clone();
                }
            }
            costates = Some((stencil, recorded));
        }
    }
    Ok(ForwardRun {
        bundle: StateBundle { input: x.clone(), depths: grid.points().to_vec(), outputs, jacobians },
        costates,
    })
}

/// Outputs `z(q; p_i, x)` of the networks of every grid depth from one
/// recursion `z_i = z_{i+1} + h_i J_{i+1} Phi(p_i, x)`.
pub fn forward_imbed(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    x: &StateVector,
    grid: &DepthGrid,
    scheme: &JacobianScheme,
) -> Result<StateBundle> {
    forward_imbed_with(model, params, x, grid, scheme, &ImbedOptions::default())
}

pub fn forward_imbed_with(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    x: &StateVector,
    grid: &DepthGrid,
    scheme: &JacobianScheme,
    options: &ImbedOptions,
) -> Result<StateBundle> {
    Ok(forward_run(model, params, x, grid, scheme, options)?.bundle)
}

/// `C(z_i, y_i)` at every depth; a single target is compared against every depth.
pub fn depth_profile(bundle: &StateBundle, cost: &dyn Cost, targets: &[StateVector]) -> Result<Vec<f64>> {
    match targets.len() {
        1 => Ok(bundle.outputs.iter().map(|z| cost.value(z, &targets[0])).collect()),
        m if m == bundle.len() => {
            Ok(bundle.outputs.iter().zip(targets).map(|(z, y)| cost.value(z, y)).collect())
        }
        m => Err(Error::LengthMismatch(format!("{m} targets for {} depths", bundle.len()))),
    }
}

/// `|d_p z + J Phi|` at interior depths, with `d_p z` from centred differences
/// of the bundle. Small values confirm the forward imbedding relation.
pub fn depth_relation_residual(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    bundle: &StateBundle,
) -> Vec<f64> {
    let p = grid.points();
    (1..grid.len() - 1)
        .map(|i| {
            let dz = (&bundle.outputs[i + 1] - &bundle.outputs[i - 1]) / (p[i + 1] - p[i - 1]);
            let phi = model.eval(p[i], &bundle.input, params.layer(i));
            (dz + &bundle.jacobians[i] * phi).norm()
        })
        .collect()
}

/// CSV view of a bundle: depth, output components and optional per-depth loss.
pub fn bundle_table(bundle: &StateBundle, losses: Option<&[f64]>) -> Table {
    let n = bundle.input.len();
    let mut header = vec!["depth".to_string()];
    header.extend((0..n).map(|k| format!("z{k}")));
    header.push("loss".into());
    let rows = (0..bundle.len())
        .map(|i| {
            let mut row = vec![Some(bundle.depths[i])];
            row.extend(bundle.outputs[i].iter().map(|v| Some(*v)));
            row.push(losses.map(|l| l[i]));
            row
        })
        .collect();
    Table { header, rows }
}
