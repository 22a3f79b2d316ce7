//! Property suites comparing the imbedded passes against closed forms,
//! direct solves and finite differences.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjoint::{adjoint_direct, backward_imbed, direct_total_loss, optimality_residual};
use crate::domain::{
    Bolza, DepthGrid, DynamicsModel, JacobianScheme, LayerParams, LossSpec, ParamVector,
    SquaredError, StateVector,
};
use crate::dynamics::{
    expm, linear_closed_form, ControlDynamics, LinearDynamics, LinearParamDynamics, MlpDynamics,
    ProjectileDynamics,
};
use crate::error::{Error, Result};
use crate::jacobian::newton_diff_bundle;
use crate::propagate::{compose_imbedding, forward_direct_trajectory, forward_imbed, depth_relation_residual, Integrator};
use crate::train::{adjoint_update_direction, grad_through_system, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    /// Passes when the measured value is at most the bound.
    AtMost,
    /// Passes when the measured value is at least the bound.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub kind: Bound,
    /// Error tolerances follow `--tol`; structural thresholds do not.
    pub tolerance: bool,
}

impl Check {
    pub fn error(name: &str, measured: f64, tol: f64) -> Self {
        Self { name: name.into(), measured, bound: tol, kind: Bound::AtMost, tolerance: true }
    }

    pub fn at_most(name: &str, measured: f64, bound: f64) -> Self {
        Self { name: name.into(), measured, bound, kind: Bound::AtMost, tolerance: false }
    }

    pub fn at_least(name: &str, measured: f64, bound: f64) -> Self {
        Self { name: name.into(), measured, bound, kind: Bound::AtLeast, tolerance: false }
    }

    pub fn passed(&self) -> bool {
        match self.kind {
            Bound::AtMost => self.measured <= self.bound,
            Bound::AtLeast => self.measured >= self.bound,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.kind {
            Bound::AtMost => "<=",
            Bound::AtLeast => ">=",
        };
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {:.3e} {op} {:.3e}", self.name, self.measured, self.bound)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let verdict = if self.passed() { "passed" } else { "failed" };
        write!(f, "suite {} {verdict}", self.suite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Theorem1,
    Theorem2,
    Theorem3,
    ImbeddingRule,
    Gradients,
    Convergence,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Theorem1,
        Suite::Theorem2,
        Suite::Theorem3,
        Suite::ImbeddingRule,
        Suite::Gradients,
        Suite::Convergence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Theorem2 => "theorem2",
            Suite::Theorem3 => "theorem3",
            Suite::ImbeddingRule => "imbedding_rule",
            Suite::Gradients => "gradients",
            Suite::Convergence => "convergence",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite {s:?}")))
    }
}

/// Runs a suite. `tol` replaces every error tolerance of the suite.
pub fn run_suite(suite: Suite, tol: Option<f64>, seed: u64) -> Result<Report> {
    let mut checks = match suite {
        Suite::Theorem1 => theorem1(seed)?,
        Suite::Theorem2 => theorem2(seed)?,
        Suite::Theorem3 => theorem3(seed)?,
        Suite::ImbeddingRule => imbedding_rule(seed)?,
        Suite::Gradients => gradients(seed)?,
        Suite::Convergence => convergence()?,
    };
    if let Some(tol) = tol {
        for c in checks.iter_mut().filter(|c| c.tolerance) {
            c.bound = tol;
        }
    }
    Ok(Report { suite, checks })
}

pub fn rel_err(a: &StateVector, b: &StateVector) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Non-normal damped oscillator with drift, used across the suites.
pub fn linear_benchmark() -> LinearDynamics {
    LinearDynamics::new(
        DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.2]),
        StateVector::from_vec(vec![0.3, -0.1]),
    )
    .expect("square system")
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> StateVector {
    StateVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

/// Scalar growth `dz/dt = z` from `x = 1` on `[-1, 0]`: relative error of the
/// imbedded output with the exact scheme.
pub fn scalar_growth_error(layers: usize) -> Result<f64> {
    let model = LinearDynamics::scalar(1.0);
    let grid = DepthGrid::uniform(-1.0, 0.0, layers)?;
    let x = StateVector::from_vec(vec![1.0]);
    let bundle = forward_imbed(&model, &LayerParams::Shared(ParamVector::zeros(0)), &x, &grid, &JacobianScheme::exact())?;
    let exact = 1f64.exp();
    Ok((bundle.outputs[0][0] - exact).abs() / exact)
}

fn theorem1(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = vec![Check::error("scalar growth, 1000 layers", scalar_growth_error(1000)?, 1e-2)];
    let model = linear_benchmark();
    let x = random_state(&mut rng, 2);
    let grid = DepthGrid::uniform(-1.0, 0.0, 1000)?;
    let params = LayerParams::Shared(ParamVector::zeros(0));
    for (label, scheme) in [
        ("exact", JacobianScheme::exact()),
        ("cropped", JacobianScheme::cropped()),
        ("symmetric", JacobianScheme::symmetric()),
    ] {
        let bundle = forward_imbed(&model, &params, &x, &grid, &scheme)?;
        let mut worst: f64 = 0.0;
        for (i, p) in grid.points().iter().enumerate().step_by(50) {
            let reference = linear_closed_form(&model.a, &model.b, &x, *p, 0.0)?;
            worst = worst.max(rel_err(&bundle.outputs[i], &reference));
        }
        checks.push(Check::error(&format!("2-d linear, {label}, every 50th depth"), worst, 1e-2));
        if label == "exact" {
            let res = depth_relation_residual(&model, &params, &grid, &bundle);
            let scale = model.eval(0.0, &x, &ParamVector::zeros(0)).norm();
            let worst = res.iter().fold(0.0, |a: f64, r| a.max(*r)) / scale;
            checks.push(Check::error("depth relation residual, relative", worst, 1e-2));
        }
    }
    Ok(checks)
}

/// Central differences of `f` at `x` with step `eps`.
pub fn central_gradient(f: &dyn Fn(&StateVector) -> Result<f64>, x: &StateVector, eps: f64) -> Result<StateVector> {
    let mut g = StateVector::zeros(x.len());
    for k in 0..x.len() {
        let mut a = x.clone();
        let mut b = x.clone();
        a[k] += eps;
        b[k] -= eps;
        g[k] = (f(&a)? - f(&b)?) / (2.0 * eps);
    }
    Ok(g)
}

/// `Lambda(p_min)` against the direct adjoint and finite differences of the
/// direct total loss.
pub fn adjoint_equivalence_errors(
    model: &dyn DynamicsModel,
    params: &ParamVector,
    x: &StateVector,
    loss: &dyn LossSpec,
    layers: usize,
) -> Result<(f64, f64)> {
    let grid = DepthGrid::uniform(-1.0, 0.0, layers)?;
    let shared = LayerParams::Shared(params.clone());
    let bundle = backward_imbed(model, &shared, &grid, x, loss, &JacobianScheme::exact())?;
    let traj = forward_direct_trajectory(model, params, x, -1.0, 0.0, layers)?;
    let direct = adjoint_direct(model, params, &traj, loss)?;
    let total = |x: &StateVector| direct_total_loss(model, params, x, -1.0, 0.0, layers, loss);
    let fd = central_gradient(&total, x, 1e-5)?;
    Ok((rel_err(&bundle.lambda[0], &direct.lambda[0]), rel_err(&bundle.lambda[0], &fd)))
}

/// Input and state-penalized loss for adjoint comparisons on the linear
/// benchmark. The first-order error constant is instance dependent and grows
/// where `Lambda` is small, so a fixed well-scaled instance is used.
pub fn linear_adjoint_instance() -> (StateVector, Bolza) {
    let x = StateVector::from_vec(vec![0.7, -0.4]);
    let loss = Bolza::half_squared(StateVector::from_vec(vec![0.2, 0.5])).with_state_penalty(0.3);
    (x, loss)
}

/// `[2, 8, 2]` tanh network and a fixed input and target.
pub fn mlp_benchmark(seed: u64) -> (MlpDynamics, ParamVector, StateVector, StateVector) {
    let model = MlpDynamics::new(vec![2, 8, 2], false).expect("valid sizes");
    let theta = model.init(seed);
    (model, theta, StateVector::from_vec(vec![0.6, -0.3]), StateVector::from_vec(vec![0.1, 0.4]))
}

fn theorem2(seed: u64) -> Result<Vec<Check>> {
    let (x, loss) = linear_adjoint_instance();
    let (a, b) = adjoint_equivalence_errors(&linear_benchmark(), &ParamVector::zeros(0), &x, &loss, 1000)?;
    let mut checks = vec![
        Check::error("linear: imbedded vs direct adjoint", a, 1e-3),
        Check::error("linear: imbedded vs finite differences", b, 1e-3),
    ];
    let (model, theta, x, y) = mlp_benchmark(seed);
    let (a, b) = adjoint_equivalence_errors(&model, &theta, &x, &Bolza::half_squared(y), 400)?;
    checks.push(Check::error("mlp: imbedded vs direct adjoint", a, 1e-3));
    checks.push(Check::error("mlp: imbedded vs finite differences", b, 1e-3));
    Ok(checks)
}

/// Residual at `p_min` for `f = theta`, `R = theta^2 / 2`,
/// `T = (z(q) - y)^2 / 2` on `[-1, 0]`, where `theta* = (y - x) / 2`.
pub fn control_optimality_residual(x: f64, y: f64, theta: f64) -> Result<f64> {
    let model = ControlDynamics { n: 1 };
    let grid = DepthGrid::uniform(-1.0, 0.0, 10)?;
    let params = LayerParams::Shared(ParamVector::from_vec(vec![theta]));
    let x = StateVector::from_vec(vec![x]);
    let loss = Bolza::half_squared(StateVector::from_vec(vec![y])).with_control_penalty(1.0);
    let adjoint = backward_imbed(&model, &params, &grid, &x, &loss, &JacobianScheme::exact())?;
    Ok(optimality_residual(&model, &params, &grid, &x, &loss, &adjoint)?[0])
}

fn theorem3(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: f64 = rng.gen_range(-1.0..1.0);
    let y: f64 = rng.gen_range(-1.0..1.0);
    let opt = (y - x) / 2.0;
    Ok(vec![
        Check::error("residual at the optimum", control_optimality_residual(x, y, opt)?, 1e-6),
        Check::at_least("residual off the optimum", control_optimality_residual(x, y, opt + 0.1)?, 0.1),
    ])
}

/// Accuracy target of one RK4 solve in the imbedding-rule comparison.
pub const SINGLE_SOLVE_TOL: f64 = 1e-9;
const RULE_STEPS: usize = 400;

/// Largest violation of the imbedding rule over `pairs` random splits, and the
/// largest single-solve error against the closed form.
pub fn imbedding_rule_errors(
    model: &dyn DynamicsModel,
    closed: &dyn Fn(&StateVector, f64, f64) -> Result<StateVector>,
    seed: u64,
    pairs: usize,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = ParamVector::zeros(0);
    let (mut rule, mut single): (f64, f64) = (0.0, 0.0);
    for _ in 0..pairs {
        let a: f64 = rng.gen_range(-1.0..0.0);
        let b: f64 = rng.gen_range(-1.0..0.0);
        let (p2, p1) = (a.min(b), a.max(b));
        if p1 - p2 < 1e-3 || p1 > -1e-3 {
            continue;
        }
        let x = random_state(&mut rng, model.state_dim());
        let (lhs, rhs) = compose_imbedding(model, &theta, &x, p2, p1, 0.0, RULE_STEPS, Integrator::Rk4)?;
        rule = rule.max((&lhs - &rhs).norm() / lhs.norm().max(1.0));
        single = single.max((&lhs - closed(&x, p2, 0.0)?).norm() / lhs.norm().max(1.0));
    }
    Ok((rule, single))
}

fn imbedding_rule(seed: u64) -> Result<Vec<Check>> {
    let linear = linear_benchmark();
    let closed = |x: &StateVector, p: f64, q: f64| linear_closed_form(&linear.a, &linear.b, x, p, q);
    let (rule, single) = imbedding_rule_errors(&linear, &closed, seed, 20)?;
    let projectile = ProjectileDynamics::new(9.81)?;
    let closed_p = |x: &StateVector, p: f64, q: f64| Ok(crate::dynamics::projectile_closed_form(9.81, x, p, q));
    let (rule_p, single_p) = imbedding_rule_errors(&projectile, &closed_p, seed.wrapping_add(1), 20)?;
    Ok(vec![
        Check::at_most("linear: single solve error", single, SINGLE_SOLVE_TOL),
        Check::error("linear: rule violation", rule, 2.0 * SINGLE_SOLVE_TOL),
        Check::at_most("projectile: single solve error", single_p, SINGLE_SOLVE_TOL),
        Check::error("projectile: rule violation", rule_p, 2.0 * SINGLE_SOLVE_TOL),
    ])
}

/// Bias of the forward quotient of the total loss against the exact
/// gradient, for each `delta`.
pub fn newton_bias_ladder(deltas: &[f64]) -> Result<Vec<f64>> {
    let model = linear_benchmark();
    let theta = ParamVector::zeros(0);
    let x = StateVector::from_vec(vec![0.4, -0.7]);
    let loss = Bolza::half_squared(StateVector::from_vec(vec![1.0, 0.5]));
    let steps = 200;
    let traj = forward_direct_trajectory(&model, &theta, &x, -1.0, 0.0, steps)?;
    let exact = adjoint_direct(&model, &theta, &traj, &loss)?.lambda[0].clone();
    let total = |x: &StateVector| -> Result<StateVector> {
        Ok(StateVector::from_vec(vec![direct_total_loss(&model, &theta, x, -1.0, 0.0, steps, &loss)?]))
    };
    deltas
        .iter()
        .map(|d| {
            let (_, jac) = newton_diff_bundle(&total, &x, &[*d, *d])?;
            let est = StateVector::from_iterator(2, jac.row(0).iter().copied());
            Ok((est - &exact).norm())
        })
        .collect()
}

/// Output error of the cropped scheme against the closed form at each layer count.
pub fn cropped_error_ladder(layers: &[usize]) -> Result<Vec<f64>> {
    let model = linear_benchmark();
    let x = StateVector::from_vec(vec![0.4, -0.7]);
    let reference = linear_closed_form(&model.a, &model.b, &x, -1.0, 0.0)?;
    layers
        .iter()
        .map(|&n| {
            let grid = DepthGrid::uniform(-1.0, 0.0, n)?;
            let params = LayerParams::Shared(ParamVector::zeros(0));
            let bundle = forward_imbed(&model, &params, &x, &grid, &JacobianScheme::cropped())?;
            Ok(rel_err(&bundle.outputs[0], &reference))
        })
        .collect()
}

/// Largest relative gap between `grad_through_system` and central
/// differences of the batch loss, over all parameters.
pub fn through_system_fd_error(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    grid: &DepthGrid,
    batch: &[Sample],
    scheme: &JacobianScheme,
) -> Result<f64> {
    let cost = SquaredError::mse(model.state_dim());
    let options = Default::default();
    let (_, grad) = grad_through_system(model, params, grid, batch, &cost, scheme, &options)?;
    let blocks: Vec<ParamVector> = params.blocks().into_iter().cloned().collect();
    let gblocks: Vec<ParamVector> = grad.blocks().into_iter().cloned().collect();
    let rebuild = |blocks: Vec<ParamVector>| match params {
        LayerParams::Shared(_) => LayerParams::Shared(blocks[0].clone()),
        LayerParams::PerLayer(_) => LayerParams::PerLayer(blocks),
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for b in 0..blocks.len() {
        for k in 0..blocks[b].len() {
            let eps = 1e-6;
            let mut plus = blocks.clone();
            let mut minus = blocks.clone();
            plus[b][k] += eps;
            minus[b][k] -= eps;
            let lp = grad_through_system(model, &rebuild(plus), grid, batch, &cost, scheme, &options)?.0;
            let lm = grad_through_system(model, &rebuild(minus), grid, batch, &cost, scheme, &options)?.0;
            let fd = (lp - lm) / (2.0 * eps);
            num += (fd - gblocks[b][k]).powi(2);
            den += fd * fd;
        }
    }
    Ok((num / den.max(1e-300)).sqrt())
}

/// A small rotating-vector batch supervised at every depth of a 6-point grid.
pub fn small_rotation_batch(seed: u64) -> (DepthGrid, Vec<Sample>) {
    let grid = DepthGrid::uniform(-1.0, 0.0, 5).expect("valid grid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = (0..3)
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let x = StateVector::from_vec(vec![a.cos(), a.sin()]);
            let targets = grid
                .points()
                .iter()
                .map(|&p| {
                    let (s, c) = (-1.2 * p).sin_cos();
                    (p, StateVector::from_vec(vec![c * x[0] - s * x[1], s * x[0] + c * x[1]]))
                })
                .collect();
            Sample::new(x, targets)
        })
        .collect();
    (grid, batch)
}

/// Cosine between the adjoint update direction and the through-system
/// gradient for a linear-parameter model with the exact scheme.
pub fn adjoint_direction_cosine(layers: usize, seed: u64) -> Result<f64> {
    let model = LinearParamDynamics { n: 2 };
    let bench = linear_benchmark();
    let theta = LinearParamDynamics::pack(&bench.a, &bench.b);
    let params = LayerParams::Shared(theta);
    let grid = DepthGrid::uniform(-1.0, 0.0, layers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch: Vec<Sample> = (0..2)
        .map(|_| Sample::new(random_state(&mut rng, 2), vec![(-1.0, random_state(&mut rng, 2))]))
        .collect();
    let cost = SquaredError::mse(2);
    let scheme = JacobianScheme::exact();
    let options = Default::default();
    let (_, a) = adjoint_update_direction(&model, &params, &grid, &batch, &cost, &scheme, &options)?;
    let (_, b) = grad_through_system(&model, &params, &grid, &batch, &cost, &scheme, &options)?;
    let (a, b) = (a.shared().unwrap(), b.shared().unwrap());
    Ok(a.dot(b) / (a.norm() * b.norm()))
}

fn gradients(seed: u64) -> Result<Vec<Check>> {
    let model = linear_benchmark();
    let params = LayerParams::Shared(ParamVector::zeros(0));
    let grid = DepthGrid::uniform(-1.0, 0.0, 200)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_state(&mut rng, 2);
    let exact = forward_imbed(&model, &params, &x, &grid, &JacobianScheme::exact())?;
    let sym = forward_imbed(&model, &params, &x, &grid, &JacobianScheme::symmetric())?;
    let gap = exact
        .outputs
        .iter()
        .zip(&sym.outputs)
        .map(|(a, b)| rel_err(b, a))
        .fold(0.0, f64::max);
    let mut checks = vec![Check::error("symmetric vs exact outputs", gap, 1e-8)];

    let bias = newton_bias_ladder(&[4e-2, 2e-2, 1e-2, 5e-3, 2.5e-3])?;
    let worst = bias.windows(2).map(|w| (w[0] / w[1] - 2.0).abs() / 2.0).fold(0.0, f64::max);
    checks.push(Check::at_most("newton bias halving with delta, worst deviation", worst, 0.1));

    let ladder = cropped_error_ladder(&[10, 30, 100, 300, 1000])?;
    let worst = ladder.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    checks.push(Check::at_most("cropped error ratio per refinement", worst, 0.999));

    let mlp = MlpDynamics::new(vec![2, 6, 2], false)?;
    let theta = mlp.init(seed);
    let (grid, batch) = small_rotation_batch(seed);
    for (label, scheme) in [
        ("cropped", JacobianScheme::cropped()),
        ("exact", JacobianScheme::exact()),
        ("symmetric", JacobianScheme::symmetric()),
        ("newton", JacobianScheme::newton()),
    ] {
        let err = through_system_fd_error(&mlp, &LayerParams::Shared(theta.clone()), &grid, &batch, &scheme)?;
        checks.push(Check::error(&format!("through-system gradient, {label}, shared"), err, 1e-3));
    }
    let per_layer = LayerParams::PerLayer(vec![theta.clone(); grid.layers()]);
    let err = through_system_fd_error(&mlp, &per_layer, &grid, &batch, &JacobianScheme::cropped())?;
    checks.push(Check::error("through-system gradient, cropped, per layer", err, 1e-3));
    checks.push(Check::at_least("adjoint update cosine", adjoint_direction_cosine(400, seed)?, 0.99));
    Ok(checks)
}

/// Errors of the scalar growth benchmark over a layer ladder.
pub fn forward_ladder(layers: &[usize]) -> Result<Vec<f64>> {
    layers.iter().map(|&n| scalar_growth_error(n)).collect()
}

/// Error of `Lambda(p_min)` against the continuous adjoint
/// `exp(A^T (q - p)) (z(q) - y)` of the linear benchmark.
pub fn backward_ladder(layers: &[usize]) -> Result<Vec<f64>> {
    let model = linear_benchmark();
    let x = StateVector::from_vec(vec![0.4, -0.7]);
    let y = StateVector::from_vec(vec![1.0, 0.5]);
    let end = linear_closed_form(&model.a, &model.b, &x, -1.0, 0.0)?;
    let reference = expm(&model.a.transpose()) * (end - &y);
    let loss = Bolza::half_squared(y);
    layers
        .iter()
        .map(|&n| {
            let grid = DepthGrid::uniform(-1.0, 0.0, n)?;
            let params = LayerParams::Shared(ParamVector::zeros(0));
            let bundle = backward_imbed(&model, &params, &grid, &x, &loss, &JacobianScheme::cropped())?;
            Ok(rel_err(&bundle.lambda[0], &reference))
        })
        .collect()
}

fn convergence() -> Result<Vec<Check>> {
    let layers = [125, 250, 500, 1000, 2000];
    let fwd = forward_ladder(&layers)?;
    let bwd = backward_ladder(&layers)?;
    let order = |errs: &[f64]| errs.windows(2).map(|w| (w[0] / w[1] - 2.0).abs() / 2.0).fold(0.0, f64::max);
    Ok(vec![
        Check::error("forward error at 2000 layers", fwd[4], 1e-3),
        Check::at_most("forward halving, worst deviation", order(&fwd), 0.1),
        Check::error("backward error at 2000 layers", bwd[4], 1e-3),
        Check::at_most("backward halving, worst deviation", order(&bwd), 0.1),
    ])
}
