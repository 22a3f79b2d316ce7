//! Shared value types: states, parameters, depth grids, the dynamics and loss
//! interfaces, propagated bundles and Jacobian scheme selection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden state, network input or target in R^N.
pub type StateVector = DVector<f64>;
/// Flat parameter block in R^M (M may be zero).
pub type ParamVector = DVector<f64>;

/// Checks `N >= 1` and finiteness of a state.
pub fn validate_state(z: &StateVector) -> Result<()> {
    if z.is_empty() {
        return Err(Error::LengthMismatch("state vector must have N >= 1".into()));
    }
    crate::error::ensure_finite(z.as_slice(), "state vector")
}

/// Validates evaluation depths `p_1 < ... < p_n`.
pub fn validate_grid(points: &[f64]) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints(points.len()));
    }
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFiniteEntry(i));
    }
    for i in 1..points.len() {
        let h = points[i] - points[i - 1];
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::NonMonotoneGrid { index: i });
        }
    }
    Ok(())
}

/// Ordered evaluation depths; the last point is the terminal depth `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DepthGrid {
    points: Vec<f64>,
}

impl TryFrom<Vec<f64>> for DepthGrid {
    type Error = Error;
    fn try_from(points: Vec<f64>) -> Result<Self> {
        DepthGrid::new(points)
    }
}

impl From<DepthGrid> for Vec<f64> {
    fn from(grid: DepthGrid) -> Self {
        grid.points
    }
}

impl DepthGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        validate_grid(&points)?;
        Ok(Self { points })
    }

    /// `layers + 1` equally spaced depths from `p_min` to `q`, with the
    /// endpoints exact.
    pub fn uniform(p_min: f64, q: f64, layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::TooFewPoints(1));
        }
        let span = q - p_min;
        let mut points: Vec<f64> = (0..=layers)
            .map(|i| p_min + span * i as f64 / layers as f64)
            .collect();
        points[0] = p_min;
        points[layers] = q;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of layers, `n - 1`.
    pub fn layers(&self) -> usize {
        self.points.len() - 1
    }

    pub fn p_min(&self) -> f64 {
        self.points[0]
    }

    pub fn terminal(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Step `h_i = p_{i+1} - p_i`.
    pub fn step(&self, i: usize) -> f64 {
        self.points[i + 1] - self.points[i]
    }

    /// Index of the grid point equal to `p` up to a relative tolerance.
    pub fn index_of(&self, p: f64) -> Option<usize> {
        let scale = self
            .points
            .iter()
            .fold(1.0_f64, |acc, v| acc.max(v.abs()));
        let tol = 1e-9 * scale;
        self.points.iter().position(|v| (v - p).abs() <= tol)
    }

    /// The sub-grid `p_i < ... < p_n`.
    pub fn tail(&self, i: usize) -> Result<Self> {
        Self::new(self.points[i..].to_vec())
    }

    /// Layer whose interval `[p_k, p_{k+1})` contains `t`, clamped to the grid.
    pub fn layer_at(&self, t: f64) -> usize {
        let k = self.points.partition_point(|p| *p <= t);
        k.saturating_sub(1).min(self.layers() - 1)
    }
}

/// How parameters are tied across layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParameterSharing {
    PerLayer,
    Shared,
}

/// Layer parameters `Psi(p_i, x)`: one block per layer, or one shared block.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Shared(ParamVector),
    PerLayer(Vec<ParamVector>),
}

impl LayerParams {
    pub fn layer(&self, k: usize) -> &ParamVector {
        match self {
            LayerParams::Shared(theta) => theta,
            LayerParams::PerLayer(blocks) => &blocks[k],
        }
    }

    pub fn sharing(&self) -> ParameterSharing {
        match self {
            LayerParams::Shared(_) => ParameterSharing::Shared,
            LayerParams::PerLayer(_) => ParameterSharing::PerLayer,
        }
    }

    pub fn shared(&self) -> Option<&ParamVector> {
        match self {
            LayerParams::Shared(theta) => Some(theta),
            LayerParams::PerLayer(_) => None,
        }
    }

    /// Parameters active at the terminal depth (the last layer).
    pub fn terminal(&self, grid: &DepthGrid) -> &ParamVector {
        self.layer(grid.layers() - 1)
    }

    /// Parameters for the sub-grid starting at grid index `i`.
    pub fn tail(&self, i: usize) -> LayerParams {
        match self {
            LayerParams::Shared(theta) => LayerParams::Shared(theta.clone()),
            LayerParams::PerLayer(blocks) => LayerParams::PerLayer(blocks[i..].to_vec()),
        }
    }

    pub fn blocks(&self) -> Vec<&ParamVector> {
        match self {
            LayerParams::Shared(theta) => vec![theta],
            LayerParams::PerLayer(blocks) => blocks.iter().collect(),
        }
    }

    /// Checks block lengths against the model and the block count against the grid.
    pub fn validate(&self, model: &dyn DynamicsModel, grid: &DepthGrid) -> Result<()> {
        if let LayerParams::PerLayer(blocks) = self {
            if blocks.len() != grid.layers() {
                return Err(Error::LengthMismatch(format!(
                    "{} per-layer parameter blocks for {} layers",
                    blocks.len(),
                    grid.layers()
                )));
            }
        }
        for theta in self.blocks() {
            if theta.len() != model.param_count() {
                return Err(Error::ParamLengthMismatch {
                    expected: model.param_count(),
                    got: theta.len(),
                });
            }
            crate::error::ensure_finite(theta.as_slice(), "parameter vector")?;
        }
        Ok(())
    }
}

/// Supplies the piecewise-constant control `theta(t)` to a direct solve.
pub trait ThetaSchedule: Sync {
    fn theta_at(&self, t: f64) -> &ParamVector;
}

impl ThetaSchedule for ParamVector {
    fn theta_at(&self, _t: f64) -> &ParamVector {
        self
    }
}

/// Layer parameters attached to the grid that defines their intervals.
pub struct Layered<'a> {
    pub grid: &'a DepthGrid,
    pub params: &'a LayerParams,
}

impl ThetaSchedule for Layered<'_> {
    fn theta_at(&self, t: f64) -> &ParamVector {
        self.params.layer(self.grid.layer_at(t))
    }
}

/// The grid subdivided into Euler sub-steps. Fine interval `j` runs from
/// `t[j]` to `t[j + 1]` and uses the parameters of coarse layer `layer[j]`.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub t: Vec<f64>,
    pub layer: Vec<usize>,
    pub coarse: Vec<usize>,
}

impl Layout {
    pub fn new(grid: &DepthGrid, substeps: usize) -> Self {
        let k = substeps.max(1);
        let mut t = Vec::with_capacity(grid.layers() * k + 1);
        let mut layer = Vec::with_capacity(grid.layers() * k);
        for i in 0..grid.layers() {
            let (a, b) = (grid.points()[i], grid.points()[i + 1]);
            for s in 0..k {
                t.push(if s == 0 { a } else { a + (b - a) * s as f64 / k as f64 });
                layer.push(i);
            }
        }
        t.push(grid.terminal());
        let coarse = (0..grid.len()).map(|i| i * k).collect();
        Self { t, layer, coarse }
    }

    /// Index of the last fine point (the terminal depth).
    pub fn last(&self) -> usize {
        self.t.len() - 1
    }

    pub fn h(&self, j: usize) -> f64 {
        self.t[j + 1] - self.t[j]
    }

    /// Coarse grid index of fine point `j`, if it is one.
    pub fn coarse_index(&self, j: usize) -> Option<usize> {
        self.coarse.binary_search(&j).ok()
    }
}

/// The training function `f(t, z, theta)` with its partial derivatives.
///
/// Only `eval` is mandatory. Second-order contractions default to central
/// differences of the first-order partials over `z`.
pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn param_count(&self) -> usize;
    fn eval(&self, t: f64, z: &StateVector, theta: &ParamVector) -> StateVector;

    /// `grad_z f`, N x N.
    fn d_dz(&self, _t: f64, _z: &StateVector, _theta: &ParamVector) -> Result<DMatrix<f64>> {
        Err(Error::SchemeUnavailable("model has no state Jacobian".into()))
    }

    /// `grad_theta f`, N x M.
    fn d_dtheta(
        &self,
        _t: f64,
        _z: &StateVector,
        _theta: &ParamVector,
    ) -> Result<DMatrix<f64>> {
        Err(Error::SchemeUnavailable("model has no parameter Jacobian".into()))
    }

    fn d_dt(&self, _t: f64, z: &StateVector, _theta: &ParamVector) -> StateVector {
        StateVector::zeros(z.len())
    }

    fn is_autonomous(&self) -> bool {
        true
    }

    /// Both first-order partials at once; override when they share work.
    fn partials(
        &self,
        t: f64,
        z: &StateVector,
        theta: &ParamVector,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.d_dz(t, z, theta)?, self.d_dtheta(t, z, theta)?))
    }

    /// `grad_z (grad_z f^T w)`, N x N.
    fn d2_state(
        &self,
        t: f64,
        z: &StateVector,
        theta: &ParamVector,
        w: &StateVector,
    ) -> Result<DMatrix<f64>> {
        let n = z.len();
        let mut out = DMatrix::zeros(n, n);
        for b in 0..n {
            let (zp, zm, eps) = fd_pair(z, b);
            let col = (self.d_dz(t, &zp, theta)?.tr_mul(w) - self.d_dz(t, &zm, theta)?.tr_mul(w))
                / (2.0 * eps);
            out.set_column(b, &col);
        }
        Ok(out)
    }

    /// `grad_z (grad_theta f^T w)`, M x N.
    fn d2_mixed(
        &self,
        t: f64,
        z: &StateVector,
        theta: &ParamVector,
        w: &StateVector,
    ) -> Result<DMatrix<f64>> {
        let n = z.len();
        let mut out = DMatrix::zeros(theta.len(), n);
        for b in 0..n {
            let (zp, zm, eps) = fd_pair(z, b);
            let col = (self.d_dtheta(t, &zp, theta)?.tr_mul(w)
                - self.d_dtheta(t, &zm, theta)?.tr_mul(w))
                / (2.0 * eps);
            out.set_column(b, &col);
        }
        Ok(out)
    }

    /// Gradients with respect to `z` and `theta` of `sum_ab W_ab df_a/dz_b`.
    fn jacobian_contraction_grads(
        &self,
        t: f64,
        z: &StateVector,
        theta: &ParamVector,
        weights: &DMatrix<f64>,
    ) -> Result<(StateVector, ParamVector)> {
        let n = z.len();
        let mut gz = StateVector::zeros(n);
        let mut gtheta = ParamVector::zeros(theta.len());
        for b in 0..n {
            let (zp, zm, eps) = fd_pair(z, b);
            let (ap, fp) = self.partials(t, &zp, theta)?;
            let (am, fm) = self.partials(t, &zm, theta)?;
            let w = weights.column(b);
            gz += (ap.tr_mul(&w) - am.tr_mul(&w)) / (2.0 * eps);
            gtheta += (fp.tr_mul(&w) - fm.tr_mul(&w)) / (2.0 * eps);
        }
        Ok((gz, gtheta))
    }
}

pub(crate) fn fd_pair(z: &StateVector, b: usize) -> (StateVector, StateVector, f64) {
    let eps = 1e-5 * (1.0 + z[b].abs());
    let mut zp = z.clone();
    let mut zm = z.clone();
    zp[b] += eps;
    zm[b] -= eps;
    let half = 0.5 * (zp[b] - zm[b]);
    (zp, zm, half)
}

/// The imbedding coefficient `Phi(p, x) = f(p, x, Psi(p, x))`.
pub fn phi(model: &dyn DynamicsModel, p: f64, x: &StateVector, psi: &ParamVector) -> StateVector {
    model.eval(p, x, psi)
}

/// Terminal loss `T` and running loss `R` with their derivatives.
pub trait LossSpec: Send + Sync {
    fn terminal(&self, z: &StateVector) -> f64;
    fn terminal_grad(&self, z: &StateVector) -> StateVector;

    fn terminal_hessian(&self, z: &StateVector) -> DMatrix<f64> {
        let n = z.len();
        let mut out = DMatrix::zeros(n, n);
        for b in 0..n {
            let (zp, zm, eps) = fd_pair(z, b);
            out.set_column(b, &((self.terminal_grad(&zp) - self.terminal_grad(&zm)) / (2.0 * eps)));
        }
        out
    }

    /// True when `R` is not identically zero.
    fn has_running(&self) -> bool {
        false
    }

    fn is_autonomous(&self) -> bool {
        true
    }

    fn running(&self, _t: f64, _z: &StateVector, _theta: &ParamVector) -> f64 {
        0.0
    }

    fn running_grad_z(&self, _t: f64, z: &StateVector, _theta: &ParamVector) -> StateVector {
        StateVector::zeros(z.len())
    }

    fn running_grad_theta(&self, _t: f64, _z: &StateVector, theta: &ParamVector) -> ParamVector {
        ParamVector::zeros(theta.len())
    }

    /// `grad_z grad_z R`, N x N.
    fn running_hessian_zz(&self, t: f64, z: &StateVector, theta: &ParamVector) -> DMatrix<f64> {
        let n = z.len();
        let mut out = DMatrix::zeros(n, n);
        if !self.has_running() {
            return out;
        }
        for b in 0..n {
            let (zp, zm, eps) = fd_pair(z, b);
            out.set_column(
                b,
                &((self.running_grad_z(t, &zp, theta) - self.running_grad_z(t, &zm, theta))
                    / (2.0 * eps)),
            );
        }
        out
    }

    /// `grad_z grad_theta R`, M x N.
    fn running_hessian_theta_z(
        &self,
        t: f64,
        z: &StateVector,
        theta: &ParamVector,
    ) -> DMatrix<f64> {
        let n = z.len();
        let mut out = DMatrix::zeros(theta.len(), n);
        if !self.has_running() {
            return out;
        }
        for b in 0..n {
            let (zp, zm, eps) = fd_pair(z, b);
            out.set_column(
                b,
                &((self.running_grad_theta(t, &zp, theta) - self.running_grad_theta(t, &zm, theta))
                    / (2.0 * eps)),
            );
        }
        out
    }
}

/// Observation cost `C(z, y)`.
pub trait Cost: Send + Sync {
    fn value(&self, z: &StateVector, y: &StateVector) -> f64;
    fn grad(&self, z: &StateVector, y: &StateVector) -> StateVector;
    fn hessian(&self, z: &StateVector, y: &StateVector) -> DMatrix<f64>;
}

/// `C(z, y) = weight / 2 * |z - y|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredError {
    pub weight: f64,
}

impl SquaredError {
    /// Mean squared error scaling, `1/2 |z - y|^2 / N`.
    pub fn mse(n: usize) -> Self {
        Self { weight: 1.0 / n as f64 }
    }

    pub fn half() -> Self {
        Self { weight: 1.0 }
    }
}

impl Cost for SquaredError {
    fn value(&self, z: &StateVector, y: &StateVector) -> f64 {
        0.5 * self.weight * (z - y).norm_squared()
    }

    fn grad(&self, z: &StateVector, y: &StateVector) -> StateVector {
        (z - y) * self.weight
    }

    fn hessian(&self, z: &StateVector, _y: &StateVector) -> DMatrix<f64> {
        DMatrix::identity(z.len(), z.len()) * self.weight
    }
}

/// Terminal cost against a fixed target: `T(z) = C(z, y)`, `R = 0`.
pub struct CostLoss<'a> {
    pub cost: &'a dyn Cost,
    pub target: &'a StateVector,
}

impl LossSpec for CostLoss<'_> {
    fn terminal(&self, z: &StateVector) -> f64 {
        self.cost.value(z, self.target)
    }

    fn terminal_grad(&self, z: &StateVector) -> StateVector {
        self.cost.grad(z, self.target)
    }

    fn terminal_hessian(&self, z: &StateVector) -> DMatrix<f64> {
        self.cost.hessian(z, self.target)
    }
}

/// Sum of several terminal costs evaluated at the same output.
pub(crate) struct SumLoss<'a> {
    pub cost: &'a dyn Cost,
    pub targets: Vec<&'a StateVector>,
    pub dim: usize,
}

impl LossSpec for SumLoss<'_> {
    fn terminal(&self, z: &StateVector) -> f64 {
        self.targets.iter().map(|y| self.cost.value(z, y)).sum()
    }

    fn terminal_grad(&self, z: &StateVector) -> StateVector {
        self.targets
            .iter()
            .fold(StateVector::zeros(self.dim), |acc, y| acc + self.cost.grad(z, y))
    }

    fn terminal_hessian(&self, z: &StateVector) -> DMatrix<f64> {
        self.targets.iter().fold(DMatrix::zeros(self.dim, self.dim), |acc, y| {
            acc + self.cost.hessian(z, y)
        })
    }
}

/// Quadratic Bolza loss:
/// `T(z) = w/2 |z - y|^2`, `R(t, z, theta) = s/2 |z|^2 + c/2 |theta|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bolza {
    pub target: StateVector,
    pub terminal_weight: f64,
    pub state_penalty: f64,
    pub control_penalty: f64,
}

impl Bolza {
    pub fn half_squared(target: StateVector) -> Self {
        Self { target, terminal_weight: 1.0, state_penalty: 0.0, control_penalty: 0.0 }
    }

    pub fn mse(target: StateVector) -> Self {
        let w = 1.0 / target.len() as f64;
        Self { target, terminal_weight: w, state_penalty: 0.0, control_penalty: 0.0 }
    }

    pub fn with_state_penalty(mut self, s: f64) -> Self {
        self.state_penalty = s;
        self
    }

    pub fn with_control_penalty(mut self, c: f64) -> Self {
        self.control_penalty = c;
        self
    }
}

impl LossSpec for Bolza {
    fn terminal(&self, z: &StateVector) -> f64 {
        0.5 * self.terminal_weight * (z - &self.target).norm_squared()
    }

    fn terminal_grad(&self, z: &StateVector) -> StateVector {
        (z - &self.target) * self.terminal_weight
    }

    fn terminal_hessian(&self, z: &StateVector) -> DMatrix<f64> {
        DMatrix::identity(z.len(), z.len()) * self.terminal_weight
    }

    fn has_running(&self) -> bool {
        self.state_penalty != 0.0 || self.control_penalty != 0.0
    }

    fn running(&self, _t: f64, z: &StateVector, theta: &ParamVector) -> f64 {
        0.5 * self.state_penalty * z.norm_squared() + 0.5 * self.control_penalty * theta.norm_squared()
    }

    fn running_grad_z(&self, _t: f64, z: &StateVector, _theta: &ParamVector) -> StateVector {
        z * self.state_penalty
    }

    fn running_grad_theta(&self, _t: f64, _z: &StateVector, theta: &ParamVector) -> ParamVector {
        theta * self.control_penalty
    }

    fn running_hessian_zz(&self, _t: f64, z: &StateVector, _theta: &ParamVector) -> DMatrix<f64> {
        DMatrix::identity(z.len(), z.len()) * self.state_penalty
    }

    fn running_hessian_theta_z(
        &self,
        _t: f64,
        z: &StateVector,
        theta: &ParamVector,
    ) -> DMatrix<f64> {
        DMatrix::zeros(theta.len(), z.len())
    }
}

/// Outputs `z(q; p_i, x)` and Jacobian estimates at every grid depth,
/// ascending in depth (the last entry is the trivial network at `q`).
#[derive(Debug, Clone, PartialEq)]
pub struct StateBundle {
    pub input: StateVector,
    pub depths: Vec<f64>,
    pub outputs: Vec<StateVector>,
    pub jacobians: Vec<DMatrix<f64>>,
}

impl StateBundle {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    /// Output of the deepest network, `z(q; p_1, x)`.
    pub fn deepest(&self) -> &StateVector {
        &self.outputs[0]
    }
}

/// Imbedded adjoints `Lambda(p_i, x)` with their input-Jacobian estimates and
/// the optional augmented parameter and depth blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointBundle {
    pub input: StateVector,
    pub depths: Vec<f64>,
    pub lambda: Vec<StateVector>,
    pub lambda_jacobians: Vec<DMatrix<f64>>,
    pub lambda_theta: Option<Vec<ParamVector>>,
    pub lambda_t: Option<Vec<f64>>,
}

impl AdjointBundle {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }
}

/// How input gradients of propagated quantities are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeMode {
    /// Reference sensitivities from direct solves at every depth.
    Exact,
    /// Central quotients over `2N + 1` co-evolving states.
    SymmetricDiff,
    /// Forward quotients over `N + 1` co-evolving states.
    NewtonDiff,
    /// First-order Jacobian update with second-order terms dropped.
    Cropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianScheme {
    pub mode: SchemeMode,
    deltas: Option<Vec<f64>>,
}

impl JacobianScheme {
    pub fn new(mode: SchemeMode) -> Self {
        Self { mode, deltas: None }
    }

    pub fn exact() -> Self {
        Self::new(SchemeMode::Exact)
    }

    pub fn cropped() -> Self {
        Self::new(SchemeMode::Cropped)
    }

    pub fn symmetric() -> Self {
        Self::new(SchemeMode::SymmetricDiff)
    }

    pub fn newton() -> Self {
        Self::new(SchemeMode::NewtonDiff)
    }

    /// Fixes the perturbation sizes instead of the default `1e-3 (1 + |x_i|)`.
    pub fn with_deltas(mut self, deltas: Vec<f64>) -> Result<Self> {
        if deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidArgument("deltas must be positive and finite".into()));
        }
        self.deltas = Some(deltas);
        Ok(self)
    }

    pub fn deltas(&self) -> Option<&[f64]> {
        self.deltas.as_deref()
    }

    pub fn deltas_for(&self, x: &StateVector) -> Result<Vec<f64>> {
        match &self.deltas {
            Some(d) if d.len() == x.len() => Ok(d.clone()),
            Some(d) => Err(Error::LengthMismatch(format!(
                "{} deltas for a state of dimension {}",
                d.len(),
                x.len()
            ))),
            None => Ok(default_deltas(x)),
        }
    }
}

/// `Delta_i = 1e-3 (1 + |x_i|)`.
pub fn default_deltas(x: &StateVector) -> Vec<f64> {
    x.iter().map(|v| 1e-3 * (1.0 + v.abs())).collect()
}

/// Which depth supplies `grad_x Lambda` in the discrete adjoint step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AdjointGradientAt {
    /// `grad_x Lambda(p_{i+1}, x)`: an explicit step.
    #[default]
    Next,
    /// `grad_x Lambda(p_i, x)`: solved by fixed-point iteration.
    Current,
}

/// Evolution used for the depth block of the augmented adjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DepthAdjointForm {
    /// `-d_p L_t = grad_x L_t . Phi`, the exact evolution of `-dJ/dp` for
    /// autonomous problems.
    #[default]
    Transport,
    /// Adds `(grad_x Phi . Phi)^T Lambda + grad_x R . Phi` to the right-hand side.
    AsPrinted,
}

/// Discretization options shared by the imbedded passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImbedOptions {
    pub substeps: usize,
    pub adjoint_gradient: AdjointGradientAt,
    pub depth_form: DepthAdjointForm,
}

impl Default for ImbedOptions {
    fn default() -> Self {
        Self { substeps: 1, adjoint_gradient: AdjointGradientAt::Next, depth_form: DepthAdjointForm::Transport }
    }
}

impl ImbedOptions {
    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }
}
