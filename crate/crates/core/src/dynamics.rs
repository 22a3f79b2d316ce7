//! Built-in dynamics models and closed-form trajectory oracles.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DynamicsModel, ParamVector, StateVector};
use crate::error::{ensure_finite, Error, Result};

/// `f(t, z) = A z + b` with no trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: StateVector,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: StateVector) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() {
            return Err(Error::LengthMismatch(format!(
                "A is {}x{}, b has length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn scalar(a: f64) -> Self {
        Self { a: DMatrix::from_element(1, 1, a), b: StateVector::zeros(1) }
    }

    pub fn zero(n: usize) -> Self {
        Self { a: DMatrix::zeros(n, n), b: StateVector::zeros(n) }
    }
}

impl DynamicsModel for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.b.len()
    }

    fn param_count(&self) -> usize {
        0
    }

    fn eval(&self, _t: f64, z: &StateVector, _theta: &ParamVector) -> StateVector {
        &self.a * z + &self.b
    }

    fn d_dz(&self, _t: f64, _z: &StateVector, _theta: &ParamVector) -> Result<DMatrix<f64>> {
        Ok(self.a.clone())
    }

    fn d_dtheta(&self, _t: f64, z: &StateVector, _theta: &ParamVector) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(z.len(), 0))
    }

    fn d2_state(
        &self,
        _t: f64,
        z: &StateVector,
        _theta: &ParamVector,
        _w: &StateVector,
    ) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(z.len(), z.len()))
    }

    fn d2_mixed(
        &self,
        _t: f64,
        z: &StateVector,
        _theta: &ParamVector,
        _w: &StateVector,
    ) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(0, z.len()))
    }

    fn jacobian_contraction_grads(
        &self,
        _t: f64,
        z: &StateVector,
        _theta: &ParamVector,
        _weights: &DMatrix<f64>,
    ) -> Result<(StateVector, ParamVector)> {
        Ok((StateVector::zeros(z.len()), ParamVector::zeros(0)))
    }
}

/// `f(t, z, theta) = A z + b` with `theta = [A (row-major); b]`, `M = N^2 + N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearParamDynamics {
    pub n: usize,
}

impl LinearParamDynamics {
    pub fn pack(a: &DMatrix<f64>, b: &StateVector) -> ParamVector {
        let n = b.len();
        let mut theta = ParamVector::zeros(n * n + n);
        for r in 0..n {
            for c in 0..n {
                theta[r * n + c] = a[(r, c)];
            }
            theta[n * n + r] = b[r];
        }
        theta
    }

    pub fn unpack(&self, theta: &ParamVector) -> (DMatrix<f64>, StateVector) {
        let n = self.n;
        let a = DMatrix::from_fn(n, n, |r, c| theta[r * n + c]);
        let b = StateVector::from_fn(n, |r, _| theta[n * n + r]);
        (a, b)
    }
}

impl DynamicsModel for LinearParamDynamics {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn param_count(&self) -> usize {
        self.n * self.n + self.n
    }

    fn eval(&self, _t: f64, z: &StateVector, theta: &ParamVector) -> StateVector {
        let (a, b) = self.unpack(theta);
        a * z + b
    }

    fn d_dz(&self, _t: f64, _z: &StateVector, theta: &ParamVector) -> Result<DMatrix<f64>> {
        Ok(self.unpack(theta).0)
    }

    fn d_dtheta(&self, _t: f64, z: &StateVector, _theta: &ParamVector) -> Result<DMatrix<f64>> {
        let n = self.n;
        let mut out = DMatrix::zeros(n, n * n + n);
        for r in 0..n {
            for c in 0..n {
                out[(r, r * n + c)] = z[c];
            }
            out[(r, n * n + r)] = 1.0;
        }
        Ok(out)
    }

    fn d2_state(
        &self,
        _t: f64,
        z: &StateVector,
        _theta: &ParamVector,
        _w: &StateVector,
    ) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(z.len(), z.len()))
    }

    fn d2_mixed(
        &self,
        _t: f64,
        _z: &StateVector,
        _theta: &ParamVector,
        w: &StateVector,
    ) -> Result<DMatrix<f64>> {
        let n = self.n;
        let mut out = DMatrix::zeros(n * n + n, n);
        for r in 0..n {
            for c in 0..n {
                out[(r * n + c, c)] = w[r];
            }
        }
        Ok(out)
    }

    fn jacobian_contraction_grads(
        &self,
        _t: f64,
        z: &StateVector,
        _theta: &ParamVector,
        weights: &DMatrix<f64>,
    ) -> Result<(StateVector, ParamVector)> {
        let n = self.n;
        let mut gtheta = ParamVector::zeros(n * n + n);
        for r in 0..n {
            for c in 0..n {
                gtheta[r * n + c] = weights[(r, c)];
            }
        }
        Ok((StateVector::zeros(z.len()), gtheta))
    }
}

/// Constant control `f(t, z, theta) = theta` with `M = N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlDynamics {
    pub n: usize,
}

impl DynamicsModel for ControlDynamics {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn param_count(&self) -> usize {
        self.n
    }

    fn eval(&self, _t: f64, _z: &StateVector, theta: &ParamVector) -> StateVector {
        theta.clone()
    }

    fn d_dz(&self, _t: f64, _z: &StateVector, _theta: &ParamVector) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(self.n, self.n))
    }

    fn d_dtheta(&self, _t: f64, _z: &StateVector, _theta: &ParamVector) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(self.n, self.n))
    }

    fn d2_state(
        &self,
        _t: f64,
        _z: &StateVector,
        _theta: &ParamVector,
        _w: &StateVector,
    ) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(self.n, self.n))
    }

    fn d2_mixed(
        &self,
        _t: f64,
        _z: &StateVector,
        _theta: &ParamVector,
        _w: &StateVector,
    ) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(self.n, self.n))
    }

    fn jacobian_contraction_grads(
        &self,
        _t: f64,
        _z: &StateVector,
        _theta: &ParamVector,
        _weights: &DMatrix<f64>,
    ) -> Result<(StateVector, ParamVector)> {
        Ok((StateVector::zeros(self.n), ParamVector::zeros(self.n)))
    }
}

/// Vertical projectile `z = [h, v]`, `f = [v, -g]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectileDynamics {
    pub g: f64,
}

impl ProjectileDynamics {
    pub fn new(g: f64) -> Result<Self> {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidArgument(format!("gravity must be positive, got {g}")));
        }
        Ok(Self { g })
    }
}

impl DynamicsModel for ProjectileDynamics {
    fn state_dim(&self) -> usize {
        2
    }

    fn param_count(&self) -> usize {
        0
    }

    fn eval(&self, _t: f64, z: &StateVector, _theta: &ParamVector) -> StateVector {
        StateVector::from_vec(vec![z[1], -self.g])
    }

    fn d_dz(&self, _t: f64, _z: &StateVector, _theta: &ParamVector) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]))
    }

    fn d_dtheta(&self, _t: f64, _z: &StateVector, _theta: &ParamVector) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(2, 0))
    }

    fn d2_state(
        &self,
        _t: f64,
        _z: &StateVector,
        _theta: &ParamVector,
        _w: &StateVector,
    ) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(2, 2))
    }

    fn d2_mixed(
        &self,
        _t: f64,
        _z: &StateVector,
        _theta: &ParamVector,
        _w: &StateVector,
    ) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(0, 2))
    }

    fn jacobian_contraction_grads(
        &self,
        _t: f64,
        _z: &StateVector,
        _theta: &ParamVector,
        _weights: &DMatrix<f64>,
    ) -> Result<(StateVector, ParamVector)> {
        Ok((StateVector::zeros(2), ParamVector::zeros(0)))
    }
}

/// `[h0 + v0 tau - g tau^2 / 2, v0 - g tau]` with `tau = q - p`.
pub fn projectile_closed_form(g: f64, x: &StateVector, p: f64, q: f64) -> StateVector {
    let tau = q - p;
    StateVector::from_vec(vec![x[0] + x[1] * tau - 0.5 * g * tau * tau, x[1] - g * tau])
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = (0..n)
        .map(|c| a.column(c).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(squarings);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..40 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() <= 1e-18 * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// `exp(A (q - p)) x + int_p^q exp(A (q - s)) b ds`.
pub fn linear_closed_form(
    a: &DMatrix<f64>,
    b: &StateVector,
    x: &StateVector,
    p: f64,
    q: f64,
) -> Result<StateVector> {
    if q < p {
        return Err(Error::InvalidArgument(format!("need q >= p, got p = {p}, q = {q}")));
    }
    let n = x.len();
    let tau = q - p;
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * tau));
    aug.view_mut((0, n), (n, 1)).copy_from(&(b * tau));
    let e = expm(&aug);
    let out = e.view((0, 0), (n, n)) * x + e.view((0, n), (n, 1));
    ensure_finite(out.as_slice(), "linear closed form")?;
    Ok(out)
}

/// Feed-forward network with tanh hidden layers and an identity output layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpDynamics {
    sizes: Vec<usize>,
    time_feature: bool,
}

/// JSON checkpoint: layer sizes plus the flat parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub time_feature: bool,
    pub theta: Vec<f64>,
}

impl MlpDynamics {
    /// `sizes = [N, H_1, ..., H_k, N]`; with `time_feature` the first layer
    /// also receives `t`.
    pub fn new(sizes: Vec<usize>, time_feature: bool) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        if sizes[0] != sizes[sizes.len() - 1] {
            return Err(Error::InvalidArgument("input and output widths must match".into()));
        }
        Ok(Self { sizes, time_feature })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn time_feature(&self) -> bool {
        self.time_feature
    }

    fn fan_in(&self, l: usize) -> usize {
        self.sizes[l] + usize::from(l == 0 && self.time_feature)
    }

    /// Offsets of each layer's weight block within `theta`.
    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.sizes.len());
        let mut off = 0;
        for l in 0..self.sizes.len() - 1 {
            out.push(off);
            off += self.sizes[l + 1] * self.fan_in(l) + self.sizes[l + 1];
        }
        out.push(off);
        out
    }

    /// Uniform initialization in `[-s, s]`, `s = 1/sqrt(fan_in)`.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Vec::with_capacity(self.param_count());
        for l in 0..self.sizes.len() - 1 {
            let s = 1.0 / (self.fan_in(l) as f64).sqrt();
            for _ in 0..self.sizes[l + 1] * (self.fan_in(l) + 1) {
                theta.push(rng.gen_range(-s..=s));
            }
        }
        ParamVector::from_vec(theta)
    }

    pub fn checkpoint(&self, theta: &ParamVector) -> MlpCheckpoint {
        MlpCheckpoint {
            layer_sizes: self.sizes.clone(),
            time_feature: self.time_feature,
            theta: theta.iter().copied().collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &MlpCheckpoint) -> Result<(Self, ParamVector)> {
        let model = Self::new(ckpt.layer_sizes.clone(), ckpt.time_feature)?;
        if ckpt.theta.len() != model.param_count() {
            return Err(Error::ParamLengthMismatch {
                expected: model.param_count(),
                got: ckpt.theta.len(),
            });
        }
        Ok((model, ParamVector::from_vec(ckpt.theta.clone())))
    }

    fn input(&self, t: f64, z: &StateVector) -> DVector<f64> {
        if self.time_feature {
            let mut v = DVector::zeros(z.len() + 1);
            v.rows_mut(0, z.len()).copy_from(z);
            v[z.len()] = t;
            v
        } else {
            z.clone()
        }
    }

    fn weights(&self, theta: &ParamVector, l: usize, off: usize) -> (DMatrix<f64>, DVector<f64>) {
        let (rows, cols) = (self.sizes[l + 1], self.fan_in(l));
        let w = DMatrix::from_row_slice(rows, cols, &theta.as_slice()[off..off + rows * cols]);
        let b = DVector::from_column_slice(&theta.as_slice()[off + rows * cols..off + rows * cols + rows]);
        (w, b)
    }

    /// Layer inputs (the last entry is the network output).
    fn forward(&self, t: f64, z: &StateVector, theta: &ParamVector) -> Vec<DVector<f64>> {
        let offsets = self.offsets();
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(self.input(t, z));
        for l in 0..layers {
            let (w, b) = self.weights(theta, l, offsets[l]);
            let mut a = w * &acts[l] + b;
            if l + 1 < layers {
                a.apply(|v| *v = v.tanh());
            }
            acts.push(a);
        }
        acts
    }

    /// Sensitivities of the output to the full input (including `t`) and to `theta`.
    fn backprop(
        &self,
        t: f64,
        z: &StateVector,
        theta: &ParamVector,
        want_theta: bool,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let acts = self.forward(t, z, theta);
        let offsets = self.offsets();
        let layers = self.sizes.len() - 1;
        let n = self.sizes[layers];
        let mut dtheta = DMatrix::zeros(n, if want_theta { self.param_count() } else { 0 });
        // d output / d pre-activation of the current layer
        let mut delta = DMatrix::<f64>::identity(n, n);
        for l in (0..layers).rev() {
            let (w, _) = self.weights(theta, l, offsets[l]);
            let (rows, cols) = (self.sizes[l + 1], self.fan_in(l));
            let input = &acts[l];
            for r in (0..rows).filter(|_| want_theta) {
                for c in 0..cols {
                    let col = offsets[l] + r * cols + c;
                    for a in 0..n {
                        dtheta[(a, col)] = delta[(a, r)] * input[c];
                    }
                }
                let col = offsets[l] + rows * cols + r;
                for a in 0..n {
                    dtheta[(a, col)] = delta[(a, r)];
                }
            }
            let mut next = &delta * w;
            if l > 0 {
                for c in 0..cols {
                    let d = 1.0 - input[c] * input[c];
                    next.column_mut(c).scale_mut(d);
                }
            }
            delta = next;
        }
        (delta, dtheta)
    }
}

/// Evaluates the network after checking the parameter length.
pub fn mlp_eval(
    model: &MlpDynamics,
    t: f64,
    z: &StateVector,
    theta: &ParamVector,
) -> Result<StateVector> {
    if theta.len() != model.param_count() {
        return Err(Error::ParamLengthMismatch { expected: model.param_count(), got: theta.len() });
    }
    if z.len() != model.state_dim() {
        return Err(Error::LengthMismatch(format!(
            "state of length {} for a network of width {}",
            z.len(),
            model.state_dim()
        )));
    }
    Ok(model.eval(t, z, theta))
}

impl DynamicsModel for MlpDynamics {
    fn state_dim(&self) -> usize {
        self.sizes[0]
    }

    fn param_count(&self) -> usize {
        *self.offsets().last().unwrap()
    }

    fn eval(&self, t: f64, z: &StateVector, theta: &ParamVector) -> StateVector {
        self.forward(t, z, theta).pop().unwrap()
    }

    fn d_dz(&self, t: f64, z: &StateVector, theta: &ParamVector) -> Result<DMatrix<f64>> {
        let (din, _) = self.backprop(t, z, theta, false);
        Ok(din.columns(0, z.len()).into_owned())
    }

    fn d_dtheta(&self, t: f64, z: &StateVector, theta: &ParamVector) -> Result<DMatrix<f64>> {
        Ok(self.backprop(t, z, theta, true).1)
    }

    fn d_dt(&self, t: f64, z: &StateVector, theta: &ParamVector) -> StateVector {
        if self.time_feature {
            self.backprop(t, z, theta, false).0.column(z.len()).into_owned()
        } else {
            StateVector::zeros(z.len())
        }
    }

    fn is_autonomous(&self) -> bool {
        !self.time_feature
    }

    fn partials(
        &self,
        t: f64,
        z: &StateVector,
        theta: &ParamVector,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (din, dtheta) = self.backprop(t, z, theta, true);
        Ok((din.columns(0, z.len()).into_owned(), dtheta))
    }
}
