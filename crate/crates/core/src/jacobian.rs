//! Input-gradient estimation: exact sensitivities from direct solves, the
//! symmetric and Newton difference quotients, and Jacobian cropping.

use nalgebra::DMatrix;

use crate::domain::{DynamicsModel, LayerParams, Layout, LossSpec, StateVector};
use crate::error::{ensure_finite, Error, Result};

/// One Euler step of the variational equation: `J + h (grad_z f) J`.
pub fn exact_sensitivity_step(j: &DMatrix<f64>, dfdz: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    j + (dfdz * j) * h
}

/// Cropped update `J_prev (I + h grad_x Phi)`: differentiating the depth
/// recursion in `x` and dropping the `grad_x J . Phi` term.
pub fn cropped_jacobian_step(j_prev: &DMatrix<f64>, phi_grad: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    j_prev + (j_prev * phi_grad) * h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StencilKind {
    Symmetric,
    Newton,
}

/// Evaluation points `x` and `x +- Delta_k e_k` (or `x + Delta_k e_k`), with
/// the matching difference quotient.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    pub points: Vec<StateVector>,
    kind: StencilKind,
}

impl Stencil {
    pub fn new(x: &StateVector, deltas: &[f64], kind: StencilKind) -> Self {
        let mut points = vec![x.clone()];
        for (k, d) in deltas.iter().enumerate() {
            let mut plus = x.clone();
            plus[k] += d;
            points.push(plus);
            if kind == StencilKind::Symmetric {
                let mut minus = x.clone();
                minus[k] -= d;
                points.push(minus);
            }
        }
        Self { points, kind }
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Indices of the upper and lower points of coordinate `k`, with their spacing.
    pub fn pair(&self, k: usize) -> (usize, usize, f64) {
        let (hi, lo) = match self.kind {
            StencilKind::Symmetric => (1 + 2 * k, 2 + 2 * k),
            StencilKind::Newton => (1 + k, 0),
        };
        (hi, lo, self.points[hi][k] - self.points[lo][k])
    }

    /// Quotient estimate of `grad_x v`, one column per coordinate.
    pub fn gradient(&self, values: &[StateVector]) -> DMatrix<f64> {
        let n = self.dim();
        let d = values[0].len();
        let mut out = DMatrix::zeros(d, n);
        for k in 0..n {
            let (hi, lo, span) = self.pair(k);
            out.set_column(k, &((&values[hi] - &values[lo]) / span));
        }
        out
    }
}

fn quotient_bundle(
    evolve: &dyn Fn(&StateVector) -> Result<StateVector>,
    x: &StateVector,
    deltas: &[f64],
    kind: StencilKind,
) -> Result<(StateVector, DMatrix<f64>)> {
    if deltas.len() != x.len() {
        return Err(Error::LengthMismatch(format!("{} deltas for dimension {}", deltas.len(), x.len())));
    }
    if deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::InvalidArgument("deltas must be positive and finite".into()));
    }
    let stencil = Stencil::new(x, deltas, kind);
    let values = stencil.points.iter().map(evolve).collect::<Result<Vec<_>>>()?;
    for v in &values {
        ensure_finite(v.as_slice(), "difference co-state")?;
    }
    let jac = stencil.gradient(&values);
    Ok((values.into_iter().next().unwrap(), jac))
}

/// Value at `x` and the central-quotient Jacobian over `2N + 1` evaluations.
pub fn symmetric_diff_bundle(
    evolve: &dyn Fn(&StateVector) -> Result<StateVector>,
    x: &StateVector,
    deltas: &[f64],
) -> Result<(StateVector, DMatrix<f64>)> {
    quotient_bundle(evolve, x, deltas, StencilKind::Symmetric)
}

/// Value at `x` and the forward-quotient Jacobian over `N + 1` evaluations.
pub fn newton_diff_bundle(
    evolve: &dyn Fn(&StateVector) -> Result<StateVector>,
    x: &StateVector,
    deltas: &[f64],
) -> Result<(StateVector, DMatrix<f64>)> {
    quotient_bundle(evolve, x, deltas, StencilKind::Newton)
}

/// `grad_x z(q; t_j, x)` of the Euler map from fine point `j`.
pub(crate) fn direct_state_jacobian(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    layout: &Layout,
    j: usize,
    x: &StateVector,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut w = x.clone();
    let mut m = DMatrix::identity(n, n);
    for k in j..layout.last() {
        let theta = params.layer(layout.layer[k]);
        let h = layout.h(k);
        let a = model.d_dz(layout.t[k], &w, theta)?;
        m = exact_sensitivity_step(&m, &a, h);
        let f = model.eval(layout.t[k], &w, theta);
        w.axpy(h, &f, 1.0);
    }
    ensure_finite(m.as_slice(), "state sensitivity")?;
    Ok(m)
}

/// First- and second-order sensitivities of the discrete Euler loss started
/// at fine point `j`.
pub(crate) struct SecondOrder {
    pub lambda: StateVector,
    pub hessian: DMatrix<f64>,
    pub mixed: Option<DMatrix<f64>>,
}

/// Gradient and Hessian in `x` (and optionally the `x`-Jacobian of the
/// shared-parameter gradient) of `sum_k h R(t_k, w_k) + T(w_K)` along the Euler
/// path from fine point `j`.
pub(crate) fn direct_second_order(
    model: &dyn DynamicsModel,
    params: &LayerParams,
    layout: &Layout,
    j: usize,
    x: &StateVector,
    loss: &dyn LossSpec,
    want_theta: bool,
) -> Result<SecondOrder> {
    let n = x.len();
    let last = layout.last();
    let mut w = Vec::with_capacity(last - j + 1);
    let mut sens = Vec::with_capacity(last - j + 1);
    w.push(x.clone());
    sens.push(DMatrix::identity(n, n));
    for k in j..last {
        let theta = params.layer(layout.layer[k]);
        let h = layout.h(k);
        let a = model.d_dz(layout.t[k], &w[k - j], theta)?;
        let m_next = exact_sensitivity_step(&sens[k - j], &a, h);
        let f = model.eval(layout.t[k], &w[k - j], theta);
        let w_next = &w[k - j] + f * h;
        w.push(w_next);
        sens.push(m_next);
    }
    let end = &w[last - j];
    let mut lambda = loss.terminal_grad(end);
    let mut mu = loss.terminal_hessian(end) * &sens[last - j];
    let m_count = model.param_count();
    let mut mixed = DMatrix::zeros(m_count, n);
    for k in (j..last).rev() {
        let i = k - j;
        let t = layout.t[k];
        let theta = params.layer(layout.layer[k]);
        let h = layout.h(k);
        let (a, ftheta) = if want_theta {
            model.partials(t, &w[i], theta)?
        } else {
            (model.d_dz(t, &w[i], theta)?, DMatrix::zeros(0, 0))
        };
        let g2 = model.d2_state(t, &w[i], theta, &lambda)?;
        let mut mu_next = &mu + (a.tr_mul(&mu) + &g2 * &sens[i]) * h;
        if loss.has_running() {
            mu_next += loss.running_hessian_zz(t, &w[i], theta) * &sens[i] * h;
        }
        if want_theta {
            let c2 = model.d2_mixed(t, &w[i], theta, &lambda)?;
            mixed += (ftheta.tr_mul(&mu) + c2 * &sens[i]) * h;
            if loss.has_running() {
                mixed += loss.running_hessian_theta_z(t, &w[i], theta) * &sens[i] * h;
            }
        }
        let mut lambda_next = &lambda + a.tr_mul(&lambda) * h;
        if loss.has_running() {
            lambda_next += loss.running_grad_z(t, &w[i], theta) * h;
        }
        lambda = lambda_next;
        mu = mu_next;
    }
    ensure_finite(lambda.as_slice(), "direct adjoint")?;
    ensure_finite(mu.as_slice(), "direct adjoint Hessian")?;
    Ok(SecondOrder {
        lambda,
        hessian: mu,
        mixed: want_theta.then_some(mixed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencil_pairs() {
        let x = StateVector::from_vec(vec![1.0, -2.0]);
        let s = Stencil::new(&x, &[0.1, 0.2], StencilKind::Symmetric);
        assert_eq!(s.points.len(), 5);
        let (hi, lo, span) = s.pair(1);
        assert_eq!((hi, lo), (3, 4));
        assert!((span - 0.4).abs() < 1e-15);
        let n = Stencil::new(&x, &[0.1, 0.2], StencilKind::Newton);
        assert_eq!(n.points.len(), 3);
        assert_eq!(n.pair(1).1, 0);
    }
}
