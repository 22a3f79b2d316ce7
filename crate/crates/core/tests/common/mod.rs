#![allow(dead_code)]

use inimnet::{ParamVector, StateVector};

pub fn v(xs: &[f64]) -> StateVector {
    StateVector::from_vec(xs.to_vec())
}

pub fn rel(a: &StateVector, b: &StateVector) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Central differences of a scalar function of a vector.
pub fn fd_grad(f: impl Fn(&ParamVector) -> f64, x: &ParamVector, eps: f64) -> ParamVector {
    ParamVector::from_fn(x.len(), |k, _| {
        let mut a = x.clone();
        let mut b = x.clone();
        a[k] += eps;
        b[k] -= eps;
        (f(&a) - f(&b)) / (2.0 * eps)
    })
}
