mod common;

use approx::assert_relative_eq;
use common::v;
use inimnet::dynamics::{linear_closed_form, LinearDynamics};
use inimnet::jacobian::*;
use inimnet::propagate::forward_imbed;
use inimnet::*;
use nalgebra::DMatrix;

fn scalar(a: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, a)
}

#[test]
fn exact_sensitivity_steps() {
    let j = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(exact_sensitivity_step(&j, &DMatrix::zeros(2, 2), 0.1), j);
    assert_relative_eq!(exact_sensitivity_step(&scalar(1.0), &scalar(0.7), 0.1)[(0, 0)], 1.07);
    let mut m = scalar(1.0);
    for _ in 0..1000 {
        m = exact_sensitivity_step(&m, &scalar(1.0), 1e-3);
    }
    assert!((m[(0, 0)] - 1f64.exp()).abs() / 1f64.exp() < 2e-3);
}

#[test]
fn symmetric_quotient_examples() {
    let id = |z: &StateVector| Ok(z.clone());
    let (val, jac) = symmetric_diff_bundle(&id, &v(&[0.3, -2.0]), &[0.1, 0.2]).unwrap();
    assert_eq!(val, v(&[0.3, -2.0]));
    assert!((jac - DMatrix::identity(2, 2)).amax() < 1e-14);
    let sq = |z: &StateVector| Ok(z.map(|x| x * x));
    let (_, d) = symmetric_diff_bundle(&sq, &v(&[1.0]), &[0.1]).unwrap();
    assert_relative_eq!(d[(0, 0)], 2.0, epsilon = 1e-12);
    let blow = |_: &StateVector| Ok(v(&[f64::INFINITY]));
    assert!(matches!(symmetric_diff_bundle(&blow, &v(&[1.0]), &[0.1]), Err(Error::NonFinite(_))));
}

#[test]
fn newton_quotient_examples() {
    let id = |z: &StateVector| Ok(z.clone());
    let (_, jac) = newton_diff_bundle(&id, &v(&[0.3, -2.0]), &[0.1, 0.2]).unwrap();
    assert!((jac - DMatrix::identity(2, 2)).amax() < 1e-14);
    let sq = |z: &StateVector| Ok(z.map(|x| x * x));
    let (_, d) = newton_diff_bundle(&sq, &v(&[1.0]), &[0.1]).unwrap();
    assert_relative_eq!(d[(0, 0)], 2.1, epsilon = 1e-12);
    let a = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
    let lin = |z: &StateVector| Ok(&a * z);
    let (_, jac) = newton_diff_bundle(&lin, &v(&[4.0, -1.0]), &[0.3, 0.01]).unwrap();
    assert!((jac - &a).amax() < 1e-12);
    assert!(newton_diff_bundle(&lin, &v(&[4.0, -1.0]), &[0.3]).is_err());
}

#[test]
fn quotients_are_exact_on_linear_flows() {
    // Euler flow of a linear system: the quotient reproduces the variational product.
    let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.2]);
    let flow = |z: &StateVector| {
        let mut z = z.clone();
        for _ in 0..100 {
            z += &a * &z * 0.01;
        }
        Ok(z)
    };
    let mut m = DMatrix::identity(2, 2);
    for _ in 0..100 {
        m = exact_sensitivity_step(&m, &a, 0.01);
    }
    for d in [1e-4, 1e-1, 3.0] {
        let (_, jac) = symmetric_diff_bundle(&flow, &v(&[0.2, 0.9]), &[d, d]).unwrap();
        assert!((&jac - &m).amax() < 1e-11, "delta {d}");
    }
}

#[test]
fn cropped_steps() {
    let j = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(cropped_jacobian_step(&j, &DMatrix::zeros(2, 2), 0.1), j);
    assert_relative_eq!(cropped_jacobian_step(&scalar(1.0), &scalar(0.7), 0.1)[(0, 0)], 1.07);
}

#[test]
fn cropped_scalar_growth_improves_with_layers() {
    let model = LinearDynamics::scalar(1.0);
    let x = v(&[1.0]);
    let params = LayerParams::Shared(ParamVector::zeros(0));
    let errs: Vec<f64> = [25, 50, 100, 200]
        .iter()
        .map(|&n| {
            let grid = DepthGrid::uniform(-1.0, 0.0, n).unwrap();
            let b = forward_imbed(&model, &params, &x, &grid, &JacobianScheme::cropped()).unwrap();
            (b.outputs[0][0] - 1f64.exp()).abs() / 1f64.exp()
        })
        .collect();
    assert!(errs[2] < 0.05);
    assert!(errs.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn all_schemes_are_identity_at_the_terminal_depth() {
    let model = LinearDynamics::new(DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.2]), v(&[0.3, -0.1])).unwrap();
    let grid = DepthGrid::uniform(-1.0, 0.0, 20).unwrap();
    let params = LayerParams::Shared(ParamVector::zeros(0));
    let x = v(&[0.4, 0.1]);
    let reference = linear_closed_form(&model.a, &model.b, &x, -1.0, 0.0).unwrap();
    for scheme in [JacobianScheme::exact(), JacobianScheme::cropped(), JacobianScheme::symmetric(), JacobianScheme::newton()] {
        let b = forward_imbed(&model, &params, &x, &grid, &scheme).unwrap();
        assert_eq!(b.jacobians[20], DMatrix::identity(2, 2));
        assert_eq!(b.outputs[20], x);
        assert!(common::rel(&b.outputs[0], &reference) < 0.05);
    }
}
