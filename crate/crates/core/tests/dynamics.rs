mod common;

use approx::assert_relative_eq;
use common::{rel, v};
use inimnet::dynamics::*;
use inimnet::propagate::{forward_direct, Integrator};
use inimnet::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference Jacobian of `g` at `z`.
fn fd_jac(g: impl Fn(&StateVector) -> StateVector, z: &StateVector) -> DMatrix<f64> {
    let n = g(z).len();
    let mut out = DMatrix::zeros(n, z.len());
    for k in 0..z.len() {
        let eps = 1e-6 * (1.0 + z[k].abs());
        let mut a = z.clone();
        let mut b = z.clone();
        a[k] += eps;
        b[k] -= eps;
        out.set_column(k, &((g(&a) - g(&b)) / (2.0 * eps)));
    }
    out
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).norm() <= tol * b.norm().max(1e-8 / tol)
}

#[test]
fn linear_closed_form_examples() {
    let x = v(&[0.3, -1.0]);
    let zero = linear_closed_form(&DMatrix::zeros(2, 2), &StateVector::zeros(2), &x, -1.0, 0.0).unwrap();
    assert_eq!(zero, x);
    let one = DMatrix::from_element(1, 1, 1.0);
    let e = linear_closed_form(&one, &v(&[0.0]), &v(&[1.0]), 0.0, 1.0).unwrap();
    assert_relative_eq!(e[0], std::f64::consts::E, max_relative = 1e-13);
    let em1 = linear_closed_form(&one, &v(&[1.0]), &v(&[0.0]), 0.0, 1.0).unwrap();
    assert_relative_eq!(em1[0], std::f64::consts::E - 1.0, max_relative = 1e-13);
    let big = DMatrix::from_element(1, 1, 1e4);
    assert!(matches!(linear_closed_form(&big, &v(&[0.0]), &v(&[1.0]), 0.0, 1.0), Err(Error::NonFinite(_))));
}

#[test]
fn projectile_closed_form_examples() {
    assert_eq!(projectile_closed_form(9.81, &v(&[1.0, 2.0]), 0.3, 0.3), v(&[1.0, 2.0]));
    let a = projectile_closed_form(9.81, &v(&[0.0, 5.0]), 0.0, 1.0);
    assert_relative_eq!(a[0], 0.095, epsilon = 1e-12);
    assert_relative_eq!(a[1], -4.81, epsilon = 1e-12);
    let b = projectile_closed_form(9.81, &v(&[10.0, 0.0]), 0.5, 1.0);
    assert_relative_eq!(b[0], 8.77375, epsilon = 1e-12);
    assert_relative_eq!(b[1], -4.905, epsilon = 1e-12);
    assert!(ProjectileDynamics::new(0.0).is_err());
}

#[test]
fn mlp_examples() {
    let model = MlpDynamics::new(vec![2, 4, 2], false).unwrap();
    let zero = ParamVector::zeros(model.param_count());
    assert_eq!(mlp_eval(&model, 0.0, &v(&[1.0, 2.0]), &zero).unwrap(), StateVector::zeros(2));
    let single = MlpDynamics::new(vec![2, 2], false).unwrap();
    let identity = v(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    assert_eq!(mlp_eval(&single, 0.0, &v(&[1.0, 2.0]), &identity).unwrap(), v(&[1.0, 2.0]));
    assert_eq!(
        mlp_eval(&model, 0.0, &v(&[1.0, 2.0]), &ParamVector::zeros(3)),
        Err(Error::ParamLengthMismatch { expected: model.param_count(), got: 3 })
    );
    assert_eq!(model.param_count(), 4 * 2 + 4 + 2 * 4 + 2);
    assert_eq!(MlpDynamics::new(vec![2, 4, 2], true).unwrap().param_count(), 4 * 3 + 4 + 2 * 4 + 2);
    assert!(MlpDynamics::new(vec![2, 4, 3], false).is_err());
}

#[test]
fn mlp_init_is_seeded_and_bounded() {
    let model = MlpDynamics::new(vec![2, 9, 2], false).unwrap();
    assert_eq!(model.init(5), model.init(5));
    assert_ne!(model.init(5), model.init(6));
    let theta = model.init(5);
    let first_layer = 9 * 2 + 9;
    assert!(theta.rows(0, first_layer).iter().all(|w| w.abs() <= 1.0 / 2f64.sqrt()));
    assert!(theta.rows(first_layer, theta.len() - first_layer).iter().all(|w| w.abs() <= 1.0 / 3.0));
}

#[test]
fn checkpoint_round_trip() {
    let model = MlpDynamics::new(vec![2, 5, 3, 2], true).unwrap();
    let theta = model.init(11);
    let json = serde_json::to_string(&model.checkpoint(&theta)).unwrap();
    let ckpt: MlpCheckpoint = serde_json::from_str(&json).unwrap();
    let (back, th) = MlpDynamics::from_checkpoint(&ckpt).unwrap();
    assert_eq!(back, model);
    assert_eq!(th, theta);
    let mut short = ckpt.clone();
    short.theta.pop();
    assert!(matches!(MlpDynamics::from_checkpoint(&short), Err(Error::ParamLengthMismatch { .. })));
}

/// First- and second-order partials of every built-in model against
/// finite differences at random points.
fn partial_contract(model: &dyn DynamicsModel, seed: u64, samples: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.state_dim();
    let m = model.param_count();
    for _ in 0..samples {
        let t: f64 = rng.gen_range(-1.0..0.0);
        let z = StateVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
        let th = ParamVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let w = StateVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let a = model.d_dz(t, &z, &th).unwrap();
        assert!(close(&a, &fd_jac(|z| model.eval(t, z, &th), &z), 1e-4));
        let f = model.d_dtheta(t, &z, &th).unwrap();
        if m > 0 {
            assert!(close(&f, &fd_jac(|p| model.eval(t, &z, p), &th), 1e-4));
        }
        let (a2, f2) = model.partials(t, &z, &th).unwrap();
        assert!(close(&a2, &a, 1e-12) && (m == 0 || close(&f2, &f, 1e-12)));
        let g2 = model.d2_state(t, &z, &th, &w).unwrap();
        let fd = fd_jac(|z| model.d_dz(t, z, &th).unwrap().tr_mul(&w), &z);
        assert!(close(&g2, &fd, 1e-4));
        if m > 0 {
            let c2 = model.d2_mixed(t, &z, &th, &w).unwrap();
            let fd = fd_jac(|z| model.d_dtheta(t, z, &th).unwrap().tr_mul(&w), &z);
            assert!(close(&c2, &fd, 1e-4));
        }
        let wm = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let (gz, gt) = model.jacobian_contraction_grads(t, &z, &th, &wm).unwrap();
        let contract = |z: &StateVector, p: &ParamVector| model.d_dz(t, z, p).unwrap().component_mul(&wm).sum();
        let fdz = common::fd_grad(|z| contract(z, &th), &z, 1e-6);
        assert!(rel(&gz, &fdz) < 1e-4 || (gz.norm() < 1e-8 && fdz.norm() < 1e-6));
        if m > 0 {
            let fdt = common::fd_grad(|p| contract(&z, p), &th, 1e-6);
            assert!(rel(&gt, &fdt) < 1e-4 || (gt.norm() < 1e-8 && fdt.norm() < 1e-6));
        }
    }
}

#[test]
fn partials_match_finite_differences() {
    let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.2]);
    partial_contract(&LinearDynamics::new(a, v(&[0.3, -0.1])).unwrap(), 1, 20);
    partial_contract(&LinearParamDynamics { n: 2 }, 2, 20);
    partial_contract(&ControlDynamics { n: 3 }, 3, 20);
    partial_contract(&ProjectileDynamics::new(9.81).unwrap(), 4, 20);
    partial_contract(&MlpDynamics::new(vec![2, 6, 2], false).unwrap(), 5, 100);
    partial_contract(&MlpDynamics::new(vec![3, 4, 5, 3], true).unwrap(), 6, 100);
}

#[test]
fn time_feature_breaks_autonomy() {
    let model = MlpDynamics::new(vec![2, 4, 2], true).unwrap();
    assert!(!model.is_autonomous());
    let th = model.init(1);
    let z = v(&[0.2, 0.1]);
    let fd = (model.eval(0.1 + 1e-6, &z, &th) - model.eval(0.1 - 1e-6, &z, &th)) / 2e-6;
    assert!(rel(&model.d_dt(0.1, &z, &th), &fd) < 1e-6);
    assert!(MlpDynamics::new(vec![2, 4, 2], false).unwrap().is_autonomous());
}

#[test]
fn linear_euler_converges_at_order_one() {
    let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.2]);
    let model = LinearDynamics::new(a.clone(), StateVector::zeros(2)).unwrap();
    let x = v(&[1.0, 0.5]);
    let exact = linear_closed_form(&a, &StateVector::zeros(2), &x, -1.0, 0.0).unwrap();
    let th = ParamVector::zeros(0);
    let errs: Vec<f64> = [100, 200, 400, 800, 1600]
        .iter()
        .map(|&n| (forward_direct(&model, &th, &x, -1.0, 0.0, n, Integrator::Euler).unwrap() - &exact).norm())
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn projectile_euler_velocity_is_exact() {
    let model = ProjectileDynamics::new(9.81).unwrap();
    let th = ParamVector::zeros(0);
    let x = v(&[0.0, 5.0]);
    let exact = projectile_closed_form(9.81, &x, 0.0, 1.0);
    let mut errs = Vec::new();
    for n in [10, 20, 40] {
        let z = forward_direct(&model, &th, &x, 0.0, 1.0, n, Integrator::Euler).unwrap();
        assert_relative_eq!(z[1], exact[1], epsilon = 1e-12);
        errs.push((z[0] - exact[0]).abs());
    }
    assert_relative_eq!(errs[0] / errs[1], 2.0, max_relative = 1e-9);
    assert_relative_eq!(errs[1] / errs[2], 2.0, max_relative = 1e-9);
}

#[test]
fn expm_matches_nalgebra() {
    let a = DMatrix::from_row_slice(3, 3, &[0.1, 2.0, -1.0, -3.0, 0.4, 0.0, 1.5, -0.7, -2.0]);
    let ours = expm(&a);
    let theirs = a.clone().exp();
    assert!((ours - &theirs).norm() <= 1e-12 * theirs.norm());
}
