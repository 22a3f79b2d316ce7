mod common;

use common::{rel, v};
use inimnet::dynamics::*;
use inimnet::tasks::{run_experiment, TaskSpec};
use inimnet::train::*;
use inimnet::verify::{small_rotation_batch, through_system_fd_error};
use inimnet::*;
use nalgebra::DMatrix;

fn none() -> ParamVector {
    ParamVector::zeros(0)
}

fn identity_dataset(grid: &DepthGrid) -> Vec<Sample> {
    [v(&[0.3, -0.2]), v(&[1.0, 0.5]), v(&[-0.7, 0.1])]
        .into_iter()
        .map(|x| Sample::new(x.clone(), grid.points().iter().map(|&p| (p, x.clone())).collect()))
        .collect()
}

#[test]
fn zero_signal_gives_zero_gradient() {
    let grid = DepthGrid::uniform(-1.0, 0.0, 5).unwrap();
    let model = MlpDynamics::new(vec![2, 4, 2], false).unwrap();
    let params = LayerParams::Shared(ParamVector::zeros(model.param_count()));
    let data = identity_dataset(&grid);
    for scheme in [JacobianScheme::exact(), JacobianScheme::cropped(), JacobianScheme::symmetric(), JacobianScheme::newton()] {
        let (loss, g) = grad_through_system(&model, &params, &grid, &data, &SquaredError::mse(2), &scheme, &ImbedOptions::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.shared().unwrap().norm(), 0.0);
    }
    let (_, g) = adjoint_update_direction(&model, &params, &grid, &data, &SquaredError::mse(2), &JacobianScheme::exact(), &ImbedOptions::default()).unwrap();
    assert_eq!(g.shared().unwrap().norm(), 0.0);
}

#[test]
fn single_layer_scalar_gradient_is_analytic() {
    // One Euler layer of f = a z + b on [-1, 0]: z(q) = x + a x + b.
    let model = LinearParamDynamics { n: 1 };
    let (a, b, x, y) = (0.4, -0.2, 1.5, 0.3);
    let theta = LinearParamDynamics::pack(&DMatrix::from_element(1, 1, a), &v(&[b]));
    let grid = DepthGrid::uniform(-1.0, 0.0, 1).unwrap();
    let batch = vec![Sample::new(v(&[x]), vec![(-1.0, v(&[y]))])];
    let r = x + a * x + b - y;
    let expected = LinearParamDynamics::pack(&DMatrix::from_element(1, 1, r * x), &v(&[r]));
    for scheme in [JacobianScheme::exact(), JacobianScheme::cropped(), JacobianScheme::symmetric()] {
        let (loss, g) = grad_through_system(&model, &LayerParams::Shared(theta.clone()), &grid, &batch, &SquaredError::half(), &scheme, &ImbedOptions::default()).unwrap();
        assert!((loss - 0.5 * r * r).abs() < 1e-14);
        assert!(rel(g.shared().unwrap(), &expected) < 1e-12);
    }
}

#[test]
fn through_system_gradients_match_finite_differences() {
    let (grid, batch) = small_rotation_batch(2);
    let model = MlpDynamics::new(vec![2, 5, 2], false).unwrap();
    let theta = model.init(2);
    for scheme in [JacobianScheme::exact(), JacobianScheme::cropped(), JacobianScheme::symmetric(), JacobianScheme::newton()] {
        let shared = through_system_fd_error(&model, &LayerParams::Shared(theta.clone()), &grid, &batch, &scheme).unwrap();
        assert!(shared < 1e-5, "{:?} shared {shared}", scheme.mode);
        let per_layer = LayerParams::PerLayer((0..grid.layers()).map(|k| model.init(10 + k as u64)).collect());
        let err = through_system_fd_error(&model, &per_layer, &grid, &batch, &scheme).unwrap();
        assert!(err < 1e-5, "{:?} per-layer {err}", scheme.mode);
    }
}

#[test]
fn per_layer_gradient_has_per_layer_shape() {
    let (grid, batch) = small_rotation_batch(0);
    let model = MlpDynamics::new(vec![2, 3, 2], false).unwrap();
    let params = LayerParams::PerLayer(vec![model.init(0); grid.layers()]);
    let (_, g) = grad_through_system(&model, &params, &grid, &batch, &SquaredError::mse(2), &JacobianScheme::cropped(), &ImbedOptions::default()).unwrap();
    assert_eq!(g.blocks().len(), grid.layers());
    let r = adjoint_update_direction(&model, &params, &grid, &batch, &SquaredError::mse(2), &JacobianScheme::exact(), &ImbedOptions::default());
    assert!(matches!(r, Err(Error::SharingRequired(_))));
}

#[test]
fn identity_task_is_a_fixed_point() {
    let grid = DepthGrid::uniform(-1.0, 0.0, 4).unwrap();
    let model = MlpDynamics::new(vec![2, 4, 2], false).unwrap();
    let init = ParamVector::zeros(model.param_count());
    let data = identity_dataset(&grid);
    for mode in [TrainMode::ThroughSystem, TrainMode::AdjointUpdate] {
        let config = TrainConfig { mode, epochs: 5, batch_size: 2, scheme: JacobianScheme::exact(), ..TrainConfig::default() };
        let (params, history) = train_loop(&model, &init, &grid, &data, &SquaredError::mse(2), &config).unwrap();
        assert_eq!(params.shared().unwrap(), &init);
        assert_eq!(history.records.len(), 6);
        assert!(history.records.iter().all(|r| r.loss == 0.0));
    }
}

#[test]
fn convex_control_problem_decreases_monotonically() {
    // f = theta shifts every input by theta over [-1, 0]; the loss is convex in theta.
    let model = ControlDynamics { n: 2 };
    let grid = DepthGrid::uniform(-1.0, 0.0, 4).unwrap();
    let shift = v(&[0.5, -0.3]);
    let data: Vec<Sample> = [v(&[0.0, 0.0]), v(&[1.0, 2.0]), v(&[-1.0, 0.5])]
        .into_iter()
        .map(|x| Sample::new(x.clone(), vec![(-1.0, &x + &shift)]))
        .collect();
    for (optimizer, lr) in [(Optimizer::Sgd, 1.0), (Optimizer::Adam, 0.05)] {
        let config = TrainConfig { optimizer, learning_rate: lr, epochs: 40, batch_size: 3, ..TrainConfig::default() };
        let (params, history) = train_loop(&model, &ParamVector::zeros(2), &grid, &data, &SquaredError::mse(2), &config).unwrap();
        let losses: Vec<f64> = history.records.iter().map(|r| r.p_min_loss().unwrap()).collect();
        if optimizer == Optimizer::Sgd {
            assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-15));
            assert!(rel(params.shared().unwrap(), &shift) < 1e-3);
        } else {
            // Momentum may overshoot, so only the overall decrease is checked.
            assert!(losses[40] < 1e-2 * losses[0]);
        }
    }
}

#[test]
fn learning_rate_schedules() {
    assert_eq!(LrSchedule::Constant.rate(0.1, 1000), 0.1);
    let s = LrSchedule::ExpDecay { factor: 0.5, step_epochs: 30 };
    assert_eq!(s.rate(1e-2, 0), 1e-2);
    assert_eq!(s.rate(1e-2, 29), 1e-2);
    assert_eq!(s.rate(1e-2, 30), 5e-3);
    assert_eq!(s.rate(1e-2, 95), 1.25e-3);
}

#[test]
fn config_validation() {
    let ok = TrainConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        TrainConfig { learning_rate: 0.0, ..ok.clone() },
        TrainConfig { epochs: 0, ..ok.clone() },
        TrainConfig { batch_size: 0, ..ok.clone() },
        TrainConfig { substeps: 0, ..ok.clone() },
        TrainConfig { lr_schedule: LrSchedule::ExpDecay { factor: 0.5, step_epochs: 0 }, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::InvalidArgument(_))));
    }
    let adj = TrainConfig { mode: TrainMode::AdjointUpdate, parameter_sharing: ParameterSharing::PerLayer, ..ok };
    assert!(matches!(adj.validate(), Err(Error::SharingRequired(_))));
}

#[test]
fn projectile_training_lowers_the_loss() {
    let spec = TaskSpec::projectile();
    let run = run_experiment(&spec, &spec.default_config(0)).unwrap();
    assert!(run.summary.final_loss < run.summary.initial_loss);
    assert_eq!(run.history.records.len(), 11);
    assert!(run.summary.extrapolation.is_none());
}

#[test]
fn short_rotation_run_improves_the_deepest_network() {
    let spec = TaskSpec::rotvec();
    let config = TrainConfig { epochs: 40, ..spec.default_config(1) };
    let run = run_experiment(&spec, &config).unwrap();
    let (a, b) = (run.summary.initial_p_min_loss.unwrap(), run.summary.final_p_min_loss.unwrap());
    assert!(b < 0.5 * a, "{a} -> {b}");
    let ext = run.summary.extrapolation.unwrap();
    assert!((ext[0].0 + 5.0).abs() < 1e-12);
    assert!(ext.iter().any(|(p, _)| (p + 3.0).abs() < 1e-12));
    assert!(ext.iter().all(|(_, l)| l.is_finite()));
}

#[test]
fn extrapolation_on_the_training_grid_is_the_profile() {
    let spec = TaskSpec::rotvec();
    let grid = spec.grid().unwrap();
    let model = spec.model();
    let params = LayerParams::Shared(model.init(3));
    let data = spec.dataset(3).unwrap();
    let inputs: Vec<StateVector> = data.iter().map(|s| s.x.clone()).collect();
    let cost = SquaredError::mse(2);
    let scheme = JacobianScheme::cropped();
    let opts = ImbedOptions::default();
    let target = |x: &StateVector, p: f64| spec.target(x, p);
    let report = extrapolation_report(&model, &params, &grid, &inputs, &target, &cost, &scheme, &opts).unwrap();
    let record = evaluate(&model, &params, &grid, &data, &cost, &scheme, &opts, 0).unwrap();
    for ((p, l), (d, e)) in report.iter().zip(grid.points().iter().zip(&record.profile)) {
        assert_eq!(p, d);
        assert!((l - e.unwrap()).abs() <= 1e-12 * l.abs().max(1.0));
    }
}

#[test]
fn extrapolation_of_zero_dynamics_is_flat() {
    let grid = DepthGrid::uniform(-5.0, 0.0, 15).unwrap();
    let y = v(&[1.0, 1.0]);
    let target = |_: &StateVector, _: f64| y.clone();
    let inputs = vec![v(&[0.0, 0.5]), v(&[2.0, -1.0])];
    let report = extrapolation_report(&LinearDynamics::zero(2), &LayerParams::Shared(none()), &grid, &inputs, &target, &SquaredError::mse(2), &JacobianScheme::cropped(), &ImbedOptions::default()).unwrap();
    assert_eq!(report.len(), 16);
    assert!(report.iter().all(|(_, l)| *l == report[0].1));
    let per_layer = LayerParams::PerLayer(vec![none(); 15]);
    let r = extrapolation_report(&LinearDynamics::zero(2), &per_layer, &grid, &inputs, &target, &SquaredError::mse(2), &JacobianScheme::cropped(), &ImbedOptions::default());
    assert!(matches!(r, Err(Error::SharingRequired(_))));
}

#[test]
fn seeded_training_is_reproducible() {
    let spec = TaskSpec::rotvec();
    let config = TrainConfig { epochs: 3, ..spec.default_config(5) };
    let a = run_experiment(&spec, &config).unwrap();
    let b = run_experiment(&spec, &config).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history.table(false).to_csv(), b.history.table(false).to_csv());
    assert_eq!(a.history.profile_table().to_csv(), b.history.profile_table().to_csv());
    let c = run_experiment(&spec, &TrainConfig { seed: 6, ..config }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn gradients_do_not_depend_on_the_thread_count() {
    let spec = TaskSpec::rotvec();
    let grid = spec.grid().unwrap();
    let model = spec.model();
    let params = LayerParams::Shared(model.init(0));
    let data = spec.dataset(0).unwrap();
    let grad = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            grad_through_system(&model, &params, &grid, &data, &SquaredError::mse(2), &JacobianScheme::cropped(), &ImbedOptions::default()).unwrap()
        })
    };
    assert_eq!(grad(1), grad(4));
}

#[test]
fn runaway_steps_report_divergence() {
    let model = ControlDynamics { n: 1 };
    let grid = DepthGrid::uniform(-1.0, 0.0, 2).unwrap();
    let data = vec![Sample::new(v(&[0.0]), vec![(-1.0, v(&[1.0]))])];
    let config = TrainConfig { optimizer: Optimizer::Sgd, learning_rate: 1e200, epochs: 10, batch_size: 1, ..TrainConfig::default() };
    let r = train_loop(&model, &ParamVector::zeros(1), &grid, &data, &SquaredError::half(), &config);
    assert!(matches!(r, Err(Error::DivergedTraining(e)) if e <= 3), "{r:?}");
}

#[test]
fn history_tables() {
    let model = ControlDynamics { n: 1 };
    let grid = DepthGrid::uniform(-1.0, 0.0, 2).unwrap();
    let data = vec![Sample::new(v(&[0.0]), vec![(-1.0, v(&[1.0])), (-0.5, v(&[0.5]))])];
    let config = TrainConfig { optimizer: Optimizer::Sgd, learning_rate: 0.1, epochs: 3, batch_size: 1, ..TrainConfig::default() };
    let (_, h) = train_loop(&model, &ParamVector::zeros(1), &grid, &data, &SquaredError::half(), &config).unwrap();
    let t = h.table(false);
    assert_eq!(t.header, vec!["epoch", "depth", "loss", "residual", "seconds"]);
    assert_eq!(t.rows.len(), 3);
    assert_eq!(t.column("epoch").unwrap(), vec![Some(1.0), Some(2.0), Some(3.0)]);
    assert!(t.column("seconds").unwrap().iter().all(Option::is_none));
    assert!(h.table(true).column("seconds").unwrap().iter().all(Option::is_some));
    let p = h.profile_table();
    assert_eq!(p.rows.len(), 6);
    // The terminal depth carries no target.
    assert_eq!(p.rows[2][2], None);
    assert_eq!(h.records[0].profile[0], Some(0.5));
}
