use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use inimnet::io::Table;
use inimnet::train::{LrSchedule, Optimizer, TrainMode};
use inimnet::{ParameterSharing, SchemeMode};
use inimnet_cli::config::RunConfig;

fn inimnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inimnet")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_round_trips(path: &Path) {
    let text = fs::read_to_string(path).unwrap();
    assert_eq!(Table::parse(&text).unwrap().to_csv(), text, "{}", path.display());
}

#[test]
fn config_parses_every_key() {
    let text = "\
# projectile with overrides
[task]
task = projectile
gravity = 9.81
[train]
mode = ThroughSystem
optimizer = SGD
learning_rate = 0.01
epochs = 3
batch_size = 2
parameter_sharing = PerLayer
scheme = SymmetricDiff
deltas = 0.1, 0.2
lr_schedule = ExpDecay(0.5, 2)
seed = 4   # trailing comment
substeps = 2
residual_samples = 1
";
    let cfg = RunConfig::parse(text).unwrap();
    assert_eq!(cfg.task.gravity, 9.81);
    let t = &cfg.train;
    assert_eq!(t.mode, TrainMode::ThroughSystem);
    assert_eq!(t.optimizer, Optimizer::Sgd);
    assert_eq!((t.learning_rate, t.epochs, t.batch_size, t.seed), (0.01, 3, 2, 4));
    assert_eq!(t.parameter_sharing, ParameterSharing::PerLayer);
    assert_eq!(t.scheme.mode, SchemeMode::SymmetricDiff);
    assert_eq!(t.scheme.deltas(), Some(&[0.1, 0.2][..]));
    assert_eq!(t.lr_schedule, LrSchedule::ExpDecay { factor: 0.5, step_epochs: 2 });
    assert_eq!((t.substeps, t.residual_samples), (2, 1));
}

#[test]
fn config_defaults_follow_the_task() {
    let p = RunConfig::parse("task = projectile\n").unwrap();
    assert_eq!(p.train.batch_size, 4);
    assert_eq!(p.train.epochs, 10);
    assert_eq!(p.train.mode, TrainMode::AdjointUpdate);
    let r = RunConfig::parse("task = rotvec\nsamples = 8\n").unwrap();
    assert_eq!(r.task.samples, 8);
    assert_eq!(r.train.scheme.mode, SchemeMode::Cropped);
}

#[test]
fn config_errors_name_their_line() {
    let cases = [
        ("epochs = 3\n", 0),
        ("task = projectile\nepochs three\n", 2),
        ("task = projectile\nlearning_rate = fast\n", 2),
        ("task = projectile\n\nbogus = 1\n", 3),
        ("task = kite\n", 1),
        ("task = rotvec\nlr_schedule = ExpDecay(0.5)\n", 2),
        ("task = projectile\nscheme = Wrong\n", 2),
    ];
    for (text, line) in cases {
        let e = RunConfig::parse(text).unwrap_err();
        assert_eq!(e.line, line, "{text:?}: {e}");
    }
    // Validation of the assembled config.
    assert!(RunConfig::parse("task = projectile\nparameter_sharing = PerLayer\n").is_err());
    assert!(RunConfig::parse("task = projectile\nepochs = 0\n").is_err());
}

#[test]
fn verify_exit_codes() {
    let out = inimnet(&["verify", "theorem1", "--tol", "1e-2"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("passed"));
    assert!(!stdout(&out).contains("FAIL"));
    let out = inimnet(&["verify", "theorem2", "--tol", "1e-12"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("FAIL"));
    assert_eq!(code(&inimnet(&["verify", "bogus"])), 2);
    assert_eq!(code(&inimnet(&["verify", "theorem1", "--tol", "-1"])), 2);
    assert_eq!(code(&inimnet(&["verify"])), 2);
}

#[test]
fn every_suite_passes_by_default() {
    for suite in ["theorem1", "theorem2", "theorem3", "imbedding_rule", "gradients", "convergence"] {
        let out = inimnet(&["verify", suite, "--seed", "3"]);
        assert_eq!(code(&out), 0, "{suite}:\n{}", stdout(&out));
    }
}

#[test]
fn train_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "task = projectile\nseed = 1\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = inimnet(&["train", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let history = Table::parse(&fs::read_to_string(out_dir.join("history.csv")).unwrap()).unwrap();
    assert_eq!(history.header, vec!["epoch", "depth", "loss", "residual", "seconds"]);
    assert_eq!(history.rows.len(), 10);
    for f in ["history.csv", "depth_profile.csv"] {
        assert_round_trips(&out_dir.join(f));
    }
    let ckpt: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ckpt["layer_sizes"], serde_json::json!([2, 16, 2]));
    assert_eq!(ckpt["theta"].as_array().unwrap().len(), 1);
    assert_eq!(ckpt["theta"][0].as_array().unwrap().len(), 16 * 2 + 16 + 2 * 16 + 2);
}

#[test]
fn train_timing_fills_the_seconds_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "task = projectile\nepochs = 2\n").unwrap();
    let out = inimnet(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--timing"]);
    assert_eq!(code(&out), 0);
    let history = Table::parse(&fs::read_to_string(dir.path().join("history.csv")).unwrap()).unwrap();
    assert!(history.column("seconds").unwrap().iter().all(|s| s.is_some()));
}

#[test]
fn rotvec_profile_has_sixteen_depths_per_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rot.cfg");
    fs::write(&cfg, "task = rotvec\nframes = 16\nepochs = 2\n").unwrap();
    let out = inimnet(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let profile = Table::parse(&fs::read_to_string(dir.path().join("depth_profile.csv")).unwrap()).unwrap();
    assert_eq!(profile.rows.len(), 32);
    let epochs = profile.column("epoch").unwrap();
    assert_eq!(epochs.iter().filter(|e| **e == Some(0.0)).count(), 16);
    assert_eq!(epochs.iter().filter(|e| **e == Some(2.0)).count(), 16);
    assert_round_trips(&dir.path().join("extrapolation.csv"));
}

#[test]
fn train_failure_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "task = projectile\nepochs = many\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = out_dir.to_str().unwrap();
    assert_eq!(code(&inimnet(&["train", "--config", bad.to_str().unwrap(), "--out", out])), 2);
    let missing = dir.path().join("missing.cfg");
    assert_eq!(code(&inimnet(&["train", "--config", missing.to_str().unwrap(), "--out", out])), 3);
    let diverge = dir.path().join("diverge.cfg");
    fs::write(&diverge, "task = projectile\nmode = ThroughSystem\noptimizer = SGD\nlearning_rate = 1e200\n").unwrap();
    assert_eq!(code(&inimnet(&["train", "--config", diverge.to_str().unwrap(), "--out", out])), 1);
    // An output path that is a file cannot become a directory.
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let cfg = dir.path().join("ok.cfg");
    fs::write(&cfg, "task = projectile\nepochs = 1\n").unwrap();
    assert_eq!(code(&inimnet(&["train", "--config", cfg.to_str().unwrap(), "--out", blocker.to_str().unwrap()])), 3);
}

#[test]
fn projectile_experiment_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = inimnet(&["experiment", "projectile", "--seed", "7", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["final_loss"].as_f64().unwrap() < summary["initial_loss"].as_f64().unwrap());
    assert_eq!(summary["depths"].as_array().unwrap().len(), 5);
    assert!(summary["runtime_seconds"].as_f64().unwrap() > 0.0);
    assert_eq!(code(&inimnet(&["experiment", "unknown"])), 2);
}
