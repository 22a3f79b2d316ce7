// Kept in its own binary: it mutates the process environment.

use inimnet::tasks::{run_experiment, TaskSpec};
use inimnet::train::TrainConfig;
use inimnet::Error;

#[test]
fn thread_cap_does_not_change_results() {
    let spec = TaskSpec::rotvec();
    let config = TrainConfig { epochs: 2, ..spec.default_config(9) };
    std::env::set_var("INIMNET_THREADS", "1");
    let one = run_experiment(&spec, &config).unwrap();
    std::env::set_var("INIMNET_THREADS", "3");
    let three = run_experiment(&spec, &config).unwrap();
    assert_eq!(one.params, three.params);
    assert_eq!(one.history.table(false).to_csv(), three.history.table(false).to_csv());
    std::env::set_var("INIMNET_THREADS", "many");
    assert!(matches!(run_experiment(&spec, &config), Err(Error::InvalidArgument(_))));
    std::env::remove_var("INIMNET_THREADS");
}
