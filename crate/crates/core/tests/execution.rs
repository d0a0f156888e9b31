use pmphi::sim::{run_experiment, ExperimentPlan};
use pmphi::Execution;

#[test]
fn sequential_and_parallel_runs_agree_exactly() {
    let plan = ExperimentPlan {
        lambdas: vec![-0.3, 0.0],
        nh_grid: vec![10],
        replicates: 12,
        seed: 5,
        ..ExperimentPlan::default()
    };
    let seq = run_experiment(&plan, Execution::Sequential, |_| {}).unwrap();
    let par = run_experiment(&plan, Execution::Parallel, |_| {}).unwrap();
    assert_eq!(seq.len(), par.len());
    for (a, b) in seq.iter().zip(&par) {
        assert_eq!(a.rmse.to_bits(), b.rmse.to_bits());
        assert_eq!(a.level.to_bits(), b.level.to_bits());
        assert_eq!(a.power.to_bits(), b.power.to_bits());
        assert_eq!(a.null_statistics, b.null_statistics);
    }
}
