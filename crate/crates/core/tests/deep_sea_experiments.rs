//! Full-size DeepSea runs. Each takes seconds to minutes on one core.

use ersac_core::harness::{median_solve, run_ablation, run_sweep, vanilla, AblationSpec, AblationSuite, RunConfig, SweepReport, SweepSpec};

fn depth_sweep(depth: usize, template: RunConfig) -> SweepReport {
    run_sweep(
        &SweepSpec {
            depths: vec![depth],
            template,
            ..SweepSpec::default()
        },
        None,
    )
    .unwrap()
}

fn solve_times(report: &SweepReport) -> Vec<Option<usize>> {
    report.runs.iter().map(|r| r.solved_at).collect()
}

#[test]
fn ersac_solves_depth_6_on_most_seeds() {
    let report = depth_sweep(6, RunConfig::default());
    let solved = solve_times(&report).iter().flatten().count();
    assert!(solved >= 8, "{:?}", solve_times(&report));
}

#[test]
fn ersac_needs_fewer_episodes_than_vanilla_at_depth_10() {
    let template = RunConfig {
        episodes: 100_000,
        ..RunConfig::default()
    };
    let ours = median_solve(&solve_times(&depth_sweep(10, template.clone())));
    let theirs = median_solve(&solve_times(&depth_sweep(10, vanilla(&template))));
    let ours = ours.expect("median run solved");
    assert!(theirs.is_none_or(|t| ours < t), "ersac {ours}, vanilla {theirs:?}");
}

#[test]
fn solve_rate_does_not_drop_as_lambda_grows() {
    let report = run_ablation(AblationSuite::LambdaSweep, &AblationSpec::default(), None).unwrap();
    let rates: Vec<f64> = ["lambda=0", "lambda=0.4", "lambda=0.8"]
        .iter()
        .map(|l| report.arm(l).unwrap().solve_rate)
        .collect();
    assert!(rates.windows(2).all(|w| w[1] >= w[0]), "{rates:?}");
}

#[test]
fn learned_temperature_keeps_up_with_best_fixed_temperature() {
    let report = run_ablation(AblationSuite::FixedVsLearnedTau, &AblationSpec::default(), None).unwrap();
    let inits = ["0.1", "1", "10"];
    let best_fixed = inits
        .iter()
        .map(|t| report.arm(&format!("fixed tau={t}")).unwrap().solve_rate)
        .fold(0.0, f64::max);
    for t in inits {
        let learned = report.arm(&format!("learned tau0={t}")).unwrap().solve_rate;
        assert!(learned >= best_fixed - 0.1, "tau0 {t}: learned {learned}, best fixed {best_fixed}");
    }
}
