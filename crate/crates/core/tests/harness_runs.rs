use std::fs;
use std::path::Path;

use ersac_core::agent::EpisodeMetrics;
use ersac_core::harness::{detect_solved, run_sweep, RunConfig, SweepSpec};

fn small_sweep() -> SweepSpec {
    SweepSpec {
        depths: vec![3, 4, 5],
        seeds: 2,
        first_seed: 7,
        template: RunConfig {
            episodes: 400,
            ..RunConfig::default()
        },
        parallelism: 2,
    }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("runs")] {
        for e in fs::read_dir(&sub).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn identical_specs_write_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = small_sweep();
    let ra = run_sweep(&spec, Some(a.path())).unwrap();
    let rb = run_sweep(&spec, Some(b.path())).unwrap();
    assert_eq!(ra, rb);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 2 + 6 + usize::from(ra.fit.is_some()));
    assert_eq!(ta, tb);
}

#[test]
fn summary_solve_times_recompute_from_metric_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_sweep();
    let report = run_sweep(&spec, Some(dir.path())).unwrap();
    for run in &report.runs {
        let path = dir.path().join("runs").join(format!("depth_{}_d{}_s{}.jsonl", run.depth, run.depth, run.seed));
        let returns: Vec<f64> = fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<EpisodeMetrics>(l).unwrap().episode_return)
            .collect();
        assert_eq!(returns.len(), run.episodes);
        let rule = RunConfig { depth: run.depth, seed: run.seed, ..spec.template.clone() }.solve_rule();
        assert_eq!(detect_solved(&returns, rule.window, rule.threshold), run.solved_at);
    }
}

#[test]
fn zero_budget_sweep_reports_unsolved() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        depths: vec![6],
        seeds: 1,
        template: RunConfig {
            episodes: 0,
            ..RunConfig::default()
        },
        ..SweepSpec::default()
    };
    let report = run_sweep(&spec, Some(dir.path())).unwrap();
    assert_eq!(report.runs.len(), 1);
    assert_eq!(report.runs[0].episodes, 0);
    assert_eq!(report.runs[0].solved_at, None);
    assert_eq!(report.groups[0].solved, 0);
    assert_eq!(report.groups[0].median_solve, None);
    assert!(report.fit.is_none());
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
}
