//! Single runs, depth sweeps and ablation suites on DeepSea.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_scaling, HarnessError, ScalingFit, SolveRule};
use crate::agent::{run_training, ErsacConfig, JsonlSink, LearningRecord, Mode, NullSink, TrainOptions};
use crate::mdp::{build_deep_sea, DeepSeaSpec};
use crate::replay::ReplayConfig;

/// Temperature of the vanilla actor-critic baseline.
pub const VANILLA_TAU: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub depth: usize,
    /// Action-flip seed of the environment. `None` reuses the run seed.
    pub flip_seed: Option<u64>,
    pub agent: ErsacConfig,
    pub replay: Option<ReplayConfig>,
    pub seed: u64,
    pub episodes: usize,
    pub solve_window: usize,
    /// `None` means 0.9 times the optimal return.
    pub solve_threshold: Option<f64>,
    pub stop_on_solve: bool,
    /// Per-episode metrics, one JSON object per line.
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            depth: 10,
            flip_seed: None,
            agent: ErsacConfig::default(),
            replay: None,
            seed: 0,
            episodes: 20_000,
            solve_window: 100,
            solve_threshold: None,
            stop_on_solve: true,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.depth == 0 {
            return Err(HarnessError::BadSpec("depth must be positive".into()));
        }
        if self.solve_window == 0 {
            return Err(HarnessError::BadSpec("solve window must be at least 1".into()));
        }
        self.agent.validate()?;
        Ok(())
    }

    pub fn env_spec(&self) -> DeepSeaSpec {
        DeepSeaSpec::new(self.depth).with_flip_seed(self.flip_seed.unwrap_or(self.seed))
    }

    pub fn solve_rule(&self) -> SolveRule {
        let optimal = self.env_spec().optimal_return();
        SolveRule {
            window: self.solve_window,
            threshold: self.solve_threshold.unwrap_or(0.9 * optimal),
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            episodes: self.episodes,
            solve: Some(self.solve_rule()),
            stop_on_solve: self.stop_on_solve,
            replay: self.replay.clone(),
        }
    }
}

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub depth: usize,
    pub seed: u64,
    pub episodes: usize,
    pub solved_at: Option<usize>,
    pub final_tau: f64,
    /// Mean return over the trailing solve window.
    pub tail_return: f64,
    pub rejected_updates: u64,
    pub error: Option<String>,
}

impl RunSummary {
    fn failed(label: &str, cfg: &RunConfig, err: String) -> Self {
        Self {
            label: label.to_string(),
            depth: cfg.depth,
            seed: cfg.seed,
            episodes: 0,
            solved_at: None,
            final_tau: f64::NAN,
            tail_return: f64::NAN,
            rejected_updates: 0,
            error: Some(err),
        }
    }
}

/// Trains one agent. Metrics go to `cfg.output` when set.
pub fn run_one(cfg: &RunConfig) -> Result<LearningRecord, HarnessError> {
    cfg.validate()?;
    let ds = build_deep_sea(&cfg.env_spec());
    let opts = cfg.train_options();
    let rec = match &cfg.output {
        Some(path) => {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            let mut sink = JsonlSink(BufWriter::new(File::create(path)?));
            run_training(ds.mdp(), &cfg.agent, &opts, cfg.seed, &mut sink)?
        }
        None => run_training(ds.mdp(), &cfg.agent, &opts, cfg.seed, &mut NullSink)?,
    };
    Ok(rec)
}

fn summarize(label: &str, cfg: &RunConfig, rec: &LearningRecord) -> RunSummary {
    let tail = &rec.returns[rec.returns.len().saturating_sub(cfg.solve_window)..];
    RunSummary {
        label: label.to_string(),
        depth: cfg.depth,
        seed: cfg.seed,
        episodes: rec.returns.len(),
        solved_at: rec.solved_at,
        final_tau: rec.final_tau,
        tail_return: if tail.is_empty() { 0.0 } else { tail.iter().sum::<f64>() / tail.len() as f64 },
        rejected_updates: rec.rejected_updates,
        error: None,
    }
}

/// A labelled run inside a sweep or an ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub label: String,
    pub config: RunConfig,
}

/// Runs every job on a pool of `parallelism` threads. Results keep the job
/// order; a failing job is recorded and the others continue.
pub fn run_jobs(jobs: &[Job], parallelism: usize, out_dir: Option<&Path>) -> Result<Vec<RunSummary>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| HarnessError::BadSpec(e.to_string()))?;
    let out = out_dir.map(|d| d.join("runs"));
    let summaries = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut cfg = job.config.clone();
                if let Some(dir) = &out {
                    cfg.output = Some(dir.join(format!("{}_d{}_s{}.jsonl", slug(&job.label), cfg.depth, cfg.seed)));
                }
                match run_one(&cfg) {
                    Ok(rec) => summarize(&job.label, &cfg, &rec),
                    Err(e) => RunSummary::failed(&job.label, &cfg, e.to_string()),
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(summaries)
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Median with unsolved runs ranked after every solved one. `None` when the
/// median falls on an unsolved run.
pub fn median_solve(solved_at: &[Option<usize>]) -> Option<f64> {
    if solved_at.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = solved_at.iter().map(|s| s.map_or(f64::INFINITY, |t| t as f64)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

/// One row of `summary.csv`: a depth in a sweep or an arm of an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub depth: usize,
    pub runs: usize,
    pub solved: usize,
    pub solve_rate: f64,
    pub median_solve: Option<f64>,
    pub failed_runs: usize,
}

fn group(label: &str, depth: usize, runs: &[&RunSummary]) -> GroupSummary {
    let solved_at: Vec<Option<usize>> = runs.iter().map(|r| r.solved_at).collect();
    let solved = solved_at.iter().flatten().count();
    GroupSummary {
        label: label.to_string(),
        depth,
        runs: runs.len(),
        solved,
        solve_rate: if runs.is_empty() { 0.0 } else { solved as f64 / runs.len() as f64 },
        median_solve: median_solve(&solved_at),
        failed_runs: runs.iter().filter(|r| r.error.is_some()).count(),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_tables(out_dir: Option<&Path>, groups: &[GroupSummary], runs: &[RunSummary]) -> Result<(), HarnessError> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join("summary.csv"), groups)?;
        write_csv(&dir.join("runs.csv"), runs)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub depths: Vec<usize>,
    pub seeds: usize,
    pub first_seed: u64,
    pub template: RunConfig,
    pub parallelism: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            depths: vec![6, 8, 10, 12, 14, 16, 20],
            seeds: 10,
            first_seed: 0,
            template: RunConfig {
                episodes: 100_000,
                ..RunConfig::default()
            },
            parallelism: 1,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.depths.is_empty() || self.depths[0] == 0 {
            return Err(HarnessError::BadSpec("depths must be positive and nonempty".into()));
        }
        if self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::BadSpec("depths must be strictly increasing".into()));
        }
        if self.seeds == 0 {
            return Err(HarnessError::BadSpec("need at least one seed".into()));
        }
        self.template.validate()
    }

    pub fn jobs(&self) -> Vec<Job> {
        self.depths
            .iter()
            .flat_map(|&depth| {
                (0..self.seeds as u64).map(move |i| (depth, self.first_seed + i))
            })
            .map(|(depth, seed)| Job {
                label: format!("depth={depth}"),
                config: RunConfig {
                    depth,
                    seed,
                    output: None,
                    ..self.template.clone()
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub groups: Vec<GroupSummary>,
    pub runs: Vec<RunSummary>,
    /// Log-log fit of median solve episodes on depth, when at least three
    /// depths have a median.
    pub fit: Option<ScalingFit>,
}

/// Runs every (depth, seed) pair and aggregates per depth. With `out_dir`
/// set, writes `summary.csv`, `runs.csv` and `runs/*.jsonl` there.
pub fn run_sweep(spec: &SweepSpec, out_dir: Option<&Path>) -> Result<SweepReport, HarnessError> {
    spec.validate()?;
    let runs = run_jobs(&spec.jobs(), spec.parallelism, out_dir)?;
    let groups: Vec<GroupSummary> = spec
        .depths
        .iter()
        .map(|&d| {
            let rs: Vec<&RunSummary> = runs.iter().filter(|r| r.depth == d).collect();
            group(&format!("depth={d}"), d, &rs)
        })
        .collect();
    let pairs: Vec<(f64, Option<f64>)> = groups.iter().map(|g| (g.depth as f64, g.median_solve)).collect();
    let fit = fit_scaling(&pairs).ok();
    write_tables(out_dir, &groups, &runs)?;
    if let (Some(dir), Some(f)) = (out_dir, &fit) {
        fs::write(dir.join("fit.json"), serde_json::to_string_pretty(f).map_err(|e| HarnessError::Io(e.to_string()))?)?;
    }
    Ok(SweepReport { groups, runs, fit })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSuite {
    LambdaSweep,
    RolloutSweep,
    FixedVsLearnedTau,
    ReplayNoiseOnOff,
}

impl AblationSuite {
    pub const ALL: [AblationSuite; 4] = [
        AblationSuite::LambdaSweep,
        AblationSuite::RolloutSweep,
        AblationSuite::FixedVsLearnedTau,
        AblationSuite::ReplayNoiseOnOff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationSuite::LambdaSweep => "lambda_sweep",
            AblationSuite::RolloutSweep => "rollout_sweep",
            AblationSuite::FixedVsLearnedTau => "fixed_vs_learned_tau",
            AblationSuite::ReplayNoiseOnOff => "replay_noise_onoff",
        }
    }

    /// Labelled variants of `base`, one per arm.
    pub fn arms(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            AblationSuite::LambdaSweep => [0.0, 0.4, 0.8]
                .iter()
                .map(|&l| (format!("lambda={l}"), with(&|c| c.agent.lambda = l)))
                .collect(),
            AblationSuite::RolloutSweep => [1usize, 5, 20, 50]
                .iter()
                .map(|&n| (format!("rollout={n}"), with(&|c| c.agent.rollout = n)))
                .collect(),
            AblationSuite::FixedVsLearnedTau => [0.1, 1.0, 10.0]
                .iter()
                .flat_map(|&t| {
                    [false, true].map(|fixed| {
                        let label = if fixed { format!("fixed tau={t}") } else { format!("learned tau0={t}") };
                        (
                            label,
                            with(&|c| {
                                c.agent.mode = Mode::Ersac;
                                c.agent.tau_init = t;
                                c.agent.fixed_tau = fixed;
                            }),
                        )
                    })
                })
                .collect(),
            AblationSuite::ReplayNoiseOnOff => [0.0, 0.1]
                .iter()
                .map(|&v| {
                    (
                        format!("noise={v}"),
                        with(&|c| {
                            c.replay.get_or_insert_with(ReplayConfig::default);
                            c.agent.net.ensemble.noise_var = v;
                        }),
                    )
                })
                .collect(),
        }
    }
}

impl FromStr for AblationSuite {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| HarnessError::BadSpec(format!("unknown ablation suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSpec {
    pub seeds: usize,
    pub first_seed: u64,
    pub template: RunConfig,
    pub parallelism: usize,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            seeds: 10,
            first_seed: 0,
            template: RunConfig {
                depth: 10,
                episodes: 50_000,
                ..RunConfig::default()
            },
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: AblationSuite,
    pub arms: Vec<GroupSummary>,
    pub runs: Vec<RunSummary>,
}

impl AblationReport {
    pub fn arm(&self, label: &str) -> Option<&GroupSummary> {
        self.arms.iter().find(|a| a.label == label)
    }
}

/// Runs every arm of `suite` over the same seeds and tabulates solve rates.
pub fn run_ablation(suite: AblationSuite, spec: &AblationSpec, out_dir: Option<&Path>) -> Result<AblationReport, HarnessError> {
    if spec.seeds == 0 {
        return Err(HarnessError::BadSpec("need at least one seed".into()));
    }
    spec.template.validate()?;
    let arms = suite.arms(&spec.template);
    let jobs: Vec<Job> = arms
        .iter()
        .flat_map(|(label, cfg)| {
            (0..spec.seeds as u64).map(move |i| Job {
                label: label.clone(),
                config: RunConfig {
                    seed: spec.first_seed + i,
                    output: None,
                    ..cfg.clone()
                },
            })
        })
        .collect();
    let runs = run_jobs(&jobs, spec.parallelism, out_dir)?;
    let groups: Vec<GroupSummary> = arms
        .iter()
        .map(|(label, cfg)| {
            let rs: Vec<&RunSummary> = runs.iter().filter(|r| &r.label == label).collect();
            group(label, cfg.depth, &rs)
        })
        .collect();
    write_tables(out_dir, &groups, &runs)?;
    Ok(AblationReport { suite, arms: groups, runs })
}

/// The vanilla baseline with the default temperature.
pub fn vanilla(template: &RunConfig) -> RunConfig {
    let mut c = template.clone();
    c.agent.mode = Mode::Vanilla { tau: VANILLA_TAU };
    c
}
