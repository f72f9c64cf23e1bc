//! `ersac` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use ersac_core::agent::gradcheck::gradient_suite;
use ersac_core::agent::Mode;
use ersac_core::harness::{
    run_ablation, run_one, run_sweep, AblationSpec, AblationSuite, GroupSummary, RunConfig, SweepSpec, VANILLA_TAU,
};
use ersac_core::klearning::regret::log_grid;
use ersac_core::klearning::text::parse_posterior;
use ersac_core::klearning::{
    certify_optimistic_belief, optimistic_policy, regret_decomposition, run_certification, solve_tau, CertConfig,
    TAU_SEARCH_MAX, TAU_SEARCH_MIN,
};

#[derive(Parser)]
#[command(name = "ersac", about = "Epistemic-risk-seeking actor-critic experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with the configuration of the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed, or first seed of a battery.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (`train`) or directory (`sweep-depth`, `ablate`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent runs.
    #[arg(long, global = true)]
    parallel: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent on DeepSea.
    Train {
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Vanilla actor-critic baseline instead of ERSAC.
        #[arg(long)]
        vanilla: bool,
        /// Mix replayed segments into every update.
        #[arg(long)]
        replay: bool,
    },
    /// Solve time against depth over a seed battery.
    SweepDepth {
        #[arg(long, value_delimiter = ',')]
        depths: Option<Vec<usize>>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Ablation suite: lambda_sweep, rollout_sweep, fixed_vs_learned_tau or replay_noise_onoff.
    Ablate {
        suite: String,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Exact K-learning quantities for a posterior file, as key=value lines.
    Exact {
        posterior: PathBuf,
        /// Evaluate the regret decomposition at this temperature instead of the saddle point.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck,
    /// Randomized certification of the regret identities, bounds and duality.
    DecompCheck {
        #[arg(long)]
        instances: Option<usize>,
    },
}

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn print_groups(groups: &[GroupSummary]) {
    println!("label,depth,runs,solved,solve_rate,median_solve");
    for g in groups {
        let median = g.median_solve.map_or("unsolved".to_string(), |m| m.to_string());
        println!("{},{},{},{},{:.2},{}", g.label, g.depth, g.runs, g.solved, g.solve_rate, median);
    }
}

fn run(cli: Cli) -> Result<bool> {
    let c = &cli.common;
    match cli.command {
        Command::Train {
            depth,
            episodes,
            vanilla,
            replay,
        } => {
            let mut cfg: RunConfig = load(c.config.as_deref())?;
            if let Some(d) = depth {
                cfg.depth = d;
            }
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            if vanilla {
                cfg.agent.mode = Mode::Vanilla { tau: VANILLA_TAU };
            }
            if replay && cfg.replay.is_none() {
                cfg.replay = Some(Default::default());
            }
            if c.out.is_some() {
                cfg.output = c.out.clone();
            }
            let rec = run_one(&cfg)?;
            println!("episodes={}", rec.returns.len());
            match rec.solved_at {
                Some(t) => println!("solved_at={t}"),
                None => println!("solved_at=none"),
            }
            println!("final_tau={}", rec.final_tau);
            println!("updates={}", rec.updates);
            println!("rejected_updates={}", rec.rejected_updates);
            Ok(true)
        }
        Command::SweepDepth { depths, seeds, episodes } => {
            let mut spec: SweepSpec = load(c.config.as_deref())?;
            if let Some(d) = depths {
                spec.depths = d;
            }
            if let Some(s) = seeds {
                spec.seeds = s;
            }
            if let Some(e) = episodes {
                spec.template.episodes = e;
            }
            if let Some(s) = c.seed {
                spec.first_seed = s;
            }
            if let Some(p) = c.parallel {
                spec.parallelism = p;
            }
            let report = run_sweep(&spec, c.out.as_deref())?;
            print_groups(&report.groups);
            match &report.fit {
                Some(f) => println!("slope={:.4} intercept={:.4} r_squared={:.4} points={}", f.slope, f.intercept, f.r_squared, f.points),
                None => println!("slope=none (fewer than 3 depths with a median solve time)"),
            }
            Ok(true)
        }
        Command::Ablate {
            suite,
            seeds,
            episodes,
            depth,
        } => {
            let suite: AblationSuite = suite.parse()?;
            let mut spec: AblationSpec = load(c.config.as_deref())?;
            if let Some(s) = seeds {
                spec.seeds = s;
            }
            if let Some(e) = episodes {
                spec.template.episodes = e;
            }
            if let Some(d) = depth {
                spec.template.depth = d;
            }
            if let Some(s) = c.seed {
                spec.first_seed = s;
            }
            if let Some(p) = c.parallel {
                spec.parallelism = p;
            }
            let report = run_ablation(suite, &spec, c.out.as_deref())?;
            print_groups(&report.arms);
            Ok(true)
        }
        Command::Exact { posterior, tau } => {
            let text = fs::read_to_string(&posterior).with_context(|| format!("reading {}", posterior.display()))?;
            let post = parse_posterior(&text)?;
            let belief = post.mean_field();
            let sol = solve_tau(&belief, TAU_SEARCH_MIN, TAU_SEARCH_MAX)?;
            let tau_eval = tau.unwrap_or(sol.tau);
            let pi = optimistic_policy(&belief, tau_eval)?;
            let d = regret_decomposition(&post, &pi, tau_eval)?;
            let certified = certify_optimistic_belief(&post, &log_grid(TAU_SEARCH_MIN, TAU_SEARCH_MAX, 64))?;
            println!("tau_star={}", sol.tau);
            println!("saddle_value={}", sol.value);
            println!("expected_optimal_value={}", post.expected_value_star());
            println!("tau={tau_eval}");
            println!("expected_policy_value={}", post.expected_value_pi(&pi));
            println!("regret={}", d.regret);
            println!("dist={}", d.dist);
            println!("optimism={}", d.optimism);
            println!("optimism_certified={certified}");
            println!("bound_holds={}", d.bound_holds);
            Ok(true)
        }
        Command::Gradcheck => {
            let r = gradient_suite(c.seed.unwrap_or(0))?;
            for (name, rep) in [("network", &r.network), ("assembled_losses", &r.assembled)] {
                for b in &rep.blocks {
                    println!("{name}.{}.max_rel_error={:.3e}", b.name, b.max_rel_error);
                }
            }
            println!("tau.rel_error={:.3e}", r.tau_rel_error);
            println!("passed={}", r.passed);
            Ok(r.passed)
        }
        Command::DecompCheck { instances } => {
            let mut cfg: CertConfig = load(c.config.as_deref())?;
            if let Some(n) = instances {
                cfg.instances = n;
            }
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            let r = run_certification(&cfg)?;
            println!("identity_max_error={:.3e} ({} instances)", r.identity_max_error, r.identity_instances);
            println!("certified_posteriors={} of {} draws", r.certified, r.draws);
            println!("per_episode_bound_failures={}", r.per_episode_bound_failures);
            println!("saddle_bound_failures={}", r.saddle_bound_failures);
            println!("duality_max_gap={:.3e} ({} instances)", r.duality_max_gap, r.duality_instances);
            println!("passed={}", r.passed());
            Ok(r.passed())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
