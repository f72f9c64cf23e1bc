//! Episode loop with per-episode metrics.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, AgentError, ErsacConfig, UpdateReport};
use crate::harness::{SolveDetector, SolveRule};
use crate::mdp::TabularMdp;
use crate::replay::{mixed_step, ReplayBuffer, ReplayConfig};

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub tau: f64,
    pub entropy: f64,
    pub mean_sigma2: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub tau_loss: f64,
    pub ensemble_loss: f64,
}

pub trait MetricsSink {
    fn record(&mut self, m: &EpisodeMetrics) -> std::io::Result<()>;
}

impl MetricsSink for Vec<EpisodeMetrics> {
    fn record(&mut self, m: &EpisodeMetrics) -> std::io::Result<()> {
        self.push(m.clone());
        Ok(())
    }
}

/// Discards every record.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &EpisodeMetrics) -> std::io::Result<()> {
        Ok(())
    }
}

/// Writes one JSON object per line.
#[derive(Debug)]
pub struct JsonlSink<W: Write>(pub W);

impl<W: Write> MetricsSink for JsonlSink<W> {
    fn record(&mut self, m: &EpisodeMetrics) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.0, m)?;
        self.0.write_all(b"\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub episodes: usize,
    pub solve: Option<SolveRule>,
    pub stop_on_solve: bool,
    pub replay: Option<ReplayConfig>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            solve: None,
            stop_on_solve: true,
            replay: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRecord {
    pub returns: Vec<f64>,
    /// 1-based episode at which the solve rule first fired.
    pub solved_at: Option<usize>,
    pub final_tau: f64,
    pub updates: u64,
    pub rejected_updates: u64,
}

#[derive(Default)]
struct Accum {
    n: f64,
    m: [f64; 7],
}

impl Accum {
    fn add(&mut self, r: &UpdateReport) {
        let t = &r.terms;
        let v = [r.tau, t.mean_entropy, t.mean_sigma2, t.policy, t.value, t.tau, r.ensemble_loss];
        self.m.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        self.n += 1.0;
    }

    fn mean(&self, i: usize) -> f64 {
        if self.n == 0.0 {
            0.0
        } else {
            self.m[i] / self.n
        }
    }
}

/// Agent initialization and environment sampling use independent streams
/// derived from `seed`.
pub fn env_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

/// Trains a fresh agent for up to `opts.episodes` episodes.
pub fn run_training(
    mdp: &TabularMdp,
    cfg: &ErsacConfig,
    opts: &TrainOptions,
    seed: u64,
    sink: &mut dyn MetricsSink,
) -> Result<LearningRecord, AgentError> {
    let mut agent = Agent::new(mdp, cfg.clone(), seed)?;
    let mut rng = env_rng(seed);
    let mut buffer = opts.replay.as_ref().map(|r| ReplayBuffer::new(r.capacity, r.alpha));
    let mut detector = opts.solve.map(SolveDetector::new);
    let mut returns = Vec::with_capacity(opts.episodes.min(1 << 20));
    let mut solved_at = None;
    for episode in 0..opts.episodes {
        let mut acc = Accum::default();
        let ret = agent.run_episode(mdp, &mut rng, |a, seg, rng| {
            let rep = match (&opts.replay, buffer.as_mut()) {
                (Some(rc), Some(buf)) => mixed_step(a, &seg, buf, rc, episode as u64, rng)?,
                _ => a.step(&seg)?,
            };
            acc.add(&rep);
            Ok(())
        })?;
        returns.push(ret);
        let m = EpisodeMetrics {
            episode: episode + 1,
            episode_return: ret,
            tau: acc.mean(0),
            entropy: acc.mean(1),
            mean_sigma2: acc.mean(2),
            policy_loss: acc.mean(3),
            value_loss: acc.mean(4),
            tau_loss: acc.mean(5),
            ensemble_loss: acc.mean(6),
        };
        sink.record(&m).map_err(|e| AgentError::Sink(e.to_string()))?;
        if let Some(d) = detector.as_mut() {
            if solved_at.is_none() {
                solved_at = d.push(ret);
                if solved_at.is_some() && opts.stop_on_solve {
                    break;
                }
            }
        }
    }
    Ok(LearningRecord {
        returns,
        solved_at,
        final_tau: agent.tau(),
        updates: agent.updates(),
        rejected_updates: agent.rejected_updates(),
    })
}
