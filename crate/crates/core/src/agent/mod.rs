//! Online ERSAC agent: TD(lambda) targets, simultaneous updates of the
//! network and the risk temperature, and the vanilla and simple-optimism
//! baselines.

pub mod gradcheck;
pub mod targets;
pub mod train;

pub use targets::{losses, policy_entropy, policy_logit_grad, td_lambda_k_hat, LossStep, LossTerms, SegmentEnd, StepAdjoint};
pub use train::{env_rng, run_training, EpisodeMetrics, JsonlSink, LearningRecord, MetricsSink, NullSink, TrainOptions};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{log_softmax, ApproxError, GradientBundle, NetAdjoint, NetCache, NetConfig, NetOutput, Optimizer, OptimizerConfig, PolicyValueNet};
use crate::mdp::{sample_index, TabularMdp};
use crate::replay::{vtrace_k_targets, ReplayError, VTraceConfig};
use crate::uncertainty::{population_variance, action_column, CountUncertainty, UncertaintyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("temperature must be positive and finite, got {0}")]
    BadTau(f64),
    #[error("segment is empty")]
    EmptySegment,
    #[error("per-step inputs have different lengths")]
    Misaligned,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("metrics sink: {0}")]
    Sink(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// Uncertainty bonus `sigma^2 / (2 tau)` with a learned temperature.
    Ersac,
    /// Entropy-regularized actor-critic at a fixed temperature, no bonus.
    Vanilla { tau: f64 },
    /// Vanilla on rewards `r + mu * sigma`.
    SimpleOptimism { tau: f64, mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// Variance of the reward-ensemble heads.
    Ensemble,
    /// `sigma^2 / (n + pseudo_count)` from visit counts.
    Counts { sigma: f64, pseudo_count: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErsacConfig {
    pub optimizer: OptimizerConfig,
    pub tau_lr: f64,
    pub tau_init: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Hold the temperature at `tau_init` in ERSAC mode.
    pub fixed_tau: bool,
    pub lambda: f64,
    pub rollout: usize,
    pub gamma: f64,
    pub mode: Mode,
    pub backend: Backend,
    pub net: NetConfig,
    pub value_loss_coef: f64,
    pub reward_loss_coef: f64,
    /// Add target noise to the reward-ensemble targets of online steps too.
    /// Replayed items always carry the noise drawn at insertion.
    pub online_target_noise: bool,
}

impl Default for ErsacConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::adam(1e-3),
            tau_lr: 1e-3,
            tau_init: 0.1,
            tau_min: 1e-4,
            tau_max: 1e2,
            fixed_tau: false,
            lambda: 0.8,
            rollout: 50,
            gamma: 1.0,
            mode: Mode::Ersac,
            backend: Backend::Ensemble,
            net: NetConfig::default(),
            value_loss_coef: 1.0,
            reward_loss_coef: 1.0,
            online_target_noise: false,
        }
    }
}

impl ErsacConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::BadConfig(m.to_string()));
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau_max) {
            return bad("need 0 < tau_min <= tau_max");
        }
        if !(self.tau_init > 0.0) {
            return bad("tau_init must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.rollout == 0 {
            return bad("rollout must be positive");
        }
        if let Backend::Counts { sigma, pseudo_count } = self.backend {
            if !(sigma >= 0.0 && pseudo_count > 0.0) {
                return bad("count backend needs sigma >= 0 and pseudo_count > 0");
            }
        }
        match self.mode {
            Mode::Vanilla { tau } | Mode::SimpleOptimism { tau, .. } if !(tau > 0.0) => bad("mode tau must be positive"),
            _ => Ok(()),
        }
    }

    pub fn vanilla(tau: f64) -> Self {
        Self {
            mode: Mode::Vanilla { tau },
            ..Self::default()
        }
    }
}

/// One-hot encoding of layered states: layer `l`, state `s` maps to
/// `offset_l + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsEncoder {
    offsets: Vec<usize>,
    dim: usize,
}

impl ObsEncoder {
    pub fn new(layer_states: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(layer_states.len());
        let mut dim = 0;
        for n in layer_states {
            offsets.push(dim);
            dim += n;
        }
        Self { offsets, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn index(&self, layer: usize, state: usize) -> usize {
        self.offsets[layer] + state
    }

    pub fn encode(&self, layer: usize, state: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[self.index(layer, state)] = 1.0;
        v
    }
}

/// One environment step as stored for learning.
#[derive(Debug, Clone, PartialEq)]
pub struct SegStep {
    pub layer: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub behavior_prob: f64,
    /// Per-head noise added to the reward-ensemble targets.
    pub target_noise: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Terminal,
    Truncated { layer: usize, state: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub steps: Vec<SegStep>,
    pub end: Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetKind {
    OnPolicy,
    VTrace(VTraceConfig),
}

/// A segment in an update batch. `online` segments drive the temperature
/// update and the visit counts.
#[derive(Debug, Clone, Copy)]
pub struct BatchSegment<'a> {
    pub segment: &'a Segment,
    pub target: TargetKind,
    pub online: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateReport {
    pub terms: LossTerms,
    pub ensemble_loss: f64,
    /// Temperature after the update.
    pub tau: f64,
    /// `K - tau log pi(a) - J` per step, per segment.
    pub td_errors: Vec<Vec<f64>>,
    /// False when the update was rejected for non-finite values.
    pub applied: bool,
}

/// Output of [`Agent::batch_gradient`]. Per-segment targets are the values
/// held constant inside the losses.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub grad: GradientBundle,
    pub terms: LossTerms,
    pub ensemble_loss: f64,
    pub td_errors: Vec<Vec<f64>>,
    pub k_hat: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub sigma2: Vec<Vec<f64>>,
    pub has_online: bool,
}

#[derive(Debug, Clone)]
pub struct Agent {
    cfg: ErsacConfig,
    net: PolicyValueNet,
    tau: f64,
    opt: Optimizer,
    counts: Option<CountUncertainty>,
    encoder: ObsEncoder,
    num_actions: usize,
    noise: Option<Normal<f64>>,
    updates: u64,
    rejected: u64,
}

struct Prepared {
    caches: Vec<NetCache>,
    outputs: Vec<NetOutput>,
    log_probs: Vec<Vec<f64>>,
    k_hat: Vec<f64>,
    weights: Vec<f64>,
    sigma2: Vec<f64>,
}

impl Agent {
    pub fn new(mdp: &TabularMdp, cfg: ErsacConfig, seed: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let encoder = ObsEncoder::new(mdp.layer_states());
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let net = PolicyValueNet::new(encoder.dim(), mdp.num_actions(), &cfg.net, &mut init_rng)?;
        let opt = Optimizer::new(cfg.optimizer, &net.blocks().map(|b| b.len()));
        let counts = match cfg.backend {
            Backend::Counts { sigma, pseudo_count } => Some(CountUncertainty::new(mdp, sigma, pseudo_count)),
            Backend::Ensemble => None,
        };
        let tau = match cfg.mode {
            Mode::Ersac => cfg.tau_init,
            Mode::Vanilla { tau } | Mode::SimpleOptimism { tau, .. } => tau,
        }
        .clamp(cfg.tau_min, cfg.tau_max);
        let nv = cfg.net.ensemble.noise_var;
        let noise = (nv > 0.0).then(|| Normal::new(0.0, nv.sqrt()).expect("finite noise"));
        Ok(Self {
            num_actions: mdp.num_actions(),
            cfg,
            net,
            tau,
            opt,
            counts,
            encoder,
            noise,
            updates: 0,
            rejected: 0,
        })
    }

    pub fn config(&self) -> &ErsacConfig {
        &self.cfg
    }

    pub fn net(&self) -> &PolicyValueNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut PolicyValueNet {
        &mut self.net
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.opt
    }

    pub fn optimizer_mut(&mut self) -> &mut Optimizer {
        &mut self.opt
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn set_tau(&mut self, tau: f64) {
        self.tau = tau.clamp(self.cfg.tau_min, self.cfg.tau_max);
    }

    pub fn encoder(&self) -> &ObsEncoder {
        &self.encoder
    }

    pub fn counts_mut(&mut self) -> Option<&mut CountUncertainty> {
        self.counts.as_mut()
    }

    /// Overwrites the update counters, for restoring a checkpoint.
    pub fn set_counters(&mut self, updates: u64, rejected: u64) {
        self.updates = updates;
        self.rejected = rejected;
    }

    pub fn counts(&self) -> Option<&CountUncertainty> {
        self.counts.as_ref()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn rejected_updates(&self) -> u64 {
        self.rejected
    }

    pub fn num_heads(&self) -> usize {
        self.net.ensemble().num_heads()
    }

    /// Policy row at a state.
    pub fn policy(&self, layer: usize, state: usize) -> Vec<f64> {
        let (logits, _) = self
            .net
            .eval_policy_value(&self.encoder.encode(layer, state))
            .expect("encoder matches the network");
        log_softmax(&logits).into_iter().map(f64::exp).collect()
    }

    /// Samples an action; returns it with its probability.
    pub fn act<R: Rng + ?Sized>(&self, layer: usize, state: usize, rng: &mut R) -> (usize, f64) {
        let p = self.policy(layer, state);
        let a = sample_index(&p, rng);
        (a, p[a])
    }

    /// Target noise for one step, drawn with the ensemble's noise variance.
    pub fn draw_target_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.num_heads();
        match &self.noise {
            Some(n) => (0..k).map(|_| n.sample(rng)).collect(),
            None => vec![0.0; k],
        }
    }

    /// Uncertainty `sigma^2` of the configured backend at a taken pair.
    fn backend_sigma2(&self, layer: usize, state: usize, action: usize, out: &NetOutput) -> f64 {
        match &self.counts {
            Some(c) => c.sigma2(layer, state, action),
            None => population_variance(&action_column(&out.rewards, self.num_actions, action)),
        }
    }

    fn prepare(&self, seg: &BatchSegment<'_>) -> Result<Prepared, AgentError> {
        let steps = &seg.segment.steps;
        if steps.is_empty() {
            return Err(AgentError::EmptySegment);
        }
        let n = steps.len();
        let mut caches = Vec::with_capacity(n);
        let mut outputs = Vec::with_capacity(n);
        let mut log_probs = Vec::with_capacity(n);
        let mut sigma2 = Vec::with_capacity(n);
        for st in steps {
            let mut cache = NetCache::default();
            let out = self.net.forward(&self.encoder.encode(st.layer, st.state), &mut cache)?;
            log_probs.push(log_softmax(&out.logits));
            sigma2.push(self.backend_sigma2(st.layer, st.state, st.action, &out));
            caches.push(cache);
            outputs.push(out);
        }
        let (bonus_sigma2, rewards): (Vec<f64>, Vec<f64>) = match self.cfg.mode {
            Mode::Ersac => (sigma2.clone(), steps.iter().map(|s| s.reward).collect()),
            Mode::Vanilla { .. } => (vec![0.0; n], steps.iter().map(|s| s.reward).collect()),
            Mode::SimpleOptimism { mu, .. } => (
                vec![0.0; n],
                steps.iter().zip(&sigma2).map(|(s, v)| s.reward + mu * v.sqrt()).collect(),
            ),
        };
        let values: Vec<f64> = outputs.iter().map(|o| o.value).collect();
        let lp_taken: Vec<f64> = log_probs.iter().zip(steps).map(|(lp, s)| lp[s.action]).collect();
        let end = match seg.segment.end {
            Boundary::Terminal => SegmentEnd::Terminal,
            Boundary::Truncated { layer, state } => {
                let (_, v) = self.net.eval_policy_value(&self.encoder.encode(layer, state))?;
                SegmentEnd::Truncated(v)
            }
        };
        let (k_hat, weights) = match seg.target {
            TargetKind::OnPolicy => (
                td_lambda_k_hat(&rewards, &bonus_sigma2, &values, &lp_taken, self.tau, self.cfg.gamma, self.cfg.lambda, end)?,
                vec![1.0; n],
            ),
            TargetKind::VTrace(v) => {
                let mu: Vec<f64> = steps.iter().map(|s| s.behavior_prob).collect();
                vtrace_k_targets(
                    &rewards,
                    &bonus_sigma2,
                    &values,
                    &lp_taken,
                    &mu,
                    self.tau,
                    self.cfg.gamma,
                    self.cfg.lambda,
                    end,
                    &v,
                )?
            }
        };
        Ok(Prepared {
            caches,
            outputs,
            log_probs,
            k_hat,
            weights,
            sigma2,
        })
    }

    /// Gradient of `L_value - L_policy + L_reward` over every step of every
    /// segment in `batch`, without touching parameters or temperature.
    pub fn batch_gradient(&self, batch: &[BatchSegment<'_>]) -> Result<BatchGradient, AgentError> {
        let prepared: Vec<Prepared> = batch.iter().map(|b| self.prepare(b)).collect::<Result<_, _>>()?;
        let tau = self.tau;
        let mut loss_steps = Vec::new();
        let mut online_steps = Vec::new();
        for (b, p) in batch.iter().zip(&prepared) {
            for (i, st) in b.segment.steps.iter().enumerate() {
                let ls = LossStep {
                    log_probs: &p.log_probs[i],
                    action: st.action,
                    value: p.outputs[i].value,
                    k_hat: p.k_hat[i],
                    sigma2: p.sigma2[i],
                    weight: p.weights[i],
                };
                loss_steps.push(ls);
                if b.online {
                    online_steps.push(ls);
                }
            }
        }
        let (mut terms, adjoints) = losses(&loss_steps, tau)?;
        let has_online = !online_steps.is_empty();
        if has_online {
            let (online_terms, _) = losses(&online_steps, tau)?;
            terms.tau = online_terms.tau;
            terms.tau_grad = online_terms.tau_grad;
        }
        let total = loss_steps.len() as f64;
        let mut grad = GradientBundle::zeros_like(&self.net);
        let mut ensemble_loss = 0.0;
        let mut td_errors = Vec::with_capacity(batch.len());
        let mut idx = 0;
        let ens = self.net.ensemble();
        for (b, p) in batch.iter().zip(&prepared) {
            let mut seg_td = Vec::with_capacity(p.k_hat.len());
            for (i, st) in b.segment.steps.iter().enumerate() {
                let (l, mut r_adj) = ens.loss_adjoint(&p.outputs[i].rewards, st.action, st.reward, &st.target_noise)?;
                ensemble_loss += l / total;
                r_adj.iter_mut().for_each(|a| *a *= self.cfg.reward_loss_coef / total);
                let adj = &adjoints[idx];
                self.net.backward(
                    &p.caches[i],
                    NetAdjoint {
                        logits: &adj.logits,
                        value: self.cfg.value_loss_coef * adj.value,
                        rewards: Some(&r_adj),
                    },
                    &mut grad,
                )?;
                seg_td.push(p.k_hat[i] - tau * p.log_probs[i][st.action] - p.outputs[i].value);
                idx += 1;
            }
            td_errors.push(seg_td);
        }
        Ok(BatchGradient {
            grad,
            terms,
            ensemble_loss,
            td_errors,
            k_hat: prepared.iter().map(|p| p.k_hat.clone()).collect(),
            weights: prepared.iter().map(|p| p.weights.clone()).collect(),
            sigma2: prepared.iter().map(|p| p.sigma2.clone()).collect(),
            has_online,
        })
    }

    /// One simultaneous update of the network (ascent on `L_policy`, descent
    /// on `L_value` and the reward-prediction loss) and of the temperature,
    /// over every step of every segment in `batch`.
    pub fn update(&mut self, batch: &[BatchSegment<'_>]) -> Result<UpdateReport, AgentError> {
        let BatchGradient {
            grad,
            terms,
            ensemble_loss,
            td_errors,
            has_online,
            ..
        } = self.batch_gradient(batch)?;
        let finite = grad.is_finite()
            && [terms.policy, terms.value, terms.tau_grad, ensemble_loss]
                .iter()
                .all(|x| x.is_finite());
        let mut applied = false;
        if finite {
            let mut blocks = self.net.blocks_mut();
            self.opt.step(&mut blocks, &grad.blocks)?;
            if self.cfg.mode == Mode::Ersac && !self.cfg.fixed_tau && has_online {
                self.tau = (self.tau - self.cfg.tau_lr * terms.tau_grad).clamp(self.cfg.tau_min, self.cfg.tau_max);
            }
            applied = true;
        } else {
            self.rejected += 1;
        }
        if let Some(c) = &mut self.counts {
            for b in batch.iter().filter(|b| b.online) {
                for st in &b.segment.steps {
                    c.observe(st.layer, st.state, st.action);
                }
            }
        }
        self.updates += 1;
        Ok(UpdateReport {
            terms,
            ensemble_loss,
            tau: self.tau,
            td_errors,
            applied,
        })
    }

    /// On-policy update from one freshly collected segment.
    pub fn step(&mut self, segment: &Segment) -> Result<UpdateReport, AgentError> {
        self.update(&[BatchSegment {
            segment,
            target: TargetKind::OnPolicy,
            online: true,
        }])
    }

    /// Runs one episode, calling `on_segment` whenever `rollout` steps have
    /// been gathered or the episode ends. Returns the episode return.
    pub fn run_episode<R, F>(&mut self, mdp: &TabularMdp, rng: &mut R, mut on_segment: F) -> Result<f64, AgentError>
    where
        R: Rng + ?Sized,
        F: FnMut(&mut Agent, Segment, &mut R) -> Result<(), AgentError>,
    {
        let noise = (mdp.reward_noise_scale() > 0.0).then(|| Normal::new(0.0, mdp.reward_noise_scale()).expect("validated"));
        let horizon = mdp.horizon();
        let mut state = sample_index(mdp.initial_dist(), rng);
        let mut steps = Vec::with_capacity(self.cfg.rollout.min(horizon));
        let mut ret = 0.0;
        for layer in 0..horizon {
            let (action, prob) = self.act(layer, state, rng);
            let mut reward = mdp.reward(layer, state, action);
            if let Some(n) = &noise {
                reward += n.sample(rng);
            }
            ret += reward;
            let target_noise = if self.cfg.online_target_noise {
                self.draw_target_noise(rng)
            } else {
                vec![0.0; self.num_heads()]
            };
            steps.push(SegStep {
                layer,
                state,
                action,
                reward,
                behavior_prob: prob,
                target_noise,
            });
            let next = mdp.next_dist(layer, state, action).map(|d| sample_index(d, rng));
            if steps.len() == self.cfg.rollout || next.is_none() {
                let end = match next {
                    None => Boundary::Terminal,
                    Some(s) => Boundary::Truncated { layer: layer + 1, state: s },
                };
                let seg = Segment {
                    steps: std::mem::take(&mut steps),
                    end,
                };
                on_segment(self, seg, rng)?;
            }
            if let Some(s) = next {
                state = s;
            }
        }
        Ok(ret)
    }
}
