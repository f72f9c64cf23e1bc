//! Noise-augmented prioritized replay and V-trace targets for the soft
//! value `U = K - tau log pi`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentError, BatchSegment, Boundary, SegStep, Segment, SegmentEnd, TargetKind, UpdateReport};

/// Added to `|td_error|` so every item stays sampleable.
pub const PRIORITY_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("behavior probability at step {0} must lie in (0, 1]")]
    BadBehavior(usize),
    #[error("index {index} out of range for {len} items")]
    BadIndex { index: usize, len: usize },
    #[error("{indices} indices but {errors} errors")]
    Misaligned { indices: usize, errors: usize },
    #[error("invalid V-trace clipping: need rho_bar >= c_bar > 0")]
    BadClip,
    #[error("temperature must be positive, got {0}")]
    BadTau(f64),
    #[error("segment is empty")]
    EmptySegment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VTraceConfig {
    pub rho_bar: f64,
    pub c_bar: f64,
}

impl Default for VTraceConfig {
    fn default() -> Self {
        Self { rho_bar: 1.0, c_bar: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub alpha: f64,
    pub batch_size: usize,
    pub offline_fraction: f64,
    pub vtrace: VTraceConfig,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 100_000,
            alpha: 1.0,
            batch_size: 16,
            offline_fraction: 0.97,
            vtrace: VTraceConfig::default(),
        }
    }
}

/// Number of replayed segments in a batch: `ceil(fraction * batch_size)`,
/// capped so at least one online segment remains.
pub fn offline_count(batch_size: usize, fraction: f64) -> usize {
    if fraction <= 0.0 || batch_size == 0 {
        return 0;
    }
    ((fraction * batch_size as f64).ceil() as usize).min(batch_size - 1)
}

/// V-trace targets expressed as `K` values, and the clipped importance
/// weights `rho_t` for the policy loss.
///
/// With `w_t = pi(a_t|s_t) / mu(a_t|s_t)`, `rho_t = min(rho_bar, w_t)`,
/// `c_t = min(c_bar, w_t)` and `U = K - tau log pi`:
///
/// `U_t = J_t + rho_t delta_t + gamma c_t lambda (U_{t+1} - J_{t+1})`,
/// `delta_t = r_t + sigma2_t / (2 tau) - tau log pi_t + gamma J_{t+1} - J_t`.
#[allow(clippy::too_many_arguments)]
pub fn vtrace_k_targets(
    rewards: &[f64],
    sigma2: &[f64],
    values: &[f64],
    log_probs: &[f64],
    behavior_probs: &[f64],
    tau: f64,
    gamma: f64,
    lambda: f64,
    end: SegmentEnd,
    cfg: &VTraceConfig,
) -> Result<(Vec<f64>, Vec<f64>), ReplayError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ReplayError::BadTau(tau));
    }
    if !(cfg.c_bar > 0.0 && cfg.rho_bar >= cfg.c_bar) {
        return Err(ReplayError::BadClip);
    }
    let n = rewards.len();
    if n == 0 {
        return Err(ReplayError::EmptySegment);
    }
    if let Some(t) = behavior_probs.iter().position(|&m| !(m > 0.0 && m <= 1.0)) {
        return Err(ReplayError::BadBehavior(t));
    }
    let mut rho = vec![0.0; n];
    let mut k = vec![0.0; n];
    for t in (0..n).rev() {
        let w = log_probs[t].exp() / behavior_probs[t];
        let r_t = cfg.rho_bar.min(w);
        let c_t = cfg.c_bar.min(w);
        rho[t] = r_t;
        let b = sigma2[t] / (2.0 * tau);
        // Expanded form of the soft-value recursion above.
        let bracket = if t + 1 == n {
            match end {
                SegmentEnd::Terminal => 0.0,
                SegmentEnd::Truncated(j_next) => r_t * j_next,
            }
        } else {
            (r_t - c_t * lambda) * values[t + 1] + c_t * lambda * (k[t + 1] - tau * log_probs[t + 1])
        };
        k[t] = (1.0 - r_t) * (values[t] + tau * log_probs[t]) + r_t * (rewards[t] + b) + gamma * bracket;
    }
    Ok((k, rho))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayItem {
    pub layer: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    /// Target noise, fixed at insertion.
    pub target_noise: Vec<f64>,
    pub behavior_prob: f64,
    pub episode: u64,
    pub step: usize,
    /// The episode terminated after this step.
    pub terminal: bool,
    pub priority: f64,
}

/// Array-backed binary tree holding subtree sums and maxima.
#[derive(Debug, Clone, PartialEq)]
struct SumTree {
    leaves: usize,
    sum: Vec<f64>,
    max: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            sum: vec![0.0; 2 * leaves],
            max: vec![0.0; 2 * leaves],
        }
    }

    fn set(&mut self, i: usize, value: f64) {
        let mut node = i + self.leaves;
        self.sum[node] = value;
        self.max[node] = value;
        while node > 1 {
            node /= 2;
            self.sum[node] = self.sum[2 * node] + self.sum[2 * node + 1];
            self.max[node] = self.max[2 * node].max(self.max[2 * node + 1]);
        }
    }

    fn total(&self) -> f64 {
        self.sum[1]
    }

    fn max(&self) -> f64 {
        self.max[1]
    }

    /// Leaf whose prefix-sum interval contains `u` in `[0, total)`.
    fn find(&self, mut u: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            if u < self.sum[left] || self.sum[left + 1] == 0.0 {
                node = left;
            } else {
                u -= self.sum[left];
                node = left + 1;
            }
        }
        node - self.leaves
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSegment {
    /// Buffer slots of the segment's steps, in time order.
    pub indices: Vec<usize>,
    pub segment: Segment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub segments: Vec<SampledSegment>,
    /// Fewer segments than requested were returned.
    pub short: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    alpha: f64,
    items: Vec<ReplayItem>,
    next: usize,
    tree: SumTree,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        assert!(alpha >= 0.0, "priority exponent must be nonnegative");
        Self {
            capacity,
            alpha,
            items: Vec::new(),
            next: 0,
            tree: SumTree::new(capacity),
        }
    }

    /// Rebuilds a buffer from stored items and write cursor.
    pub fn from_parts(capacity: usize, alpha: f64, items: Vec<ReplayItem>, cursor: usize) -> Result<Self, ReplayError> {
        if items.len() > capacity || cursor >= capacity.max(1) || (items.len() < capacity && cursor != items.len()) {
            return Err(ReplayError::BadIndex {
                index: cursor,
                len: items.len(),
            });
        }
        let mut buf = Self::new(capacity, alpha);
        for (i, it) in items.iter().enumerate() {
            buf.tree.set(i, buf.tree_value(it.priority));
        }
        buf.items = items;
        buf.next = cursor;
        Ok(buf)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn items(&self) -> &[ReplayItem] {
        &self.items
    }

    /// Slot that the next push will write.
    pub fn cursor(&self) -> usize {
        self.next
    }

    /// Largest priority currently stored, or 1 when empty.
    pub fn max_priority(&self) -> f64 {
        self.items.iter().map(|i| i.priority).fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.max(p)))).unwrap_or(1.0)
    }

    fn tree_value(&self, priority: f64) -> f64 {
        priority.powf(self.alpha)
    }

    /// Sampling probability of slot `i` as a segment start.
    pub fn probability(&self, i: usize) -> f64 {
        self.tree_value(self.items[i].priority) / self.tree.total()
    }

    /// Stores a step with fresh noise `target_noise ~ N(0, noise_var I_k)`. Returns its slot.
    pub fn push<R: Rng + ?Sized>(
        &mut self,
        step: &SegStep,
        episode: u64,
        terminal: bool,
        k: usize,
        noise_var: f64,
        rng: &mut R,
    ) -> usize {
        let target_noise = if noise_var > 0.0 {
            let n = Normal::new(0.0, noise_var.sqrt()).expect("finite noise");
            (0..k).map(|_| n.sample(rng)).collect()
        } else {
            vec![0.0; k]
        };
        let s = SegStep { target_noise, ..step.clone() };
        self.push_with_target_noise(&s, episode, terminal)
    }

    /// Stores a step keeping its own `target_noise`. Returns its slot.
    pub fn push_with_target_noise(&mut self, step: &SegStep, episode: u64, terminal: bool) -> usize {
        if self.items.len() == self.capacity {
            self.tree.set(self.next, 0.0);
        }
        let priority = if self.is_empty() { 1.0 } else { self.tree_priority_max() };
        let item = ReplayItem {
            layer: step.layer,
            state: step.state,
            action: step.action,
            reward: step.reward,
            target_noise: step.target_noise.clone(),
            behavior_prob: step.behavior_prob,
            episode,
            step: step.layer,
            terminal,
            priority,
        };
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[slot] = item;
        }
        self.tree.set(slot, self.tree_value(priority));
        self.next = (slot + 1) % self.capacity;
        slot
    }

    fn tree_priority_max(&self) -> f64 {
        let p = if self.alpha > 0.0 {
            self.tree.max().powf(1.0 / self.alpha)
        } else {
            self.max_priority()
        };
        if p > 0.0 {
            p
        } else {
            1.0
        }
    }

    /// Sets `priority = |td_error| + PRIORITY_EPS` for each slot.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<(), ReplayError> {
        if indices.len() != td_errors.len() {
            return Err(ReplayError::Misaligned {
                indices: indices.len(),
                errors: td_errors.len(),
            });
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.items.len()) {
            return Err(ReplayError::BadIndex {
                index: i,
                len: self.items.len(),
            });
        }
        for (&i, e) in indices.iter().zip(td_errors) {
            let p = e.abs() + PRIORITY_EPS;
            self.items[i].priority = p;
            self.tree.set(i, self.tree_value(p));
        }
        Ok(())
    }

    fn successor(&self, i: usize) -> Option<usize> {
        let j = (i + 1) % self.capacity;
        if j >= self.items.len() || j == self.next {
            return None;
        }
        let (a, b) = (&self.items[i], &self.items[j]);
        (b.episode == a.episode && b.step == a.step + 1).then_some(j)
    }

    /// Segment of up to `len` consecutive steps starting at slot `start`,
    /// truncated at episode boundaries.
    pub fn segment_at(&self, start: usize, len: usize) -> Option<SampledSegment> {
        let mut indices = vec![start];
        let mut cur = start;
        let mut next = None;
        while !self.items[cur].terminal {
            match self.successor(cur) {
                Some(j) if indices.len() < len => {
                    indices.push(j);
                    cur = j;
                }
                s => {
                    next = s;
                    break;
                }
            }
        }
        let end = if self.items[cur].terminal {
            Boundary::Terminal
        } else if let Some(j) = next {
            Boundary::Truncated {
                layer: self.items[j].layer,
                state: self.items[j].state,
            }
        } else {
            // The continuation is not stored; use the last step as bootstrap.
            let last = indices.pop()?;
            if indices.is_empty() {
                return None;
            }
            Boundary::Truncated {
                layer: self.items[last].layer,
                state: self.items[last].state,
            }
        };
        let steps = indices
            .iter()
            .map(|&i| {
                let it = &self.items[i];
                SegStep {
                    layer: it.layer,
                    state: it.state,
                    action: it.action,
                    reward: it.reward,
                    behavior_prob: it.behavior_prob,
                    target_noise: it.target_noise.clone(),
                }
            })
            .collect();
        Some(SampledSegment {
            indices,
            segment: Segment { steps, end },
        })
    }

    /// Draws a slot with probability proportional to `priority^alpha`.
    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        if self.is_empty() || !(self.tree.total() > 0.0) {
            return None;
        }
        let u = rng.random::<f64>() * self.tree.total();
        Some(self.tree.find(u).min(self.items.len() - 1))
    }

    /// Draws `n` segments of up to `segment_len` steps.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, segment_len: usize, rng: &mut R) -> SampleBatch {
        let want = n.min(self.items.len());
        let mut segments = Vec::with_capacity(want);
        for _ in 0..want {
            if let Some(seg) = self.sample_start(rng).and_then(|s| self.segment_at(s, segment_len)) {
                segments.push(seg);
            }
        }
        SampleBatch {
            short: segments.len() < n,
            segments,
        }
    }
}

/// One update mixing replayed segments (V-trace targets, stored noise) with
/// the online segment (TD(lambda) targets). Writes back priorities of the
/// replayed steps and then stores the online segment.
pub fn mixed_step<R: Rng + ?Sized>(
    agent: &mut Agent,
    online: &Segment,
    buffer: &mut ReplayBuffer,
    cfg: &ReplayConfig,
    episode: u64,
    rng: &mut R,
) -> Result<UpdateReport, AgentError> {
    let n_off = offline_count(cfg.batch_size, cfg.offline_fraction);
    let sampled = if n_off > 0 && !buffer.is_empty() {
        buffer.sample(n_off, agent.config().rollout, rng).segments
    } else {
        Vec::new()
    };
    let mut batch: Vec<BatchSegment<'_>> = sampled
        .iter()
        .map(|s| BatchSegment {
            segment: &s.segment,
            target: TargetKind::VTrace(cfg.vtrace),
            online: false,
        })
        .collect();
    batch.push(BatchSegment {
        segment: online,
        target: TargetKind::OnPolicy,
        online: true,
    });
    let report = agent.update(&batch)?;
    for (s, td) in sampled.iter().zip(&report.td_errors) {
        buffer.update_priorities(&s.indices, td)?;
    }
    let last = online.steps.len() - 1;
    let (k, noise_var) = (agent.num_heads(), agent.config().net.ensemble.noise_var);
    for (i, st) in online.steps.iter().enumerate() {
        buffer.push(st, episode, i == last && online.end == Boundary::Terminal, k, noise_var, rng);
    }
    Ok(report)
}
