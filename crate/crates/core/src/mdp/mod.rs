//! Layered finite-horizon MDPs.
//!
//! An MDP with horizon `L` has states partitioned into layers `0..L`. Layer `l`
//! transitions land only in layer `l + 1`; the last layer always moves to the
//! single terminating state, whose value is zero. All per-(state, action)
//! tables are stored row-major as `s * num_actions + a`.

mod deep_sea;
pub(crate) mod text;

pub use deep_sea::{build_deep_sea, DeepSea, DeepSeaSpec};
pub use text::{parse_mdp, write_mdp};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Tolerance for probability rows.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("horizon must be positive")]
    EmptyHorizon,
    #[error("number of actions must be positive")]
    NoActions,
    #[error("layer {layer} has no states")]
    EmptyLayer { layer: usize },
    #[error("expected {expected} {what} tables, got {got}")]
    TableCount {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what} table for layer {layer} has length {got}, expected {expected}")]
    TableShape {
        what: &'static str,
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("transition row (layer {layer}, state {state}, action {action}) is not a distribution (sum={sum})")]
    BadTransitionRow {
        layer: usize,
        state: usize,
        action: usize,
        sum: f64,
    },
    #[error("initial distribution is not a distribution (sum={sum})")]
    BadInitialDist { sum: f64 },
    #[error("policy row (layer {layer}, state {state}) is not a distribution (sum={sum})")]
    BadPolicyRow { layer: usize, state: usize, sum: f64 },
    #[error("reward noise scale must be nonnegative and finite, got {0}")]
    BadNoise(f64),
    #[error("non-finite reward at layer {layer}")]
    NonFiniteReward { layer: usize },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Ground-truth layered MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    layer_states: Vec<usize>,
    num_actions: usize,
    /// `transitions[l][(s * A + a) * S_{l+1} + s']` for `l < L - 1`.
    transitions: Vec<Vec<f64>>,
    mean_rewards: Vec<Vec<f64>>,
    reward_noise_scale: f64,
    initial_dist: Vec<f64>,
}

fn check_distribution(row: &[f64]) -> Result<(), f64> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > PROB_TOL {
        return Err(sum);
    }
    Ok(())
}

impl TabularMdp {
    /// Build and validate an MDP.
    ///
    /// `transitions` holds one kernel per layer boundary (`L - 1` of them);
    /// `mean_rewards` holds one table per layer.
    pub fn new(
        layer_states: Vec<usize>,
        num_actions: usize,
        transitions: Vec<Vec<f64>>,
        mean_rewards: Vec<Vec<f64>>,
        reward_noise_scale: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self, MdpError> {
        let horizon = layer_states.len();
        if horizon == 0 {
            return Err(MdpError::EmptyHorizon);
        }
        if num_actions == 0 {
            return Err(MdpError::NoActions);
        }
        if let Some(layer) = layer_states.iter().position(|&n| n == 0) {
            return Err(MdpError::EmptyLayer { layer });
        }
        if !(reward_noise_scale >= 0.0) || !reward_noise_scale.is_finite() {
            return Err(MdpError::BadNoise(reward_noise_scale));
        }
        if mean_rewards.len() != horizon {
            return Err(MdpError::TableCount {
                what: "reward",
                expected: horizon,
                got: mean_rewards.len(),
            });
        }
        if transitions.len() != horizon - 1 {
            return Err(MdpError::TableCount {
                what: "transition",
                expected: horizon - 1,
                got: transitions.len(),
            });
        }
        for (layer, table) in mean_rewards.iter().enumerate() {
            let expected = layer_states[layer] * num_actions;
            if table.len() != expected {
                return Err(MdpError::TableShape {
                    what: "reward",
                    layer,
                    expected,
                    got: table.len(),
                });
            }
            if table.iter().any(|r| !r.is_finite()) {
                return Err(MdpError::NonFiniteReward { layer });
            }
        }
        for (layer, table) in transitions.iter().enumerate() {
            let next = layer_states[layer + 1];
            let expected = layer_states[layer] * num_actions * next;
            if table.len() != expected {
                return Err(MdpError::TableShape {
                    what: "transition",
                    layer,
                    expected,
                    got: table.len(),
                });
            }
            for (row_idx, row) in table.chunks(next).enumerate() {
                check_distribution(row).map_err(|sum| MdpError::BadTransitionRow {
                    layer,
                    state: row_idx / num_actions,
                    action: row_idx % num_actions,
                    sum,
                })?;
            }
        }
        if initial_dist.len() != layer_states[0] {
            return Err(MdpError::TableShape {
                what: "initial distribution",
                layer: 0,
                expected: layer_states[0],
                got: initial_dist.len(),
            });
        }
        check_distribution(&initial_dist).map_err(|sum| MdpError::BadInitialDist { sum })?;
        Ok(Self {
            layer_states,
            num_actions,
            transitions,
            mean_rewards,
            reward_noise_scale,
            initial_dist,
        })
    }

    pub fn horizon(&self) -> usize {
        self.layer_states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn layer_states(&self) -> &[usize] {
        &self.layer_states
    }

    pub fn num_states(&self, layer: usize) -> usize {
        self.layer_states[layer]
    }

    pub fn reward_noise_scale(&self) -> f64 {
        self.reward_noise_scale
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn mean_rewards(&self) -> &[Vec<f64>] {
        &self.mean_rewards
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    pub fn reward(&self, layer: usize, state: usize, action: usize) -> f64 {
        self.mean_rewards[layer][state * self.num_actions + action]
    }

    /// Next-state distribution, or `None` from the last layer (terminal).
    pub fn next_dist(&self, layer: usize, state: usize, action: usize) -> Option<&[f64]> {
        let table = self.transitions.get(layer)?;
        let next = self.layer_states[layer + 1];
        let row = state * self.num_actions + action;
        Some(&table[row * next..(row + 1) * next])
    }

    /// `sum_{s'} P_l(s'|s,a) values[s']`, zero from the last layer.
    pub fn expected_next(&self, layer: usize, state: usize, action: usize, values: &[f64]) -> f64 {
        match self.next_dist(layer, state, action) {
            Some(row) => row.iter().zip(values).map(|(p, v)| p * v).sum(),
            None => 0.0,
        }
    }

    /// Same shape and support with different rewards.
    pub fn with_rewards(&self, mean_rewards: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        Self::new(
            self.layer_states.clone(),
            self.num_actions,
            self.transitions.clone(),
            mean_rewards,
            self.reward_noise_scale,
            self.initial_dist.clone(),
        )
    }

    /// True when both MDPs index the same state-action space.
    pub fn same_shape(&self, other: &TabularMdp) -> bool {
        self.layer_states == other.layer_states && self.num_actions == other.num_actions
    }

    /// Per-layer state distribution reached from `initial_dist` under `policy`.
    pub fn occupancy(&self, policy: &Policy) -> Vec<Vec<f64>> {
        let a_n = self.num_actions;
        let mut occ = Vec::with_capacity(self.horizon());
        occ.push(self.initial_dist.clone());
        for l in 0..self.horizon() - 1 {
            let mut next = vec![0.0; self.layer_states[l + 1]];
            for (s, &d) in occ[l].iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for a in 0..a_n {
                    let w = d * policy.prob(l, s, a);
                    if w == 0.0 {
                        continue;
                    }
                    let row = self.next_dist(l, s, a).expect("inner layer");
                    for (n, p) in next.iter_mut().zip(row) {
                        *n += w * p;
                    }
                }
            }
            occ.push(next);
        }
        occ
    }
}

/// Per-layer stochastic policy, `probs[l][s * A + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_actions: usize,
    probs: Vec<Vec<f64>>,
}

impl Policy {
    pub fn new(num_actions: usize, probs: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        if num_actions == 0 {
            return Err(MdpError::NoActions);
        }
        for (layer, table) in probs.iter().enumerate() {
            if table.len() % num_actions != 0 {
                return Err(MdpError::TableShape {
                    what: "policy",
                    layer,
                    expected: (table.len() / num_actions + 1) * num_actions,
                    got: table.len(),
                });
            }
            for (state, row) in table.chunks(num_actions).enumerate() {
                check_distribution(row)
                    .or_else(|sum| {
                        // Policies built from softmaxes carry more rounding than kernels.
                        if (sum - 1.0).abs() <= 1e-9 && row.iter().all(|p| *p >= 0.0) {
                            Ok(())
                        } else {
                            Err(sum)
                        }
                    })
                    .map_err(|sum| MdpError::BadPolicyRow { layer, state, sum })?;
            }
        }
        Ok(Self { num_actions, probs })
    }

    pub fn uniform(mdp: &TabularMdp) -> Self {
        let a_n = mdp.num_actions();
        let p = 1.0 / a_n as f64;
        Self {
            num_actions: a_n,
            probs: mdp.layer_states().iter().map(|&n| vec![p; n * a_n]).collect(),
        }
    }

    /// Deterministic policy from per-layer action choices.
    pub fn deterministic(num_actions: usize, choices: &[Vec<usize>]) -> Self {
        let probs = choices
            .iter()
            .map(|layer| {
                let mut t = vec![0.0; layer.len() * num_actions];
                for (s, &a) in layer.iter().enumerate() {
                    t[s * num_actions + a] = 1.0;
                }
                t
            })
            .collect();
        Self { num_actions, probs }
    }

    /// Checks the policy covers every state of `mdp`.
    pub fn check_shape(&self, mdp: &TabularMdp) -> Result<(), MdpError> {
        if self.num_actions != mdp.num_actions() {
            return Err(MdpError::NoActions);
        }
        if self.probs.len() != mdp.horizon() {
            return Err(MdpError::TableCount {
                what: "policy",
                expected: mdp.horizon(),
                got: self.probs.len(),
            });
        }
        for (layer, (t, &n)) in self.probs.iter().zip(mdp.layer_states()).enumerate() {
            if t.len() != n * self.num_actions {
                return Err(MdpError::TableShape {
                    what: "policy",
                    layer,
                    expected: n * self.num_actions,
                    got: t.len(),
                });
            }
        }
        Ok(())
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, layer: usize, state: usize, action: usize) -> f64 {
        self.probs[layer][state * self.num_actions + action]
    }

    pub fn row(&self, layer: usize, state: usize) -> &[f64] {
        let a = self.num_actions;
        &self.probs[layer][state * a..(state + 1) * a]
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.probs
    }
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Draw an index from a discrete distribution.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` just below 1; fall back to the last supported entry.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub layer: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub behavior_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub terminal: bool,
}

impl Trajectory {
    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Roll out one full episode of `policy` in `mdp`.
pub fn sample_episode<R: Rng + ?Sized>(mdp: &TabularMdp, policy: &Policy, rng: &mut R) -> Trajectory {
    let noise = if mdp.reward_noise_scale() > 0.0 {
        Some(Normal::new(0.0, mdp.reward_noise_scale()).expect("validated noise scale"))
    } else {
        None
    };
    let mut steps = Vec::with_capacity(mdp.horizon());
    let mut state = sample_index(mdp.initial_dist(), rng);
    for layer in 0..mdp.horizon() {
        let row = policy.row(layer, state);
        let action = sample_index(row, rng);
        let mut reward = mdp.reward(layer, state, action);
        if let Some(n) = &noise {
            reward += n.sample(rng);
        }
        steps.push(Step {
            layer,
            state,
            action,
            reward,
            behavior_prob: row[action],
        });
        if let Some(next) = mdp.next_dist(layer, state, action) {
            state = sample_index(next, rng);
        }
    }
    Trajectory {
        steps,
        terminal: true,
    }
}

/// Per-layer `Q` and `V` tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl ValueTables {
    /// `E_{s ~ rho} V_1(s)`.
    pub fn start_value(&self, initial_dist: &[f64]) -> f64 {
        initial_dist.iter().zip(&self.v[0]).map(|(p, v)| p * v).sum()
    }
}

/// Backward induction for a fixed policy.
pub fn exact_values_pi(mdp: &TabularMdp, policy: &Policy) -> ValueTables {
    let horizon = mdp.horizon();
    let a_n = mdp.num_actions();
    let mut q = vec![Vec::new(); horizon];
    let mut v = vec![Vec::new(); horizon];
    for l in (0..horizon).rev() {
        let n = mdp.num_states(l);
        let mut ql = vec![0.0; n * a_n];
        let mut vl = vec![0.0; n];
        for s in 0..n {
            for a in 0..a_n {
                let next = if l + 1 < horizon {
                    mdp.expected_next(l, s, a, &v[l + 1])
                } else {
                    0.0
                };
                let qa = mdp.reward(l, s, a) + next;
                ql[s * a_n + a] = qa;
                vl[s] += policy.prob(l, s, a) * qa;
            }
        }
        q[l] = ql;
        v[l] = vl;
    }
    ValueTables { q, v }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Optimal values and the greedy policy.
pub fn exact_values_star(mdp: &TabularMdp) -> (ValueTables, Policy) {
    let horizon = mdp.horizon();
    let a_n = mdp.num_actions();
    let mut q = vec![Vec::new(); horizon];
    let mut v = vec![Vec::new(); horizon];
    let mut choices = vec![Vec::new(); horizon];
    for l in (0..horizon).rev() {
        let n = mdp.num_states(l);
        let mut ql = vec![0.0; n * a_n];
        let mut vl = vec![0.0; n];
        let mut cl = vec![0; n];
        for s in 0..n {
            for a in 0..a_n {
                let next = if l + 1 < horizon {
                    mdp.expected_next(l, s, a, &v[l + 1])
                } else {
                    0.0
                };
                ql[s * a_n + a] = mdp.reward(l, s, a) + next;
            }
            let best = argmax(&ql[s * a_n..(s + 1) * a_n]);
            cl[s] = best;
            vl[s] = ql[s * a_n + best];
        }
        q[l] = ql;
        v[l] = vl;
        choices[l] = cl;
    }
    (ValueTables { q, v }, Policy::deterministic(a_n, &choices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bandit(rewards: Vec<f64>) -> TabularMdp {
        TabularMdp::new(vec![1], rewards.len(), vec![], vec![rewards], 0.0, vec![1.0]).unwrap()
    }

    #[test]
    fn single_step_uniform_value() {
        let mdp = bandit(vec![1.0, 0.0]);
        let vals = exact_values_pi(&mdp, &Policy::uniform(&mdp));
        assert_eq!(vals.v[0][0], 0.5);
    }

    #[test]
    fn rejects_bad_rows() {
        let err = TabularMdp::new(
            vec![1, 2],
            1,
            vec![vec![0.5, 0.4]],
            vec![vec![0.0], vec![0.0, 0.0]],
            0.0,
            vec![1.0],
        )
        .unwrap_err();
        assert!(matches!(err, MdpError::BadTransitionRow { .. }));
        let err = TabularMdp::new(vec![2], 1, vec![], vec![vec![0.0, 0.0]], 0.0, vec![0.7, 0.7]).unwrap_err();
        assert!(matches!(err, MdpError::BadInitialDist { .. }));
        assert_eq!(
            TabularMdp::new(vec![], 1, vec![], vec![], 0.0, vec![]).unwrap_err(),
            MdpError::EmptyHorizon
        );
    }

    #[test]
    fn one_action_star_equals_pi() {
        let mdp = TabularMdp::new(
            vec![1, 2],
            1,
            vec![vec![0.3, 0.7]],
            vec![vec![0.2], vec![1.0, -1.0]],
            0.0,
            vec![1.0],
        )
        .unwrap();
        let (star, _) = exact_values_star(&mdp);
        let pi = exact_values_pi(&mdp, &Policy::uniform(&mdp));
        assert_eq!(star.v, pi.v);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn deterministic_rollout_ignores_seed() {
        let ds = build_deep_sea(&DeepSeaSpec::new(4));
        let policy = ds.always_right_policy();
        let a = sample_episode(ds.mdp(), &policy, &mut ChaCha8Rng::seed_from_u64(1));
        let b = sample_episode(ds.mdp(), &policy, &mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(a, b);
        assert_eq!(a.steps.len(), 4);
        assert!(a.terminal);
    }

    #[test]
    fn behavior_probs_match_policy() {
        let ds = build_deep_sea(&DeepSeaSpec::new(5));
        let mdp = ds.mdp();
        let probs = mdp
            .layer_states()
            .iter()
            .enumerate()
            .map(|(l, &n)| {
                (0..n)
                    .flat_map(|s| {
                        let p = 0.1 + 0.8 * ((l * 7 + s * 3) % 5) as f64 / 4.0;
                        [p, 1.0 - p]
                    })
                    .collect()
            })
            .collect();
        let policy = Policy::new(2, probs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let traj = sample_episode(mdp, &policy, &mut rng);
            for (i, st) in traj.steps.iter().enumerate() {
                assert_eq!(st.layer, i);
                assert_eq!(st.behavior_prob, policy.prob(st.layer, st.state, st.action));
            }
        }
    }

    #[test]
    fn noisy_rewards_have_requested_scale() {
        let mdp = TabularMdp::new(vec![1], 1, vec![], vec![vec![2.0]], 0.5, vec![1.0]).unwrap();
        let policy = Policy::uniform(&mdp);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_episode(&mdp, &policy, &mut rng).total_return())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.02);
        assert!((var.sqrt() - 0.5).abs() < 0.02);
    }
}
