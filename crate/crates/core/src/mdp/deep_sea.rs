//! DeepSea: an `L x L` grid where the agent starts top-left, descends one row
//! per step and moves one column left or right. Only `L` consecutive "right"
//! moves reach the rewarding bottom-right corner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Policy, TabularMdp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepSeaSpec {
    pub depth: usize,
    /// Seeds the per-cell mapping from action index to direction.
    pub flip_seed: u64,
    pub right_move_penalty: f64,
    pub goal_reward: f64,
}

impl DeepSeaSpec {
    /// bsuite-style defaults: step penalty `0.01 / depth`, goal reward 1.
    pub fn new(depth: usize) -> Self {
        assert!(depth >= 1, "depth must be at least 1");
        Self {
            depth,
            flip_seed: 0,
            right_move_penalty: 0.01 / depth as f64,
            goal_reward: 1.0,
        }
    }

    pub fn with_flip_seed(mut self, seed: u64) -> Self {
        self.flip_seed = seed;
        self
    }

    /// Return of the always-right path.
    pub fn optimal_return(&self) -> f64 {
        self.goal_reward - self.depth as f64 * self.right_move_penalty
    }
}

/// A built DeepSea instance: the tabular MDP plus the grid bookkeeping.
#[derive(Debug, Clone)]
pub struct DeepSea {
    spec: DeepSeaSpec,
    mdp: TabularMdp,
    /// `right_action[row * depth + col]` is the action index meaning "right".
    right_action: Vec<usize>,
}

/// Layer `l` has one state per column; column `c > l` is unreachable but kept
/// so that every grid cell has a one-hot slot.
pub fn build_deep_sea(spec: &DeepSeaSpec) -> DeepSea {
    assert!(spec.depth >= 1, "depth must be at least 1");
    assert!(spec.right_move_penalty >= 0.0, "penalty must be nonnegative");
    let l_n = spec.depth;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.flip_seed);
    let right_action: Vec<usize> = (0..l_n * l_n).map(|_| rng.random_range(0..2)).collect();

    let mut rewards = Vec::with_capacity(l_n);
    let mut transitions = Vec::with_capacity(l_n.saturating_sub(1));
    for row in 0..l_n {
        let mut r = vec![0.0; l_n * 2];
        let mut t = vec![0.0; l_n * 2 * l_n];
        for col in 0..l_n {
            let right = right_action[row * l_n + col];
            for a in 0..2 {
                let idx = col * 2 + a;
                let next_col = if a == right {
                    r[idx] -= spec.right_move_penalty;
                    if row == l_n - 1 && col == l_n - 1 {
                        r[idx] += spec.goal_reward;
                    }
                    (col + 1).min(l_n - 1)
                } else {
                    col.saturating_sub(1)
                };
                t[idx * l_n + next_col] = 1.0;
            }
        }
        rewards.push(r);
        if row + 1 < l_n {
            transitions.push(t);
        }
    }
    let mut init = vec![0.0; l_n];
    init[0] = 1.0;
    let mdp = TabularMdp::new(vec![l_n; l_n], 2, transitions, rewards, 0.0, init)
        .expect("deep sea construction is valid");
    DeepSea {
        spec: *spec,
        mdp,
        right_action,
    }
}

impl DeepSea {
    pub fn spec(&self) -> &DeepSeaSpec {
        &self.spec
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn depth(&self) -> usize {
        self.spec.depth
    }

    /// Width of the one-hot observation.
    pub fn obs_dim(&self) -> usize {
        self.spec.depth * self.spec.depth
    }

    pub fn one_hot_index(&self, row: usize, col: usize) -> usize {
        row * self.spec.depth + col
    }

    pub fn one_hot(&self, row: usize, col: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.obs_dim()];
        x[self.one_hot_index(row, col)] = 1.0;
        x
    }

    pub fn right_action(&self, row: usize, col: usize) -> usize {
        self.right_action[row * self.spec.depth + col]
    }

    /// Deterministic successor column, or `None` past the last row.
    pub fn step(&self, row: usize, col: usize, action: usize) -> (f64, Option<usize>) {
        let reward = self.mdp.reward(row, col, action);
        let next = self
            .mdp
            .next_dist(row, col, action)
            .map(|d| d.iter().position(|p| *p == 1.0).expect("deterministic kernel"));
        (reward, next)
    }

    pub fn always_right_policy(&self) -> Policy {
        let l_n = self.spec.depth;
        let choices: Vec<Vec<usize>> = (0..l_n)
            .map(|row| (0..l_n).map(|col| self.right_action(row, col)).collect())
            .collect();
        Policy::deterministic(2, &choices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_values_pi, exact_values_star, Policy};

    #[test]
    fn right_moves_down_diagonal() {
        let ds = build_deep_sea(&DeepSeaSpec::new(3));
        let right = ds.right_action(0, 0);
        assert_eq!(ds.step(0, 0, right).1, Some(1));
        assert_eq!(ds.step(0, 0, 1 - right).1, Some(0));
    }

    #[test]
    fn always_right_returns_099() {
        for depth in [1, 3, 10, 25] {
            let ds = build_deep_sea(&DeepSeaSpec::new(depth).with_flip_seed(depth as u64));
            let v = exact_values_pi(ds.mdp(), &ds.always_right_policy());
            assert!((v.v[0][0] - 0.99).abs() < 1e-12, "depth {depth}");
        }
    }

    #[test]
    fn same_seed_same_tables() {
        let a = build_deep_sea(&DeepSeaSpec::new(6).with_flip_seed(4));
        let b = build_deep_sea(&DeepSeaSpec::new(6).with_flip_seed(4));
        let c = build_deep_sea(&DeepSeaSpec::new(6).with_flip_seed(5));
        assert_eq!(a.mdp(), b.mdp());
        assert_ne!(a.mdp(), c.mdp());
    }

    #[test]
    fn optimal_policy_goes_right_on_diagonal() {
        for depth in [2, 5, 12] {
            let ds = build_deep_sea(&DeepSeaSpec::new(depth).with_flip_seed(7));
            let (vals, pi) = exact_values_star(ds.mdp());
            assert!((vals.v[0][0] - ds.spec().optimal_return()).abs() < 1e-12);
            for row in 0..depth {
                let right = ds.right_action(row, row);
                assert_eq!(pi.prob(row, row, right), 1.0);
            }
        }
    }

    #[test]
    fn reachable_states_per_layer() {
        let ds = build_deep_sea(&DeepSeaSpec::new(7));
        let occ = ds.mdp().occupancy(&Policy::uniform(ds.mdp()));
        for (l, layer) in occ.iter().enumerate() {
            let reachable = layer.iter().filter(|p| **p > 0.0).count();
            assert_eq!(reachable, l + 1);
            assert!(layer.iter().skip(l + 1).all(|p| *p == 0.0));
        }
    }

    #[test]
    fn uniform_goal_probability() {
        // Brute force over all 2^depth action sequences.
        let depth = 10;
        let ds = build_deep_sea(&DeepSeaSpec::new(depth).with_flip_seed(2));
        let mut hits = 0u32;
        for seq in 0u32..(1 << depth) {
            let mut col = 0;
            let mut got = false;
            for row in 0..depth {
                let a = ((seq >> row) & 1) as usize;
                let (r, next) = ds.step(row, col, a);
                if r > 0.5 {
                    got = true;
                }
                if let Some(n) = next {
                    col = n;
                }
            }
            hits += got as u32;
        }
        assert_eq!(hits, 1);
        let occ = ds.mdp().occupancy(&Policy::uniform(ds.mdp()));
        let p_goal = occ[depth - 1][depth - 1] * 0.5;
        assert!((p_goal - 0.5f64.powi(depth as i32)).abs() < 1e-15);
    }
}
