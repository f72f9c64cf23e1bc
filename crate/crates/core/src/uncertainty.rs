//! Epistemic uncertainty backends.
//!
//! [`CountUncertainty`] is the exact tabular signal `sigma^2 / (n + pseudo)`.
//! [`RewardEnsemble`] predicts a per-action reward vector with `K` trainable
//! heads, each offset by a frozen random prior network; the spread of the
//! heads is the uncertainty.

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::mlp::{Activation, LayerInit, Mlp, MlpCache};
use crate::mdp::TabularMdp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UncertaintyError {
    #[error("noise vector has {got} components but the ensemble has {expected} heads")]
    NoiseDim { expected: usize, got: usize },
    #[error("an ensemble needs at least 2 heads, got {0}")]
    TooFewHeads(usize),
    #[error("action {action} out of range for {num_actions} actions")]
    BadAction { action: usize, num_actions: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Per-layer visit counts `n_l(s, a)`, flattened as `s * A + a`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitCounts {
    num_actions: usize,
    counts: Vec<Vec<u64>>,
}

impl VisitCounts {
    pub fn new(layer_states: &[usize], num_actions: usize) -> Self {
        Self {
            num_actions,
            counts: layer_states.iter().map(|n| vec![0; n * num_actions]).collect(),
        }
    }

    pub fn get(&self, layer: usize, state: usize, action: usize) -> u64 {
        self.counts[layer][state * self.num_actions + action]
    }

    pub fn increment(&mut self, layer: usize, state: usize, action: usize) {
        self.counts[layer][state * self.num_actions + action] += 1;
    }

    pub fn tables_mut(&mut self) -> &mut [Vec<u64>] {
        &mut self.counts
    }

    pub fn tables(&self) -> &[Vec<u64>] {
        &self.counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountUncertainty {
    base_scale: f64,
    pseudo_count: f64,
    counts: VisitCounts,
}

impl CountUncertainty {
    pub fn new(mdp: &TabularMdp, base_scale: f64, pseudo_count: f64) -> Self {
        Self::with_shape(mdp.layer_states(), mdp.num_actions(), base_scale, pseudo_count)
    }

    pub fn with_shape(layer_states: &[usize], num_actions: usize, base_scale: f64, pseudo_count: f64) -> Self {
        assert!(base_scale >= 0.0 && pseudo_count > 0.0, "need scale >= 0 and pseudo-count > 0");
        Self {
            base_scale,
            pseudo_count,
            counts: VisitCounts::new(layer_states, num_actions),
        }
    }

    pub fn counts(&self) -> &VisitCounts {
        &self.counts
    }

    pub fn counts_mut(&mut self) -> &mut VisitCounts {
        &mut self.counts
    }

    pub fn base_scale(&self) -> f64 {
        self.base_scale
    }

    /// `sigma^2 / (n(s, a) + pseudo_count)`.
    pub fn sigma2(&self, layer: usize, state: usize, action: usize) -> f64 {
        self.base_scale * self.base_scale / (self.counts.get(layer, state, action) as f64 + self.pseudo_count)
    }

    pub fn sigma2_table(&self) -> Vec<Vec<f64>> {
        let s2 = self.base_scale * self.base_scale;
        self.counts
            .tables()
            .iter()
            .map(|t| t.iter().map(|&n| s2 / (n as f64 + self.pseudo_count)).collect())
            .collect()
    }

    pub fn observe(&mut self, layer: usize, state: usize, action: usize) {
        self.counts.increment(layer, state, action);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub heads: usize,
    pub prior_scale: f64,
    /// Variance of each component of the target noise.
    pub noise_var: f64,
    pub prior_hidden: usize,
    /// Start every trainable head from the same parameters.
    pub identical_heads: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            heads: 10,
            prior_scale: 1.0,
            noise_var: 0.1,
            prior_hidden: 16,
            identical_heads: false,
        }
    }
}

/// Inputs seen by the ensemble: `features` feed the trainable heads and the
/// raw observation feeds the frozen priors.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleInput<'a> {
    pub features: &'a [f64],
    pub obs: &'a [f64],
}

/// One regression target for the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSample {
    pub features: Vec<f64>,
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub target_noise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardEnsemble {
    num_actions: usize,
    prior_scale: f64,
    noise_var: f64,
    /// Linear map from features to `K * A` outputs, head-major.
    heads: Mlp,
    priors: Vec<Mlp>,
}

/// Population variance, shifted by the first element so equal inputs give
/// exactly zero.
pub fn population_variance(xs: &[f64]) -> f64 {
    let Some(&x0) = xs.first() else { return 0.0 };
    let n = xs.len() as f64;
    let mean = xs.iter().map(|x| x - x0).sum::<f64>() / n;
    (xs.iter().map(|x| (x - x0 - mean).powi(2)).sum::<f64>() / n).max(0.0)
}

impl RewardEnsemble {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        obs_dim: usize,
        num_actions: usize,
        cfg: &EnsembleConfig,
        rng: &mut R,
    ) -> Result<Self, UncertaintyError> {
        if cfg.heads < 2 {
            return Err(UncertaintyError::TooFewHeads(cfg.heads));
        }
        let k = cfg.heads;
        let head_std = 1.0 / (feature_dim as f64).sqrt();
        let mut heads = Mlp::new(
            &[feature_dim, k * num_actions],
            Activation::Identity,
            false,
            &[LayerInit::Normal(head_std)],
            rng,
        );
        if cfg.identical_heads {
            let p = heads.params_mut();
            let block = num_actions * feature_dim;
            let (first, rest) = p[..k * block].split_at_mut(block);
            rest.chunks_mut(block).for_each(|c| c.copy_from_slice(first));
        }
        let priors = (0..k)
            .map(|_| {
                Mlp::new(
                    &[obs_dim, cfg.prior_hidden, num_actions],
                    Activation::Tanh,
                    false,
                    &[
                        LayerInit::Normal(1.0),
                        LayerInit::Normal(1.0 / (cfg.prior_hidden as f64).sqrt()),
                    ],
                    rng,
                )
            })
            .collect();
        Ok(Self {
            num_actions,
            prior_scale: cfg.prior_scale,
            noise_var: cfg.noise_var,
            heads,
            priors,
        })
    }

    pub fn num_heads(&self) -> usize {
        self.priors.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn prior_scale(&self) -> f64 {
        self.prior_scale
    }

    pub fn heads(&self) -> &Mlp {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut Mlp {
        &mut self.heads
    }

    pub fn priors(&self) -> &[Mlp] {
        &self.priors
    }

    /// `beta * p_k(obs)` for every head, head-major `K * A`.
    pub fn prior_outputs(&self, obs: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_heads() * self.num_actions);
        let mut cache = MlpCache::default();
        for p in &self.priors {
            p.forward(obs, &mut cache);
            out.extend(cache.output().iter().map(|y| self.prior_scale * y));
        }
        out
    }

    /// Head outputs plus scaled priors, head-major `K * A`.
    pub fn predict(&self, input: EnsembleInput<'_>) -> Vec<f64> {
        let mut out = self.heads.eval(input.features);
        out.iter_mut().zip(self.prior_outputs(input.obs)).for_each(|(o, p)| *o += p);
        out
    }

    pub fn predict_action(&self, input: EnsembleInput<'_>, action: usize) -> Vec<f64> {
        action_column(&self.predict(input), self.num_actions, action)
    }

    pub fn sigma2(&self, input: EnsembleInput<'_>, action: usize) -> f64 {
        population_variance(&self.predict_action(input, action))
    }

    /// Squared-error loss `sum_k 0.5 (pred_k - (reward + target_noise_k))^2` for one
    /// action and its adjoint on the full `K * A` output.
    pub fn loss_adjoint(
        &self,
        predictions: &[f64],
        action: usize,
        reward: f64,
        target_noise: &[f64],
    ) -> Result<(f64, Vec<f64>), UncertaintyError> {
        let k = self.num_heads();
        if target_noise.len() != k {
            return Err(UncertaintyError::NoiseDim {
                expected: k,
                got: target_noise.len(),
            });
        }
        if action >= self.num_actions {
            return Err(UncertaintyError::BadAction {
                action,
                num_actions: self.num_actions,
            });
        }
        let mut adj = vec![0.0; predictions.len()];
        let mut loss = 0.0;
        for (h, z) in target_noise.iter().enumerate() {
            let i = h * self.num_actions + action;
            let err = predictions[i] - (reward + z);
            loss += 0.5 * err * err;
            adj[i] = err;
        }
        Ok((loss, adj))
    }

    /// One plain gradient step of the mean squared-error loss over `batch`.
    /// Returns the loss before the step. Priors are never touched.
    pub fn update(&mut self, batch: &[EnsembleSample], step_size: f64) -> Result<f64, UncertaintyError> {
        let mut grad = vec![0.0; self.heads.num_params()];
        let mut cache = MlpCache::default();
        let mut total = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for s in batch {
            self.heads.forward(&s.features, &mut cache);
            let mut pred = cache.output().to_vec();
            pred.iter_mut().zip(self.prior_outputs(&s.obs)).for_each(|(o, p)| *o += p);
            let (loss, mut adj) = self.loss_adjoint(&pred, s.action, s.reward, &s.target_noise)?;
            total += loss * scale;
            adj.iter_mut().for_each(|a| *a *= scale);
            self.heads.backward(&cache, &adj, &mut grad, false);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(UncertaintyError::NonFinite("ensemble gradient"));
        }
        self.heads
            .params_mut()
            .iter_mut()
            .zip(&grad)
            .for_each(|(p, g)| *p -= step_size * g);
        Ok(total)
    }

    /// Hash of the prior parameters' bit patterns.
    pub fn prior_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in &self.priors {
            p.params().iter().for_each(|x| x.to_bits().hash(&mut h));
        }
        h.finish()
    }
}

/// Entries `[k * A + action]` of a head-major prediction vector.
pub fn action_column(predictions: &[f64], num_actions: usize, action: usize) -> Vec<f64> {
    predictions.iter().skip(action).step_by(num_actions).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn one_hot(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    fn ensemble(seed: u64, cfg: &EnsembleConfig) -> RewardEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RewardEnsemble::new(6, 6, 2, cfg, &mut rng).unwrap()
    }

    #[test]
    fn count_sigma2_arithmetic() {
        let mut cu = CountUncertainty::with_shape(&[1], 2, 2.0, 1.0);
        assert_eq!(cu.sigma2(0, 0, 0), 4.0);
        for _ in 0..3 {
            cu.observe(0, 0, 0);
        }
        assert_eq!(cu.sigma2(0, 0, 0), 1.0);
        assert_eq!(cu.sigma2_table(), vec![vec![1.0, 4.0]]);
    }

    #[test]
    fn count_sigma2_strictly_decreasing() {
        let mut cu = CountUncertainty::with_shape(&[1], 1, 0.7, 1.0);
        let mut prev = cu.sigma2(0, 0, 0);
        for _ in 0..1000 {
            cu.observe(0, 0, 0);
            let next = cu.sigma2(0, 0, 0);
            assert!(next < prev);
            prev = next;
        }
        let n = cu.counts().get(0, 0, 0) as f64;
        assert!((cu.sigma2(0, 0, 0) * (n + 1.0) / 0.49 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn variance_arithmetic() {
        assert_eq!(population_variance(&[0.0, 2.0]), 1.0);
        assert_eq!(population_variance(&[3.0, 3.0, 3.0]), 0.0);
    }

    #[test]
    fn too_few_heads_rejected() {
        let cfg = EnsembleConfig {
            heads: 1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            RewardEnsemble::new(3, 3, 2, &cfg, &mut rng).unwrap_err(),
            UncertaintyError::TooFewHeads(1)
        );
    }

    #[test]
    fn identical_heads_without_prior_agree() {
        let cfg = EnsembleConfig {
            prior_scale: 0.0,
            identical_heads: true,
            ..Default::default()
        };
        let e = ensemble(1, &cfg);
        let x = one_hot(6, 2);
        let p = e.predict_action(EnsembleInput { features: &x, obs: &x }, 1);
        assert!(p.iter().all(|v| *v == p[0]));
        assert_eq!(e.sigma2(EnsembleInput { features: &x, obs: &x }, 1), 0.0);
    }

    #[test]
    fn fresh_heads_disagree() {
        let e = ensemble(2, &EnsembleConfig::default());
        let x = one_hot(6, 4);
        let p = e.predict_action(EnsembleInput { features: &x, obs: &x }, 0);
        for i in 0..p.len() {
            for j in 0..i {
                assert_ne!(p[i], p[j]);
            }
        }
        assert_eq!(p, e.predict_action(EnsembleInput { features: &x, obs: &x }, 0));
    }

    #[test]
    fn target_noise_dimension_checked() {
        let mut e = ensemble(3, &EnsembleConfig::default());
        let x = one_hot(6, 0);
        let s = EnsembleSample {
            features: x.clone(),
            obs: x,
            action: 0,
            reward: 1.0,
            target_noise: vec![0.0; 3],
        };
        assert_eq!(
            e.update(&[s], 0.1).unwrap_err(),
            UncertaintyError::NoiseDim { expected: 10, got: 3 }
        );
    }

    #[test]
    fn zero_step_and_frozen_priors() {
        let mut e = ensemble(4, &EnsembleConfig::default());
        let before = e.clone();
        let fp = e.prior_fingerprint();
        let x = one_hot(6, 1);
        let s = EnsembleSample {
            features: x.clone(),
            obs: x,
            action: 1,
            reward: 0.5,
            target_noise: vec![0.0; 10],
        };
        e.update(std::slice::from_ref(&s), 0.0).unwrap();
        assert_eq!(e, before);
        for _ in 0..50 {
            e.update(std::slice::from_ref(&s), 0.3).unwrap();
        }
        assert_eq!(e.prior_fingerprint(), fp);
        assert_eq!(e.priors(), before.priors());
    }

    #[test]
    fn heads_converge_to_target() {
        let mut e = ensemble(5, &EnsembleConfig::default());
        let x = one_hot(6, 3);
        let s = EnsembleSample {
            features: x.clone(),
            obs: x.clone(),
            action: 0,
            reward: 0.7,
            target_noise: vec![0.0; 10],
        };
        for _ in 0..500 {
            e.update(std::slice::from_ref(&s), 0.2).unwrap();
        }
        for p in e.predict_action(EnsembleInput { features: &x, obs: &x }, 0) {
            assert!((p - 0.7).abs() < 1e-9, "{p}");
        }
    }

    #[test]
    fn noisy_training_shrinks_variance() {
        let mut e = ensemble(6, &EnsembleConfig::default());
        let x = one_hot(6, 0);
        let input = EnsembleInput { features: &x, obs: &x };
        let v0 = e.sigma2(input, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let noise = Normal::new(0.0, 0.1f64.sqrt()).unwrap();
        // Small steps average the noisy targets, like a running mean.
        for _ in 0..10_000 {
            let s = EnsembleSample {
                features: x.clone(),
                obs: x.clone(),
                action: 1,
                reward: 0.0,
                target_noise: (0..10).map(|_| noise.sample(&mut rng)).collect(),
            };
            e.update(&[s], 0.005).unwrap();
        }
        let v1 = e.sigma2(input, 1);
        assert!(v1 * 10.0 <= v0, "{v0} -> {v1}");
    }
}
