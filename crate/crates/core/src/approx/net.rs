//! Shared-torso policy/value network with reward-ensemble heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, LayerInit, Mlp, MlpCache};
use super::ApproxError;
use crate::uncertainty::{EnsembleConfig, RewardEnsemble};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    /// Weight std of the first torso layer (one-hot inputs select one column).
    pub input_std: f64,
    /// Gain of the orthogonal init for deeper torso layers.
    pub torso_gain: f64,
    pub ensemble: EnsembleConfig,
    /// Let reward-prediction gradients reach the torso.
    pub ensemble_trains_torso: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            input_std: 1.0,
            torso_gain: 1.0,
            ensemble: EnsembleConfig::default(),
            ensemble_trains_torso: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValueNet {
    num_actions: usize,
    torso: Mlp,
    /// Outputs `A` policy logits followed by the value.
    head: Mlp,
    ensemble: RewardEnsemble,
    ensemble_trains_torso: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    pub logits: Vec<f64>,
    pub value: f64,
    /// Reward predictions including priors, head-major `K * A`.
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct NetCache {
    torso: MlpCache,
    head: MlpCache,
    ens: MlpCache,
}

impl NetCache {
    pub fn features(&self) -> &[f64] {
        self.torso.output()
    }
}

/// Adjoints on each output head. A missing reward adjoint means zero.
#[derive(Debug, Clone, Copy)]
pub struct NetAdjoint<'a> {
    pub logits: &'a [f64],
    pub value: f64,
    pub rewards: Option<&'a [f64]>,
}

/// Parameter blocks of a [`PolicyValueNet`], in layout order.
pub const BLOCK_NAMES: [&str; 3] = ["torso", "policy_value_head", "ensemble_heads"];

/// Gradient accumulators aligned with [`PolicyValueNet::blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub blocks: Vec<Vec<f64>>,
}

impl GradientBundle {
    pub fn zeros_like(net: &PolicyValueNet) -> Self {
        Self {
            blocks: net.blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        self.blocks.iter_mut().for_each(|b| b.fill(0.0));
    }

    pub fn scale(&mut self, c: f64) {
        self.blocks.iter_mut().flatten().for_each(|g| *g *= c);
    }

    pub fn add_scaled(&mut self, other: &GradientBundle, c: f64) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|g| g.is_finite())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.blocks.concat()
    }

    pub fn norm(&self) -> f64 {
        self.blocks.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

impl PolicyValueNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, num_actions: usize, cfg: &NetConfig, rng: &mut R) -> Result<Self, ApproxError> {
        if obs_dim == 0 || num_actions == 0 || cfg.hidden.is_empty() {
            return Err(ApproxError::BadConfig("dimensions must be positive and the torso nonempty".into()));
        }
        let mut sizes = vec![obs_dim];
        sizes.extend(&cfg.hidden);
        let inits: Vec<LayerInit> = (0..cfg.hidden.len())
            .map(|i| {
                if i == 0 {
                    LayerInit::Normal(cfg.input_std)
                } else {
                    LayerInit::Orthogonal(cfg.torso_gain)
                }
            })
            .collect();
        let torso = Mlp::new(&sizes, Activation::Tanh, true, &inits, rng);
        let feat = *cfg.hidden.last().unwrap();
        let head = Mlp::new(&[feat, num_actions + 1], Activation::Identity, false, &[LayerInit::Zeros], rng);
        let ensemble = RewardEnsemble::new(feat, obs_dim, num_actions, &cfg.ensemble, rng)?;
        Ok(Self {
            num_actions,
            torso,
            head,
            ensemble,
            ensemble_trains_torso: cfg.ensemble_trains_torso,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.torso.input_dim()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn ensemble(&self) -> &RewardEnsemble {
        &self.ensemble
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Trainable parameter blocks (priors excluded).
    pub fn blocks(&self) -> [&[f64]; 3] {
        [self.torso.params(), self.head.params(), self.ensemble.heads().params()]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 3] {
        let Self {
            torso, head, ensemble, ..
        } = self;
        [torso.params_mut(), head.params_mut(), ensemble.heads_mut().params_mut()]
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), ApproxError> {
        if flat.len() != self.num_params() {
            return Err(ApproxError::Shape {
                what: "parameter vector",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for b in self.blocks_mut() {
            let n = b.len();
            b.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn forward(&self, obs: &[f64], cache: &mut NetCache) -> Result<NetOutput, ApproxError> {
        if obs.len() != self.obs_dim() {
            return Err(ApproxError::Shape {
                what: "observation",
                expected: self.obs_dim(),
                got: obs.len(),
            });
        }
        self.torso.forward(obs, &mut cache.torso);
        let feat = cache.torso.output();
        self.head.forward(feat, &mut cache.head);
        self.ensemble.heads().forward(feat, &mut cache.ens);
        let out = cache.head.output();
        let mut rewards = cache.ens.output().to_vec();
        rewards.iter_mut().zip(self.ensemble.prior_outputs(obs)).for_each(|(r, p)| *r += p);
        Ok(NetOutput {
            logits: out[..self.num_actions].to_vec(),
            value: out[self.num_actions],
            rewards,
        })
    }

    pub fn eval(&self, obs: &[f64]) -> Result<NetOutput, ApproxError> {
        self.forward(obs, &mut NetCache::default())
    }

    /// Policy logits and value only, skipping the reward heads.
    pub fn eval_policy_value(&self, obs: &[f64]) -> Result<(Vec<f64>, f64), ApproxError> {
        if obs.len() != self.obs_dim() {
            return Err(ApproxError::Shape {
                what: "observation",
                expected: self.obs_dim(),
                got: obs.len(),
            });
        }
        let mut cache = MlpCache::default();
        self.torso.forward(obs, &mut cache);
        let mut out = self.head.eval(cache.output());
        let value = out.pop().unwrap();
        Ok((out, value))
    }

    /// Accumulates gradients of `adjoint . outputs` into `grad`.
    pub fn backward(&self, cache: &NetCache, adjoint: NetAdjoint<'_>, grad: &mut GradientBundle) -> Result<(), ApproxError> {
        if adjoint.logits.len() != self.num_actions {
            return Err(ApproxError::Shape {
                what: "logit adjoint",
                expected: self.num_actions,
                got: adjoint.logits.len(),
            });
        }
        let k_a = self.ensemble.num_heads() * self.num_actions;
        if let Some(r) = adjoint.rewards {
            if r.len() != k_a {
                return Err(ApproxError::Shape {
                    what: "reward adjoint",
                    expected: k_a,
                    got: r.len(),
                });
            }
        }
        let mut head_adj = adjoint.logits.to_vec();
        head_adj.push(adjoint.value);
        let [g_torso, g_head, g_ens] = &mut grad.blocks[..] else {
            return Err(ApproxError::BadConfig("gradient bundle must have 3 blocks".into()));
        };
        let mut feat_adj = self.head.backward(&cache.head, &head_adj, g_head, true).unwrap();
        if let Some(r) = adjoint.rewards {
            let ens_adj = self
                .ensemble
                .heads()
                .backward(&cache.ens, r, g_ens, self.ensemble_trains_torso);
            if let Some(e) = ens_adj {
                feat_adj.iter_mut().zip(e).for_each(|(a, b)| *a += b);
            }
        }
        self.torso.backward(&cache.torso, &feat_adj, g_torso, false);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::gradcheck::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> NetConfig {
        NetConfig {
            hidden: vec![7, 5],
            ensemble: EnsembleConfig {
                heads: 3,
                prior_hidden: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn one_hot(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn fresh_net_is_uniform_with_zero_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = PolicyValueNet::new(9, 3, &NetConfig::default(), &mut rng).unwrap();
        let out = net.eval(&one_hot(9, 4)).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(softmax(&out.logits), vec![1.0 / 3.0; 3]);
        assert_eq!(out.rewards.len(), 30);
        assert_eq!(out, net.eval(&one_hot(9, 4)).unwrap());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = PolicyValueNet::new(4, 2, &small_cfg(), &mut rng).unwrap();
        assert!(matches!(net.eval(&[1.0; 3]), Err(ApproxError::Shape { .. })));
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1e4, -1e4, 0.0]);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let q = softmax(&[0.3, -1.2, 2.0, 0.0]);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = PolicyValueNet::new(4, 2, &small_cfg(), &mut rng).unwrap();
        let mut cache = NetCache::default();
        net.forward(&[0.5, 0.0, -1.0, 0.2], &mut cache).unwrap();
        let mut g = GradientBundle::zeros_like(&net);
        let zeros = vec![0.0; 6];
        net.backward(
            &cache,
            NetAdjoint {
                logits: &[0.0, 0.0],
                value: 0.0,
                rewards: Some(&zeros),
            },
            &mut g,
        )
        .unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = PolicyValueNet::new(4, 2, &small_cfg(), &mut rng).unwrap();
        // Perturb the zero-initialized head so every path carries signal.
        let mut p = net.flat_params();
        p.iter_mut().for_each(|x| *x += 0.3 * rng.random_range(-1.0..1.0));
        net.set_flat_params(&p).unwrap();
        let x = [0.5, 0.0, -1.0, 0.2];
        let adj_logits = [0.7, -1.3];
        let adj_r: Vec<f64> = (0..6).map(|i| 0.1 * i as f64 - 0.2).collect();
        let objective = |n: &PolicyValueNet| {
            let o = n.eval(&x).unwrap();
            o.logits.iter().zip(&adj_logits).map(|(a, b)| a * b).sum::<f64>()
                + 0.4 * o.value
                + o.rewards.iter().zip(&adj_r).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut cache = NetCache::default();
        net.forward(&x, &mut cache).unwrap();
        let mut g = GradientBundle::zeros_like(&net);
        net.backward(
            &cache,
            NetAdjoint {
                logits: &adj_logits,
                value: 0.4,
                rewards: Some(&adj_r),
            },
            &mut g,
        )
        .unwrap();
        let base = net.clone();
        let report = grad_check(
            |theta| {
                let mut n = base.clone();
                n.set_flat_params(theta).unwrap();
                objective(&n)
            },
            &net.flat_params(),
            &g.flat(),
            1e-5,
            &net.block_ranges(),
        );
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }
}

impl PolicyValueNet {
    /// `(name, range)` of each block in the flattened parameter vector.
    pub fn block_ranges(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut off = 0;
        self.blocks()
            .iter()
            .zip(BLOCK_NAMES)
            .map(|(b, name)| {
                let r = off..off + b.len();
                off += b.len();
                (name.to_string(), r)
            })
            .collect()
    }
}
