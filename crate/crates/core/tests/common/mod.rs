//! Independent oracles shared by the integration tests and the acceptance
//! runner.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ersac_core::agent::{policy_logit_grad, td_lambda_k_hat, Agent, Backend, ErsacConfig, Mode, Segment, SegmentEnd};
use ersac_core::approx::{NetConfig, OptimizerConfig, PolicyValueNet};
use ersac_core::klearning::random::random_belief;
use ersac_core::klearning::{k_backup_pi, BeliefMdp};
use ersac_core::mdp::{build_deep_sea, sample_index, DeepSeaSpec, Policy};
use ersac_core::uncertainty::EnsembleConfig;

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = x.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    x.iter().map(|v| v - z).collect()
}

/// Softmax-table policy over a layered shape; `logits[l][s * A + a]`.
pub fn table_policy(logits: &[Vec<f64>], num_actions: usize) -> Policy {
    let probs = logits
        .iter()
        .map(|row| row.chunks(num_actions).flat_map(|c| log_softmax(c).into_iter().map(f64::exp)).collect())
        .collect();
    Policy::new(num_actions, probs).expect("softmax rows")
}

#[derive(Debug, Clone)]
pub struct PolicyGradientComparison {
    pub exact: Vec<f64>,
    pub sampled_mean: Vec<f64>,
    pub standard_error: Vec<f64>,
    /// Largest `|mean - exact| / se` over components with nonzero spread.
    pub max_z: f64,
    pub trajectories: usize,
}

impl PolicyGradientComparison {
    pub fn within(&self, z: f64) -> bool {
        self.exact
            .iter()
            .zip(&self.sampled_mean)
            .zip(&self.standard_error)
            .all(|((e, m), se)| (m - e).abs() <= z * se + 1e-12)
    }
}

/// Central differences of `E_rho J^pi` (soft value with bonus) over the
/// softmax-table logits.
fn exact_gradient(belief: &BeliefMdp, logits: &[Vec<f64>], tau: f64) -> Vec<f64> {
    let a_n = belief.mean().num_actions();
    let rho = belief.mean().initial_dist().to_vec();
    let value = |lg: &[Vec<f64>]| {
        k_backup_pi(belief, &table_policy(lg, a_n), tau)
            .expect("valid inputs")
            .start_value(&rho)
    };
    let h = 1e-6;
    let mut grad = Vec::new();
    for l in 0..logits.len() {
        for i in 0..logits[l].len() {
            let mut up = logits.to_vec();
            let mut dn = logits.to_vec();
            up[l][i] += h;
            dn[l][i] -= h;
            grad.push((value(&up) - value(&dn)) / (2.0 * h));
        }
    }
    grad
}

/// Sampled estimator `sum_t [grad log pi(a_t) (K_t - b) + tau grad H(pi(s_t))]`
/// with Monte-Carlo `K_t` against the exact gradient, on a random two-layer
/// belief MDP.
pub fn sampled_policy_gradient(seed: u64, trajectories: usize) -> PolicyGradientComparison {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [1usize, 2];
    let a_n = 2;
    let belief = random_belief(&mut rng, &shape, a_n, 1.0);
    let tau = 0.5;
    let logits: Vec<Vec<f64>> = shape
        .iter()
        .map(|n| (0..n * a_n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let exact = exact_gradient(&belief, &logits, tau);
    let mdp = belief.mean();
    let policy = table_policy(&logits, a_n);
    let offsets: Vec<usize> = shape.iter().scan(0, |acc, n| {
        let o = *acc;
        *acc += n * a_n;
        Some(o)
    }).collect();
    let dim = exact.len();
    let (mut sum, mut sum_sq) = (vec![0.0; dim], vec![0.0; dim]);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for _ in 0..trajectories {
        let mut state = sample_index(mdp.initial_dist(), &mut sample_rng);
        let mut visits = Vec::new();
        for layer in 0..mdp.horizon() {
            let action = sample_index(policy.row(layer, state), &mut sample_rng);
            visits.push((layer, state, action));
            if let Some(d) = mdp.next_dist(layer, state, action) {
                state = sample_index(d, &mut sample_rng);
            }
        }
        let rewards: Vec<f64> = visits.iter().map(|&(l, s, a)| mdp.reward(l, s, a)).collect();
        let sigma2: Vec<f64> = visits.iter().map(|&(l, s, a)| belief.sigma2_at(l, s, a)).collect();
        let rows: Vec<Vec<f64>> = visits
            .iter()
            .map(|&(l, s, _)| log_softmax(&logits[l][s * a_n..(s + 1) * a_n]))
            .collect();
        let lp: Vec<f64> = visits.iter().zip(&rows).map(|(&(_, _, a), r)| r[a]).collect();
        let values = vec![0.0; visits.len()];
        let k = td_lambda_k_hat(&rewards, &sigma2, &values, &lp, tau, 1.0, 1.0, SegmentEnd::Terminal).expect("valid");
        let mut g = vec![0.0; dim];
        for (t, &(l, s, a)) in visits.iter().enumerate() {
            let row_grad = policy_logit_grad(&rows[t], a, k[t], tau);
            for (j, v) in row_grad.into_iter().enumerate() {
                g[offsets[l] + s * a_n + j] += v;
            }
        }
        for j in 0..dim {
            sum[j] += g[j];
            sum_sq[j] += g[j] * g[j];
        }
    }
    let n = trajectories as f64;
    let sampled_mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let standard_error: Vec<f64> = sum_sq
        .iter()
        .zip(&sampled_mean)
        .map(|(sq, m)| ((sq / n - m * m).max(0.0) / (n - 1.0)).sqrt())
        .collect();
    let max_z = exact
        .iter()
        .zip(&sampled_mean)
        .zip(&standard_error)
        .filter(|(_, se)| **se > 0.0)
        .map(|((e, m), se)| (m - e).abs() / se)
        .fold(0.0, f64::max);
    PolicyGradientComparison {
        exact,
        sampled_mean,
        standard_error,
        max_z,
        trajectories,
    }
}

#[derive(Debug, Clone)]
pub struct ActorCriticReduction {
    /// ERSAC with zero uncertainty and fixed temperature produced the same
    /// parameters, bit for bit, as the vanilla mode.
    pub bitwise_equal_to_vanilla: bool,
    /// `max |delta_agent - delta_oracle| / max |delta_oracle|`.
    pub oracle_rel_error: f64,
}

/// Hand-written soft-return recursion with zero uncertainty.
fn soft_returns(rewards: &[f64], values: &[f64], lp: &[f64], end: Option<f64>, tau: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut g = vec![0.0; n];
    for t in (0..n).rev() {
        let tail = if t + 1 < n {
            (1.0 - lambda) * values[t + 1] + lambda * (g[t + 1] - tau * lp[t + 1])
        } else {
            end.unwrap_or(0.0)
        };
        g[t] = rewards[t] + gamma * tail;
    }
    g
}

fn small_ac_config(mode: Mode, backend: Backend, tau: f64, lr: f64) -> ErsacConfig {
    ErsacConfig {
        optimizer: OptimizerConfig::Sgd { lr },
        tau_init: tau,
        fixed_tau: true,
        rollout: 50,
        lambda: 0.8,
        gamma: 0.97,
        mode,
        backend,
        net: NetConfig {
            hidden: vec![8, 6],
            ensemble: EnsembleConfig {
                heads: 3,
                prior_hidden: 4,
                ..Default::default()
            },
            ..Default::default()
        },
        value_loss_coef: 0.6,
        reward_loss_coef: 0.9,
        online_target_noise: true,
        ..Default::default()
    }
}

/// One update of ERSAC with `sigma == 0` and fixed temperature, against the
/// vanilla mode and against gradient descent on an independently written
/// entropy-regularized actor-critic objective.
pub fn actor_critic_reduction(seed: u64) -> ActorCriticReduction {
    let (tau, lr) = (0.3, 0.05);
    let ds = build_deep_sea(&DeepSeaSpec::new(4));
    let mdp = ds.mdp();
    let zero_sigma = Backend::Counts {
        sigma: 0.0,
        pseudo_count: 1.0,
    };
    let cfg = small_ac_config(Mode::Ersac, zero_sigma, tau, lr);
    let mut ersac = Agent::new(mdp, cfg.clone(), seed).expect("valid config");
    let mut vanilla = Agent::new(mdp, small_ac_config(Mode::Vanilla { tau }, Backend::Ensemble, tau, lr), seed).expect("valid config");

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut segments: Vec<Segment> = Vec::new();
    ersac
        .run_episode(mdp, &mut rng, |_, s, _| {
            segments.push(s);
            Ok(())
        })
        .expect("episode");
    let seg = &segments[0];
    let before = ersac.net().clone();

    ersac.step(seg).expect("update");
    vanilla.step(seg).expect("update");
    let bitwise_equal_to_vanilla = ersac.net().flat_params().iter().map(|x| x.to_bits()).eq(vanilla.net().flat_params().iter().map(|x| x.to_bits()))
        && ersac.tau().to_bits() == vanilla.tau().to_bits();

    let obs: Vec<Vec<f64>> = seg.steps.iter().map(|s| ersac.encoder().encode(s.layer, s.state)).collect();
    let base: Vec<_> = obs.iter().map(|o| before.eval(o).expect("shape")).collect();
    let base_lp: Vec<Vec<f64>> = base.iter().map(|o| log_softmax(&o.logits)).collect();
    let rewards: Vec<f64> = seg.steps.iter().map(|s| s.reward).collect();
    let values: Vec<f64> = base.iter().map(|o| o.value).collect();
    let lp_taken: Vec<f64> = seg.steps.iter().zip(&base_lp).map(|(s, lp)| lp[s.action]).collect();
    let end = match seg.end {
        ersac_core::agent::Boundary::Terminal => None,
        ersac_core::agent::Boundary::Truncated { layer, state } => {
            Some(before.eval(&ersac.encoder().encode(layer, state)).expect("shape").value)
        }
    };
    let returns = soft_returns(&rewards, &values, &lp_taken, end, tau, cfg.gamma, cfg.lambda);
    let a_n = mdp.num_actions();
    let n = seg.steps.len() as f64;
    let objective = |net: &PolicyValueNet| {
        let mut total = 0.0;
        for (i, st) in seg.steps.iter().enumerate() {
            let out = net.eval(&obs[i]).expect("shape");
            let lp = log_softmax(&out.logits);
            let entropy: f64 = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
            let actor = lp[st.action] * (returns[i] - values[i]) + tau * entropy;
            let critic = (out.value - (returns[i] - tau * lp_taken[i])).powi(2);
            let aux: f64 = st
                .target_noise
                .iter()
                .enumerate()
                .map(|(k, z)| 0.5 * (out.rewards[k * a_n + st.action] - (st.reward + z)).powi(2))
                .sum();
            total += cfg.value_loss_coef * critic - actor + cfg.reward_loss_coef * aux;
        }
        total / n
    };
    let theta0 = before.flat_params();
    let h = 1e-6;
    let mut probe = before.clone();
    let mut oracle_delta = Vec::with_capacity(theta0.len());
    for i in 0..theta0.len() {
        let mut t = theta0.clone();
        t[i] += h;
        probe.set_flat_params(&t).expect("length");
        let up = objective(&probe);
        t[i] -= 2.0 * h;
        probe.set_flat_params(&t).expect("length");
        let dn = objective(&probe);
        oracle_delta.push(-lr * (up - dn) / (2.0 * h));
    }
    let agent_delta: Vec<f64> = ersac.net().flat_params().iter().zip(&theta0).map(|(a, b)| a - b).collect();
    let scale = oracle_delta.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let err = agent_delta.iter().zip(&oracle_delta).map(|(a, o)| (a - o).abs()).fold(0.0, f64::max);
    ActorCriticReduction {
        bitwise_equal_to_vanilla,
        oracle_rel_error: err / scale,
    }
}
