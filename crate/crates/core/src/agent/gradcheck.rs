//! Finite-difference certification of the network backprop, the assembled
//! agent losses and the temperature gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{losses, Agent, AgentError, BatchSegment, ErsacConfig, LossStep, Segment, TargetKind};
use crate::approx::{grad_check, relative_error, GradCheckReport, GradientBundle, NetAdjoint, NetCache, NetConfig, PolicyValueNet};
use crate::mdp::{build_deep_sea, DeepSeaSpec};
use crate::uncertainty::EnsembleConfig;

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradientSuiteReport {
    pub network: GradCheckReport,
    pub assembled: GradCheckReport,
    pub tau_rel_error: f64,
    pub passed: bool,
}

fn small_net() -> NetConfig {
    NetConfig {
        hidden: vec![8, 6],
        ensemble: EnsembleConfig {
            heads: 3,
            prior_hidden: 4,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn perturb(net: &mut PolicyValueNet, rng: &mut ChaCha8Rng) {
    let mut p = net.flat_params();
    p.iter_mut().for_each(|x| *x += 0.3 * rng.random_range(-1.0..1.0));
    net.set_flat_params(&p).expect("same length");
}

fn log_softmax_oracle(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = x.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    x.iter().map(|v| v - z).collect()
}

/// Backprop of a random linear functional of every network output.
fn network_check(rng: &mut ChaCha8Rng) -> Result<GradCheckReport, AgentError> {
    let (obs_dim, a_n) = (5, 3);
    let mut net = PolicyValueNet::new(obs_dim, a_n, &small_net(), rng)?;
    perturb(&mut net, rng);
    let obs: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k = net.ensemble().num_heads();
    let w_logits: Vec<f64> = (0..a_n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w_value: f64 = rng.random_range(-1.0..1.0);
    let w_rewards: Vec<f64> = (0..k * a_n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let functional = |n: &PolicyValueNet| {
        let out = n.eval(&obs).expect("shape");
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        dot(&out.logits, &w_logits) + w_value * out.value + dot(&out.rewards, &w_rewards)
    };
    let mut cache = NetCache::default();
    net.forward(&obs, &mut cache)?;
    let mut g = GradientBundle::zeros_like(&net);
    net.backward(
        &cache,
        NetAdjoint {
            logits: &w_logits,
            value: w_value,
            rewards: Some(&w_rewards),
        },
        &mut g,
    )?;
    let base = net.clone();
    Ok(grad_check(
        |theta| {
            let mut n = base.clone();
            n.set_flat_params(theta).expect("same length");
            functional(&n)
        },
        &net.flat_params(),
        &g.flat(),
        STEP,
        &net.block_ranges(),
    ))
}

/// Agent gradient on a 3-step DeepSea trajectory against an independently
/// written objective with the same held-constant targets.
fn assembled_check(rng: &mut ChaCha8Rng, seed: u64) -> Result<(GradCheckReport, f64), AgentError> {
    let ds = build_deep_sea(&DeepSeaSpec::new(3));
    let cfg = ErsacConfig {
        net: small_net(),
        online_target_noise: true,
        value_loss_coef: 0.7,
        reward_loss_coef: 1.3,
        ..Default::default()
    };
    let mut agent = Agent::new(ds.mdp(), cfg.clone(), seed)?;
    perturb(agent.net_mut(), rng);
    agent.set_tau(0.37);
    let mut segments: Vec<Segment> = Vec::new();
    agent.run_episode(ds.mdp(), rng, |_, seg, _| {
        segments.push(seg);
        Ok(())
    })?;
    let seg = &segments[0];
    let batch = [BatchSegment {
        segment: seg,
        target: TargetKind::OnPolicy,
        online: true,
    }];
    let bg = agent.batch_gradient(&batch)?;
    let tau = agent.tau();
    let obs: Vec<Vec<f64>> = seg.steps.iter().map(|s| agent.encoder().encode(s.layer, s.state)).collect();
    let base_out: Vec<_> = obs.iter().map(|o| agent.net().eval(o).expect("shape")).collect();
    let base_lp: Vec<Vec<f64>> = base_out.iter().map(|o| log_softmax_oracle(&o.logits)).collect();
    let (k_hat, weights) = (&bg.k_hat[0], &bg.weights[0]);
    let n = seg.steps.len() as f64;
    let a_n = ds.mdp().num_actions();
    let objective = |net: &PolicyValueNet| {
        let (mut lp_sum, mut lv_sum, mut le_sum) = (0.0, 0.0, 0.0);
        for (i, st) in seg.steps.iter().enumerate() {
            let out = net.eval(&obs[i]).expect("shape");
            let lp = log_softmax_oracle(&out.logits);
            let h: f64 = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
            let adv = weights[i] * (k_hat[i] - base_out[i].value);
            lp_sum += lp[st.action] * adv + tau * h;
            lv_sum += (out.value - (k_hat[i] - tau * base_lp[i][st.action])).powi(2);
            for (kk, z) in st.target_noise.iter().enumerate() {
                le_sum += 0.5 * (out.rewards[kk * a_n + st.action] - (st.reward + z)).powi(2);
            }
        }
        (cfg.value_loss_coef * lv_sum - lp_sum + cfg.reward_loss_coef * le_sum) / n
    };
    let base = agent.net().clone();
    let assembled = grad_check(
        |theta| {
            let mut net = base.clone();
            net.set_flat_params(theta).expect("same length");
            objective(&net)
        },
        &base.flat_params(),
        &bg.grad.flat(),
        STEP,
        &base.block_ranges(),
    );

    let steps: Vec<LossStep<'_>> = seg
        .steps
        .iter()
        .enumerate()
        .map(|(i, st)| LossStep {
            log_probs: &base_lp[i],
            action: st.action,
            value: base_out[i].value,
            k_hat: k_hat[i],
            sigma2: bg.sigma2[0][i],
            weight: weights[i],
        })
        .collect();
    let l_tau = |t: f64| losses(&steps, t).expect("valid").0.tau;
    let h = 1e-6;
    let numeric = (l_tau(tau + h) - l_tau(tau - h)) / (2.0 * h);
    Ok((assembled, relative_error(bg.terms.tau_grad, numeric)))
}

pub fn gradient_suite(seed: u64) -> Result<GradientSuiteReport, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let network = network_check(&mut rng)?;
    let (assembled, tau_rel_error) = assembled_check(&mut rng, seed)?;
    let passed = network.max_rel_error <= GRADIENT_TOLERANCE
        && assembled.max_rel_error <= GRADIENT_TOLERANCE
        && tau_rel_error <= GRADIENT_TOLERANCE;
    Ok(GradientSuiteReport {
        network,
        assembled,
        tau_rel_error,
        passed,
    })
}
