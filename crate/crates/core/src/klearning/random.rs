//! Random tabular instances for property tests and the certification suite.

use rand::Rng;

use super::{uniform_sigma2, BeliefMdp, FiniteMixturePosterior};
use crate::mdp::{Policy, TabularMdp};

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize, sparsity: f64) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < sparsity {
                    0.0
                } else {
                    -rng.random::<f64>().max(1e-300).ln()
                }
            })
            .collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            v.iter_mut().for_each(|x| *x /= s);
            // Push rounding residue onto the largest entry.
            let resid = 1.0 - v.iter().sum::<f64>();
            let i = crate::mdp::argmax(&v);
            v[i] += resid;
            return v;
        }
    }
}

fn random_kernel<R: Rng + ?Sized>(rng: &mut R, rows: usize, next: usize) -> Vec<f64> {
    (0..rows).flat_map(|_| random_simplex(rng, next, 0.3)).collect()
}

/// MDP with rewards uniform in `[-reward_bound, reward_bound]`.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, layer_states: &[usize], num_actions: usize, reward_bound: f64) -> TabularMdp {
    let rewards = layer_states
        .iter()
        .map(|n| {
            (0..n * num_actions)
                .map(|_| rng.random_range(-reward_bound..=reward_bound))
                .collect()
        })
        .collect();
    let trans = (0..layer_states.len() - 1)
        .map(|l| random_kernel(rng, layer_states[l] * num_actions, layer_states[l + 1]))
        .collect();
    let init = random_simplex(rng, layer_states[0], 0.0);
    TabularMdp::new(layer_states.to_vec(), num_actions, trans, rewards, 0.0, init).expect("valid random MDP")
}

/// Random full-support or sparse policy.
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, mdp: &TabularMdp, sparsity: f64) -> Policy {
    let a_n = mdp.num_actions();
    let probs = mdp
        .layer_states()
        .iter()
        .map(|&n| (0..n).flat_map(|_| random_simplex(rng, a_n, sparsity)).collect())
        .collect();
    Policy::new(a_n, probs).expect("random rows are distributions")
}

pub fn random_belief<R: Rng + ?Sized>(rng: &mut R, layer_states: &[usize], num_actions: usize, sigma_max: f64) -> BeliefMdp {
    let mdp = random_mdp(rng, layer_states, num_actions, 1.0);
    let s2 = mdp
        .layer_states()
        .iter()
        .map(|n| {
            (0..n * num_actions)
                .map(|_| rng.random_range(0.0..=sigma_max).powi(2))
                .collect()
        })
        .collect();
    BeliefMdp::new(mdp, s2).expect("valid random belief")
}

/// Layerwise-independent mixture: each layer independently picks one of
/// `options` (reward table, kernel) pairs, and members are the full product.
/// Rewards lie in `[-1, 1]`; uncertainty is `sigma^2` everywhere.
pub fn random_layerwise_mixture<R: Rng + ?Sized>(
    rng: &mut R,
    layer_states: &[usize],
    num_actions: usize,
    options: usize,
    sigma: f64,
) -> FiniteMixturePosterior {
    let h = layer_states.len();
    let init = random_simplex(rng, layer_states[0], 0.0);
    let mut per_layer = Vec::with_capacity(h);
    for l in 0..h {
        let weights = random_simplex(rng, options, 0.0);
        let opts: Vec<(f64, Vec<f64>, Option<Vec<f64>>)> = weights
            .into_iter()
            .map(|w| {
                let r = (0..layer_states[l] * num_actions)
                    .map(|_| rng.random_range(-1.0..=1.0))
                    .collect();
                let t = (l + 1 < h).then(|| random_kernel(rng, layer_states[l] * num_actions, layer_states[l + 1]));
                (w, r, t)
            })
            .filter(|(w, _, _)| *w > 0.0)
            .collect();
        per_layer.push(opts);
    }
    let mut members = Vec::new();
    let mut idx = vec![0usize; h];
    loop {
        let mut w = 1.0;
        let mut rewards = Vec::with_capacity(h);
        let mut trans = Vec::with_capacity(h.saturating_sub(1));
        for l in 0..h {
            let (wl, r, t) = &per_layer[l][idx[l]];
            w *= wl;
            rewards.push(r.clone());
            if let Some(t) = t {
                trans.push(t.clone());
            }
        }
        let m = TabularMdp::new(layer_states.to_vec(), num_actions, trans, rewards, 0.0, init.clone())
            .expect("valid member");
        members.push((w, m));
        let mut l = 0;
        loop {
            if l == h {
                return finish(members, sigma);
            }
            idx[l] += 1;
            if idx[l] < per_layer[l].len() {
                break;
            }
            idx[l] = 0;
            l += 1;
        }
    }
}

/// Mixture of `members` unrelated random MDPs (no independence structure).
pub fn random_mixture<R: Rng + ?Sized>(
    rng: &mut R,
    layer_states: &[usize],
    num_actions: usize,
    members: usize,
    sigma: f64,
) -> FiniteMixturePosterior {
    let weights = random_simplex(rng, members, 0.0);
    let ms = weights
        .into_iter()
        .filter(|w| *w > 0.0)
        .map(|w| (w, random_mdp(rng, layer_states, num_actions, 1.0)))
        .collect();
    finish(ms, sigma)
}

fn finish(mut members: Vec<(f64, TabularMdp)>, sigma: f64) -> FiniteMixturePosterior {
    let total: f64 = members.iter().map(|(w, _)| w).sum();
    members.iter_mut().for_each(|(w, _)| *w /= total);
    let s2 = uniform_sigma2(&members[0].1, sigma * sigma);
    FiniteMixturePosterior::new(members, s2).expect("valid mixture")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::exact_values_pi;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layerwise_product_has_all_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_layerwise_mixture(&mut rng, &[2, 2, 3], 2, 2, 0.5);
        assert_eq!(p.members().len(), 8);
        let w: f64 = p.members().iter().map(|(w, _)| w).sum();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layerwise_mean_value_is_exact() {
        // Independence across layers makes E_phi V^pi equal V^pi of the mean MDP.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = random_layerwise_mixture(&mut rng, &[2, 3, 2], 2, 2, 0.0);
            let mean = p.mean_field();
            let pi = random_policy(&mut rng, mean.mean(), 0.2);
            let lhs = p.expected_value_pi(&pi);
            let rhs = exact_values_pi(mean.mean(), &pi).start_value(mean.mean().initial_dist());
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
