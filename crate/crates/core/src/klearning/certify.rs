//! Randomized certification suite: the Dist identity, the per-episode regret
//! bound, the saddle-point regret bound and strong duality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::random::{random_belief, random_layerwise_mixture, random_mixture, random_policy};
use super::regret::{certify_optimistic_belief, dist, log_grid, regret_decomposition, saddle_bound_check};
use super::saddle::strong_duality_check;
use super::{k_backup_pi, k_backup_star, FiniteMixturePosterior, KlError, TAU_SEARCH_MAX, TAU_SEARCH_MIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertConfig {
    pub seed: u64,
    /// Instances for the identity and for each bound.
    pub instances: usize,
    pub duality_instances: usize,
    pub duality_restarts: usize,
    pub identity_tol: f64,
    pub duality_tol: f64,
    /// Give up on the bound checks after this many uncertified draws.
    pub max_draws: usize,
}

impl Default for CertConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 200,
            duality_instances: 6,
            duality_restarts: 3,
            identity_tol: 1e-9,
            duality_tol: 1e-6,
            max_draws: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub identity_instances: usize,
    pub identity_max_error: f64,
    /// Certified posteriors on which the bounds were evaluated.
    pub certified: usize,
    pub draws: usize,
    pub per_episode_bound_failures: usize,
    pub saddle_bound_failures: usize,
    pub duality_instances: usize,
    pub duality_max_gap: f64,
    pub identity_ok: bool,
    pub bounds_ok: bool,
    pub duality_ok: bool,
}

impl CertReport {
    pub fn passed(&self) -> bool {
        self.identity_ok && self.bounds_ok && self.duality_ok
    }
}

fn random_shape(rng: &mut ChaCha8Rng) -> (Vec<usize>, usize) {
    let layers = rng.random_range(1..=4);
    let mut shape: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=3)).collect();
    shape[0] = rng.random_range(1..=2);
    (shape, rng.random_range(2..=3))
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn random_posterior(rng: &mut ChaCha8Rng) -> FiniteMixturePosterior {
    let (shape, a_n) = random_shape(rng);
    let sigma = rng.random_range(0.0..1.5);
    if rng.random::<bool>() {
        random_layerwise_mixture(rng, &shape, a_n, 2, sigma)
    } else {
        let members = rng.random_range(1..=3);
        random_mixture(rng, &shape, a_n, members, sigma)
    }
}

pub fn run_certification(cfg: &CertConfig) -> Result<CertReport, KlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut identity_max_error: f64 = 0.0;
    for _ in 0..cfg.instances {
        let (shape, a_n) = random_shape(&mut rng);
        let belief = random_belief(&mut rng, &shape, a_n, 1.0);
        let pi = random_policy(&mut rng, belief.mean(), 0.3);
        let tau = log_uniform(&mut rng, 0.05, 5.0);
        let rho = belief.mean().initial_dist();
        let gap = k_backup_star(&belief, tau)?.start_value(rho) - k_backup_pi(&belief, &pi, tau)?.start_value(rho);
        identity_max_error = identity_max_error.max((dist(&belief, &pi, tau)? - gap).abs());
    }

    let grid = log_grid(TAU_SEARCH_MIN, TAU_SEARCH_MAX, 64);
    let (mut certified, mut draws, mut per_episode, mut saddle) = (0, 0, 0, 0);
    while certified < cfg.instances && draws < cfg.max_draws {
        draws += 1;
        let post = random_posterior(&mut rng);
        if !certify_optimistic_belief(&post, &grid)? {
            continue;
        }
        certified += 1;
        let pi = random_policy(&mut rng, post.mean_field().mean(), 0.3);
        let tau = log_uniform(&mut rng, 0.05, 5.0);
        if !regret_decomposition(&post, &pi, tau)?.bound_holds {
            per_episode += 1;
        }
        if !saddle_bound_check(&post, TAU_SEARCH_MIN, TAU_SEARCH_MAX)?.holds {
            saddle += 1;
        }
    }

    let mut duality_max_gap: f64 = 0.0;
    for i in 0..cfg.duality_instances {
        let shape: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=2)).collect();
        let belief = random_belief(&mut rng, &shape, 2, 1.0);
        let rep = strong_duality_check(&belief, TAU_SEARCH_MIN, TAU_SEARCH_MAX, cfg.duality_restarts, cfg.seed ^ i as u64)?;
        duality_max_gap = duality_max_gap.max(rep.gap);
    }

    Ok(CertReport {
        identity_instances: cfg.instances,
        identity_max_error,
        certified,
        draws,
        per_episode_bound_failures: per_episode,
        saddle_bound_failures: saddle,
        duality_instances: cfg.duality_instances,
        duality_max_gap,
        identity_ok: identity_max_error <= cfg.identity_tol,
        bounds_ok: certified == cfg.instances && per_episode == 0 && saddle == 0,
        duality_ok: duality_max_gap <= cfg.duality_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let rep = run_certification(&CertConfig {
            instances: 20,
            duality_instances: 2,
            ..Default::default()
        })
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}
