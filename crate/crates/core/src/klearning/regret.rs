//! Regret decomposition: `regret <= Dist + Optimism` under an optimism
//! certificate, with every term computed exactly for finite mixtures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_tau, k_backup_pi, k_backup_star, minimize_log_scalar, saddle::solve_tau, BeliefMdp,
    FiniteMixturePosterior, KlError,
};
use crate::mdp::{build_deep_sea, sample_episode, DeepSeaSpec, Policy};
use crate::uncertainty::CountUncertainty;

/// `sum_l tau E_pi KL(pi_l(s,.) || pi*_{l,tau}(s,.))` with the state
/// occupancy of `pi` under the mean transitions.
pub fn dist(belief: &BeliefMdp, policy: &Policy, tau: f64) -> Result<f64, KlError> {
    check_tau(tau)?;
    let mdp = belief.mean();
    policy.check_shape(mdp)?;
    let star = k_backup_star(belief, tau)?;
    let occ = mdp.occupancy(policy);
    let mut total = 0.0;
    for (l, layer) in occ.iter().enumerate() {
        for (s, &d) in layer.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let j = star.j[l][s];
            let kl: f64 = policy
                .row(l, s)
                .iter()
                .zip(star.k_row(l, s))
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, k)| p * (p.ln() - (k - j) / tau))
                .sum();
            total += d * kl;
        }
    }
    Ok(tau * total)
}

/// `E_rho (J^pi_{1,tau} - E_phi V^pi_1)`.
pub fn optimism(posterior: &FiniteMixturePosterior, policy: &Policy, tau: f64) -> Result<f64, KlError> {
    let belief = posterior.mean_field();
    let j = k_backup_pi(&belief, policy, tau)?.start_value(belief.mean().initial_dist());
    Ok(j - posterior.expected_value_pi(policy))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretDecomposition {
    pub dist: f64,
    pub optimism: f64,
    pub regret: f64,
    pub bound_holds: bool,
}

pub const BOUND_SLACK: f64 = 1e-9;

pub fn regret_decomposition(
    posterior: &FiniteMixturePosterior,
    policy: &Policy,
    tau: f64,
) -> Result<RegretDecomposition, KlError> {
    let belief = posterior.mean_field();
    let dist = dist(&belief, policy, tau)?;
    let optimism = optimism(posterior, policy, tau)?;
    let regret = posterior.expected_value_star() - posterior.expected_value_pi(policy);
    Ok(RegretDecomposition {
        dist,
        optimism,
        regret,
        bound_holds: regret <= dist + optimism + BOUND_SLACK,
    })
}

/// True iff `E_rho J*_{1,tau} >= E_rho E_phi V*_1` at every grid temperature.
pub fn certify_optimistic_belief(posterior: &FiniteMixturePosterior, tau_grid: &[f64]) -> Result<bool, KlError> {
    if tau_grid.is_empty() {
        return Err(KlError::EmptyGrid);
    }
    let belief = posterior.mean_field();
    let target = posterior.expected_value_star();
    for &tau in tau_grid {
        let j = k_backup_star(&belief, tau)?.start_value(belief.mean().initial_dist());
        if j < target - 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Log-spaced temperature grid, inclusive of both ends.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleBoundReport {
    pub tau_star: f64,
    pub regret: f64,
    /// `min_pi Dist(pi, tau*)`, attained by the Boltzmann policy.
    pub min_dist: f64,
    /// `min_tau Optimism(pi*, tau)`.
    pub min_optimism: f64,
    pub holds: bool,
}

/// Solves the saddle point over the unrestricted policy class and checks
/// `regret(pi*) <= min_pi Dist(pi, tau*) + min_tau Optimism(pi*, tau)`.
pub fn saddle_bound_check(posterior: &FiniteMixturePosterior, lo: f64, hi: f64) -> Result<SaddleBoundReport, KlError> {
    let belief = posterior.mean_field();
    let sol = solve_tau(&belief, lo, hi)?;
    let pi_star = super::optimistic_policy(&belief, sol.tau)?;
    let min_dist = dist(&belief, &pi_star, sol.tau)?;
    let ev_pi = posterior.expected_value_pi(&pi_star);
    let rho = belief.mean().initial_dist().to_vec();
    let (_, min_optimism) = minimize_log_scalar(
        |tau| {
            k_backup_pi(&belief, &pi_star, tau)
                .expect("positive tau")
                .start_value(&rho)
                - ev_pi
        },
        lo,
        hi,
    )?;
    let regret = posterior.expected_value_star() - ev_pi;
    Ok(SaddleBoundReport {
        tau_star: sol.tau,
        regret,
        min_dist,
        min_optimism,
        holds: regret <= min_dist + min_optimism + BOUND_SLACK,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimismAudit {
    /// `min_tau Optimism_t(pi_t, tau)` per episode.
    pub terms: Vec<f64>,
    pub running_sum: Vec<f64>,
    /// Slope of `log running_sum` against `log t`.
    pub exponent: f64,
}

/// Least-squares slope of `log S_t` on `log t` over 50 log-spaced episodes
/// in `[T/100, T]` (1-based `t`), skipping nonpositive sums.
pub fn growth_exponent(running_sum: &[f64]) -> f64 {
    let n = running_sum.len();
    if n < 2 {
        return 0.0;
    }
    let start = (n / 100).max(1) as f64;
    let end = n as f64;
    let mut ts: Vec<usize> = (0..50)
        .map(|i| (start * (end / start).powf(i as f64 / 49.0)).round() as usize)
        .collect();
    ts.dedup();
    let pts: Vec<(f64, f64)> = ts
        .into_iter()
        .filter(|&t| t >= 1 && running_sum[t - 1] > 0.0)
        .map(|t| ((t as f64).ln(), running_sum[t - 1].ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Per-episode `min_tau Optimism(pi_t, tau)` over `[lo, hi]` and its running sum.
pub fn cumulative_optimism_audit<I>(log: I, lo: f64, hi: f64) -> Result<OptimismAudit, KlError>
where
    I: IntoIterator<Item = (FiniteMixturePosterior, Policy)>,
{
    let mut terms = Vec::new();
    let mut running_sum = Vec::new();
    let mut acc = 0.0;
    for (posterior, policy) in log {
        let (_, term) = minimize_log_scalar(
            |tau| optimism(&posterior, &policy, tau).expect("positive tau"),
            lo,
            hi,
        )?;
        acc += term;
        terms.push(term);
        running_sum.push(acc);
    }
    let exponent = growth_exponent(&running_sum);
    Ok(OptimismAudit {
        terms,
        running_sum,
        exponent,
    })
}

/// Optimism audit of a uniform policy on DeepSea whose posterior is the true
/// MDP with count-based uncertainty `sigma^2 / (n + 1)`.
pub fn deep_sea_count_audit(depth: usize, episodes: usize, sigma: f64, seed: u64) -> Result<OptimismAudit, KlError> {
    let ds = build_deep_sea(&DeepSeaSpec::new(depth).with_flip_seed(seed));
    let mdp = ds.mdp().clone();
    let policy = Policy::uniform(&mdp);
    let mut counts = CountUncertainty::new(&mdp, sigma, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let log = (0..episodes).map(move |_| {
        let posterior = FiniteMixturePosterior::point(mdp.clone(), counts.sigma2_table())
            .expect("count uncertainty is valid");
        let traj = sample_episode(&mdp, &policy, &mut rng);
        for st in &traj.steps {
            counts.observe(st.layer, st.state, st.action);
        }
        (posterior, policy.clone())
    });
    cumulative_optimism_audit(log, super::TAU_SEARCH_MIN, super::TAU_SEARCH_MAX)
}
