//! Exact tabular K-learning.
//!
//! Risk-seeking values for a posterior summarized by mean rewards, mean
//! transitions and a per-state-action uncertainty `sigma2`:
//!
//! ```text
//! r_tau(s,a)  = rbar(s,a) + sigma2(s,a) / (2 tau)
//! K(s,a)      = r_tau(s,a) + sum_s' Pbar(s'|s,a) J_next(s')
//! J_pi(s)     = sum_a pi(a|s) K(s,a) + tau H(pi(.|s))
//! J_star(s)   = tau logsumexp_a K(s,a) / tau
//! ```
//!
//! On top of the backups this module provides the saddle-point machinery over
//! the temperature (`saddle`), the regret decomposition with its numerical
//! certificates (`regret`), random instance generators (`random`) and the
//! posterior file format (`text`).

pub mod certify;
pub mod random;
pub mod regret;
pub mod saddle;
pub mod text;

pub use certify::{run_certification, CertConfig, CertReport};
pub use regret::{
    certify_optimistic_belief, cumulative_optimism_audit, deep_sea_count_audit, dist, optimism,
    regret_decomposition, saddle_bound_check, OptimismAudit, RegretDecomposition, SaddleBoundReport,
};
pub use saddle::{
    minimize_log_scalar, policy_bonus_terms, saddle_objective, solve_tau, strong_duality_check,
    tau_gradient, DualityReport, TauSolution, TAU_SEARCH_MAX, TAU_SEARCH_MIN,
};

use thiserror::Error;

use crate::mdp::{entropy, exact_values_pi, exact_values_star, MdpError, Policy, TabularMdp};

#[derive(Debug, Error, PartialEq)]
pub enum KlError {
    #[error("temperature must be positive and finite, got {0}")]
    BadTau(f64),
    #[error("invalid bracket [{lo}, {hi}]")]
    BadBracket { lo: f64, hi: f64 },
    #[error("uncertainty table shape mismatch at layer {layer}")]
    SigmaShape { layer: usize },
    #[error("uncertainty must be nonnegative and finite (layer {layer})")]
    BadSigma { layer: usize },
    #[error("K table is not optimal: Boltzmann row (layer {layer}, state {state}) sums to {sum}")]
    NotOptimal { layer: usize, state: usize, sum: f64 },
    #[error("mixture is empty")]
    EmptyMixture,
    #[error("mixture weights must be positive and sum to 1 (sum={0})")]
    BadWeights(f64),
    #[error("mixture members disagree on shape")]
    MixedShapes,
    #[error("no samples")]
    NoSamples,
    #[error("empty temperature grid")]
    EmptyGrid,
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

fn check_tau(tau: f64) -> Result<(), KlError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(KlError::BadTau(tau))
    }
}

/// Numerically stable `log sum exp`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Distribution handed to [`certainty_equivalent`].
#[derive(Debug, Clone, Copy)]
pub enum ValueDistribution<'a> {
    Normal { mean: f64, var: f64 },
    Samples(&'a [f64]),
}

/// `tau log E exp(X / tau)`.
pub fn certainty_equivalent(x: ValueDistribution<'_>, tau: f64) -> Result<f64, KlError> {
    check_tau(tau)?;
    match x {
        ValueDistribution::Normal { mean, var } => Ok(mean + var / (2.0 * tau)),
        ValueDistribution::Samples(xs) => {
            if xs.is_empty() {
                return Err(KlError::NoSamples);
            }
            let scaled: Vec<f64> = xs.iter().map(|x| x / tau).collect();
            Ok(tau * (logsumexp(&scaled) - (xs.len() as f64).ln()))
        }
    }
}

/// Posterior summary: the mean MDP plus `sigma2[l][s * A + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefMdp {
    mean: TabularMdp,
    sigma2: Vec<Vec<f64>>,
}

impl BeliefMdp {
    pub fn new(mean: TabularMdp, sigma2: Vec<Vec<f64>>) -> Result<Self, KlError> {
        check_sigma(&mean, &sigma2)?;
        Ok(Self { mean, sigma2 })
    }

    /// Same uncertainty `sigma^2` at every state-action.
    pub fn with_uniform_sigma(mean: TabularMdp, sigma: f64) -> Result<Self, KlError> {
        let s2 = uniform_sigma2(&mean, sigma * sigma);
        Self::new(mean, s2)
    }

    pub fn mean(&self) -> &TabularMdp {
        &self.mean
    }

    pub fn sigma2(&self) -> &[Vec<f64>] {
        &self.sigma2
    }

    pub fn sigma2_at(&self, layer: usize, state: usize, action: usize) -> f64 {
        self.sigma2[layer][state * self.mean.num_actions() + action]
    }
}

pub(crate) fn uniform_sigma2(mdp: &TabularMdp, value: f64) -> Vec<Vec<f64>> {
    mdp.layer_states()
        .iter()
        .map(|n| vec![value; n * mdp.num_actions()])
        .collect()
}

fn check_sigma(mdp: &TabularMdp, sigma2: &[Vec<f64>]) -> Result<(), KlError> {
    if sigma2.len() != mdp.horizon() {
        return Err(KlError::SigmaShape {
            layer: sigma2.len().min(mdp.horizon()),
        });
    }
    for (layer, (t, n)) in sigma2.iter().zip(mdp.layer_states()).enumerate() {
        if t.len() != n * mdp.num_actions() {
            return Err(KlError::SigmaShape { layer });
        }
        if t.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(KlError::BadSigma { layer });
        }
    }
    Ok(())
}

/// Finite mixture of MDPs sharing one state-action shape, with the
/// uncertainty table used for the risk-seeking reward.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMixturePosterior {
    members: Vec<(f64, TabularMdp)>,
    sigma2: Vec<Vec<f64>>,
}

impl FiniteMixturePosterior {
    pub fn new(members: Vec<(f64, TabularMdp)>, sigma2: Vec<Vec<f64>>) -> Result<Self, KlError> {
        let first = &members.first().ok_or(KlError::EmptyMixture)?.1;
        if members.iter().any(|(_, m)| !m.same_shape(first)) {
            return Err(KlError::MixedShapes);
        }
        let total: f64 = members.iter().map(|(w, _)| w).sum();
        if members.iter().any(|(w, _)| !(*w > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(KlError::BadWeights(total));
        }
        check_sigma(first, &sigma2)?;
        Ok(Self { members, sigma2 })
    }

    /// A posterior that is certain about `mdp`.
    pub fn point(mdp: TabularMdp, sigma2: Vec<Vec<f64>>) -> Result<Self, KlError> {
        Self::new(vec![(1.0, mdp)], sigma2)
    }

    pub fn members(&self) -> &[(f64, TabularMdp)] {
        &self.members
    }

    pub fn sigma2(&self) -> &[Vec<f64>] {
        &self.sigma2
    }

    /// Replace the uncertainty table.
    pub fn with_sigma2(&self, sigma2: Vec<Vec<f64>>) -> Result<Self, KlError> {
        Self::new(self.members.clone(), sigma2)
    }

    fn shape(&self) -> &TabularMdp {
        &self.members[0].1
    }

    /// Posterior-mean rewards, transitions and initial distribution.
    pub fn mean_field(&self) -> BeliefMdp {
        let shape = self.shape();
        let zero_like = |tables: &[Vec<f64>]| -> Vec<Vec<f64>> {
            tables.iter().map(|t| vec![0.0; t.len()]).collect()
        };
        let mut rewards = zero_like(shape.mean_rewards());
        let mut trans = zero_like(shape.transitions());
        let mut init = vec![0.0; shape.initial_dist().len()];
        for (w, m) in &self.members {
            accumulate(&mut rewards, m.mean_rewards(), *w);
            accumulate(&mut trans, m.transitions(), *w);
            for (acc, p) in init.iter_mut().zip(m.initial_dist()) {
                *acc += w * p;
            }
        }
        // Renormalize rows so that rounding in the weighted average never
        // trips the 1e-12 distribution check.
        for (l, t) in trans.iter_mut().enumerate() {
            let next = shape.num_states(l + 1);
            for row in t.chunks_mut(next) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= s);
            }
        }
        let s: f64 = init.iter().sum();
        init.iter_mut().for_each(|p| *p /= s);
        let mean = TabularMdp::new(
            shape.layer_states().to_vec(),
            shape.num_actions(),
            trans,
            rewards,
            0.0,
            init,
        )
        .expect("convex combination of valid MDPs is valid");
        BeliefMdp {
            mean,
            sigma2: self.sigma2.clone(),
        }
    }

    /// `E_phi E_{s ~ rho} V^pi_1(s)`.
    pub fn expected_value_pi(&self, policy: &Policy) -> f64 {
        self.members
            .iter()
            .map(|(w, m)| w * exact_values_pi(m, policy).start_value(m.initial_dist()))
            .sum()
    }

    /// `E_phi E_{s ~ rho} V*_1(s)`, each member with its own optimum.
    pub fn expected_value_star(&self) -> f64 {
        self.members
            .iter()
            .map(|(w, m)| w * exact_values_star(m).0.start_value(m.initial_dist()))
            .sum()
    }
}

fn accumulate(acc: &mut [Vec<f64>], tables: &[Vec<f64>], w: f64) {
    for (a, t) in acc.iter_mut().zip(tables) {
        for (x, y) in a.iter_mut().zip(t) {
            *x += w * y;
        }
    }
}

/// Per-layer `K(s,a)` and `J(s)` for one temperature. `J` past the last layer
/// is zero and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct KTable {
    pub tau: f64,
    pub num_actions: usize,
    pub k: Vec<Vec<f64>>,
    pub j: Vec<Vec<f64>>,
}

impl KTable {
    pub fn start_value(&self, initial_dist: &[f64]) -> f64 {
        initial_dist.iter().zip(&self.j[0]).map(|(p, j)| p * j).sum()
    }

    pub fn k_row(&self, layer: usize, state: usize) -> &[f64] {
        let a = self.num_actions;
        &self.k[layer][state * a..(state + 1) * a]
    }
}

/// `rbar + sigma2 / (2 tau)`.
pub fn risk_seeking_reward(belief: &BeliefMdp, tau: f64) -> Result<Vec<Vec<f64>>, KlError> {
    check_tau(tau)?;
    Ok(belief
        .mean
        .mean_rewards()
        .iter()
        .zip(&belief.sigma2)
        .map(|(r, s2)| r.iter().zip(s2).map(|(r, s)| r + s / (2.0 * tau)).collect())
        .collect())
}

fn backup<F>(belief: &BeliefMdp, tau: f64, mut state_value: F) -> Result<KTable, KlError>
where
    F: FnMut(usize, usize, &[f64]) -> f64,
{
    let r_tau = risk_seeking_reward(belief, tau)?;
    let mdp = &belief.mean;
    let a_n = mdp.num_actions();
    let h = mdp.horizon();
    let mut k = vec![Vec::new(); h];
    let mut j = vec![Vec::new(); h];
    for l in (0..h).rev() {
        let n = mdp.num_states(l);
        let mut kl = vec![0.0; n * a_n];
        let mut jl = vec![0.0; n];
        for s in 0..n {
            for a in 0..a_n {
                let next = if l + 1 < h {
                    mdp.expected_next(l, s, a, &j[l + 1])
                } else {
                    0.0
                };
                kl[s * a_n + a] = r_tau[l][s * a_n + a] + next;
            }
            jl[s] = state_value(l, s, &kl[s * a_n..(s + 1) * a_n]);
        }
        k[l] = kl;
        j[l] = jl;
    }
    Ok(KTable {
        tau,
        num_actions: a_n,
        k,
        j,
    })
}

/// Risk-seeking values of a fixed policy.
pub fn k_backup_pi(belief: &BeliefMdp, policy: &Policy, tau: f64) -> Result<KTable, KlError> {
    check_tau(tau)?;
    policy.check_shape(&belief.mean)?;
    backup(belief, tau, |l, s, k_row| {
        let row = policy.row(l, s);
        row.iter().zip(k_row).map(|(p, k)| p * k).sum::<f64>() + tau * entropy(row)
    })
}

/// Optimal risk-seeking values.
pub fn k_backup_star(belief: &BeliefMdp, tau: f64) -> Result<KTable, KlError> {
    check_tau(tau)?;
    let mut scaled = Vec::new();
    backup(belief, tau, |_, _, k_row| {
        scaled.clear();
        scaled.extend(k_row.iter().map(|k| k / tau));
        tau * logsumexp(&scaled)
    })
}

/// `pi(a|s) = exp((K(s,a) - J(s)) / tau)` for an optimal table.
pub fn boltzmann_policy(table: &KTable) -> Result<Policy, KlError> {
    let a_n = table.num_actions;
    let tau = table.tau;
    let mut probs = Vec::with_capacity(table.k.len());
    for (layer, (kl, jl)) in table.k.iter().zip(&table.j).enumerate() {
        let mut pl = vec![0.0; kl.len()];
        for (state, j) in jl.iter().enumerate() {
            let row = &mut pl[state * a_n..(state + 1) * a_n];
            for (p, k) in row.iter_mut().zip(&kl[state * a_n..(state + 1) * a_n]) {
                *p = ((k - j) / tau).exp();
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= 1e-10) {
                return Err(KlError::NotOptimal { layer, state, sum });
            }
        }
        probs.push(pl);
    }
    Ok(Policy::new(a_n, probs)?)
}

/// Boltzmann policy of the optimal table at `tau`.
pub fn optimistic_policy(belief: &BeliefMdp, tau: f64) -> Result<Policy, KlError> {
    boltzmann_policy(&k_backup_star(belief, tau)?)
}
