//! The temperature player: `min_tau E_rho J*_tau`, its stationarity condition
//! and a numerical strong-duality check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_tau, k_backup_star, optimistic_policy, BeliefMdp, KlError};
use crate::mdp::{entropy, exact_values_pi, Policy};

/// Lower end of the default temperature search range.
pub const TAU_SEARCH_MIN: f64 = 1e-6;
/// Upper end of the default temperature search range.
pub const TAU_SEARCH_MAX: f64 = 1e6;

const GRID_POINTS: usize = 64;
const LOG_TOL: f64 = 1e-8;

/// Minimize `f` over `[lo, hi]`: a 64-point log-spaced scan picks the
/// bracket, then golden-section search on `log x` refines it. Returns the best
/// point seen.
pub fn minimize_log_scalar<F>(mut f: F, lo: f64, hi: f64) -> Result<(f64, f64), KlError>
where
    F: FnMut(f64) -> f64,
{
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(KlError::BadBracket { lo, hi });
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let step = (lhi - llo) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| llo + step * i as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&u| f(u.exp())).collect();
    let mut best_i = 0;
    for i in 1..GRID_POINTS {
        if vals[i] < vals[best_i] {
            best_i = i;
        }
    }
    let mut best = (grid[best_i].exp(), vals[best_i]);
    if best_i == 0 {
        best.0 = lo;
    } else if best_i == GRID_POINTS - 1 {
        best.0 = hi;
    }

    let mut a = grid[best_i.saturating_sub(1)];
    let mut b = grid[(best_i + 1).min(GRID_POINTS - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c.exp());
    let mut fd = f(d.exp());
    while b - a > LOG_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d.exp());
        }
    }
    for (u, fu) in [(c, fc), (d, fd)] {
        if fu < best.1 {
            best = (u.exp().clamp(lo, hi), fu);
        }
    }
    Ok(best)
}

/// `E_{s ~ rho} J*_{1,tau}(s)`.
pub fn saddle_objective(belief: &BeliefMdp, tau: f64) -> Result<f64, KlError> {
    let t = k_backup_star(belief, tau)?;
    Ok(t.start_value(belief.mean().initial_dist()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauSolution {
    pub tau: f64,
    pub value: f64,
}

/// Tightest optimistic bound `min_tau E_rho J*_tau` over `[lo, hi]`.
pub fn solve_tau(belief: &BeliefMdp, lo: f64, hi: f64) -> Result<TauSolution, KlError> {
    let (tau, value) = minimize_log_scalar(
        |tau| saddle_objective(belief, tau).expect("tau inside a positive bracket"),
        lo,
        hi,
    )?;
    Ok(TauSolution { tau, value })
}

/// `d/dtau E_rho J^pi_tau` with `pi` held fixed:
/// `sum_l E_pi [H(pi_l(s)) - sigma2(s,a) / (2 tau^2)]`.
pub fn tau_gradient(belief: &BeliefMdp, policy: &Policy, tau: f64) -> Result<f64, KlError> {
    check_tau(tau)?;
    let terms = policy_bonus_terms(belief, policy)?;
    Ok(terms.entropy - terms.half_sigma2 / (tau * tau))
}

/// Decomposition `E_rho J^pi_tau = value + half_sigma2 / tau + entropy * tau`,
/// with every expectation taken under the occupancy of `pi` through the mean
/// transitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonusTerms {
    /// `E_rho V^pi_1` under the mean MDP.
    pub value: f64,
    /// `sum_l E_pi sigma2 / 2`.
    pub half_sigma2: f64,
    /// `sum_l E_pi H(pi_l)`.
    pub entropy: f64,
}

impl BonusTerms {
    pub fn objective(&self, tau: f64) -> f64 {
        self.value + self.half_sigma2 / tau + self.entropy * tau
    }

    /// `min_tau` over `[lo, hi]` in closed form (the objective is convex in tau).
    pub fn min_over_tau(&self, lo: f64, hi: f64) -> (f64, f64) {
        let tau = if self.entropy > 0.0 {
            (self.half_sigma2 / self.entropy).sqrt().clamp(lo, hi)
        } else if self.half_sigma2 > 0.0 {
            hi
        } else {
            lo
        };
        (tau, self.objective(tau))
    }
}

pub fn policy_bonus_terms(belief: &BeliefMdp, policy: &Policy) -> Result<BonusTerms, KlError> {
    let mdp = belief.mean();
    policy.check_shape(mdp)?;
    let occ = mdp.occupancy(policy);
    let a_n = mdp.num_actions();
    let mut half_sigma2 = 0.0;
    let mut ent = 0.0;
    for (l, layer) in occ.iter().enumerate() {
        for (s, &d) in layer.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = policy.row(l, s);
            ent += d * entropy(row);
            for a in 0..a_n {
                half_sigma2 += d * row[a] * belief.sigma2_at(l, s, a) / 2.0;
            }
        }
    }
    let value = exact_values_pi(mdp, policy).start_value(mdp.initial_dist());
    Ok(BonusTerms {
        value,
        half_sigma2,
        entropy: ent,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    /// `min_tau max_pi E_rho J^pi_tau`.
    pub min_max: f64,
    /// Best `min_tau E_rho J^pi_tau` found over policies.
    pub max_min: f64,
    pub gap: f64,
    pub tau_star: f64,
}

fn softmax_policy(logits: &[f64], shape: &[usize], a_n: usize) -> Policy {
    let mut probs = Vec::with_capacity(shape.len());
    let mut off = 0;
    for &n in shape {
        let mut t = vec![0.0; n * a_n];
        for s in 0..n {
            let row = &logits[off + s * a_n..off + (s + 1) * a_n];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            for a in 0..a_n {
                t[s * a_n + a] = (row[a] - m).exp() / z;
            }
        }
        off += n * a_n;
        probs.push(t);
    }
    Policy::new(a_n, probs).expect("softmax rows are distributions")
}

/// Compares `min_tau max_pi` (via the optimal backup) against `max_pi min_tau`
/// over the unrestricted tabular policy class. The inner minimum of the
/// max-min side uses the closed form of [`BonusTerms`]; the outer maximum
/// takes the best of the Boltzmann policy at `tau*` and finite-difference
/// gradient ascent on softmax logits from `restarts` starting points.
pub fn strong_duality_check(
    belief: &BeliefMdp,
    lo: f64,
    hi: f64,
    restarts: usize,
    seed: u64,
) -> Result<DualityReport, KlError> {
    let sol = solve_tau(belief, lo, hi)?;
    let mdp = belief.mean();
    let a_n = mdp.num_actions();
    let shape = mdp.layer_states().to_vec();
    let n_logits: usize = shape.iter().sum::<usize>() * a_n;
    let inner = |pi: &Policy| -> f64 {
        policy_bonus_terms(belief, pi)
            .expect("policy matches belief")
            .min_over_tau(lo, hi)
            .1
    };

    let pi_star = optimistic_policy(belief, sol.tau)?;
    let mut max_min = inner(&pi_star);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in 0..restarts {
        let mut x: Vec<f64> = if r == 0 {
            vec![0.0; n_logits]
        } else {
            (0..n_logits).map(|_| rng.random_range(-2.0..2.0)).collect()
        };
        let mut fx = inner(&softmax_policy(&x, &shape, a_n));
        let mut lr = 1.0;
        let h = 1e-6;
        for _ in 0..400 {
            let mut g = vec![0.0; n_logits];
            for i in 0..n_logits {
                let keep = x[i];
                x[i] = keep + h;
                let fp = inner(&softmax_policy(&x, &shape, a_n));
                x[i] = keep - h;
                let fm = inner(&softmax_policy(&x, &shape, a_n));
                x[i] = keep;
                g[i] = (fp - fm) / (2.0 * h);
            }
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm < 1e-10 {
                break;
            }
            loop {
                let cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + lr * gi).collect();
                let fc = inner(&softmax_policy(&cand, &shape, a_n));
                if fc > fx {
                    x = cand;
                    fx = fc;
                    lr *= 1.5;
                    break;
                }
                lr *= 0.5;
                if lr < 1e-12 {
                    break;
                }
            }
            if lr < 1e-12 {
                break;
            }
        }
        max_min = max_min.max(fx);
    }
    Ok(DualityReport {
        min_max: sol.value,
        max_min,
        gap: (sol.value - max_min).abs(),
        tau_star: sol.tau,
    })
}
