//! Return targets and the three ERSAC losses, as pure functions of per-step
//! network outputs.

use super::AgentError;
use crate::mdp::entropy;

/// How a segment ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentEnd {
    /// The episode terminated after the last step; bootstrap is zero.
    Terminal,
    /// Cut short; carries the value estimate at the next state.
    Truncated(f64),
}

pub(crate) fn check_tau(tau: f64) -> Result<(), AgentError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(AgentError::BadTau(tau))
    }
}

/// TD(lambda) estimate of `K` for every step of a segment.
///
/// `values[t]` is `J(s_t)`, `log_probs[t]` is `log pi(a_t | s_t)` under the
/// current policy and `sigma2[t]` the uncertainty of the taken pair:
///
/// `K_t = r_t + sigma2_t / (2 tau) + gamma * ((1 - lambda) J_{t+1} + lambda (K_{t+1} - tau log pi_{t+1}))`
#[allow(clippy::too_many_arguments)]
pub fn td_lambda_k_hat(
    rewards: &[f64],
    sigma2: &[f64],
    values: &[f64],
    log_probs: &[f64],
    tau: f64,
    gamma: f64,
    lambda: f64,
    end: SegmentEnd,
) -> Result<Vec<f64>, AgentError> {
    check_tau(tau)?;
    let n = rewards.len();
    if n == 0 {
        return Err(AgentError::EmptySegment);
    }
    if sigma2.len() != n || values.len() != n || log_probs.len() != n {
        return Err(AgentError::Misaligned);
    }
    let mut k = vec![0.0; n];
    for t in (0..n).rev() {
        let b = sigma2[t] / (2.0 * tau);
        let bracket = if t + 1 == n {
            match end {
                SegmentEnd::Terminal => 0.0,
                SegmentEnd::Truncated(j_next) => j_next,
            }
        } else {
            (1.0 - lambda) * values[t + 1] + lambda * (k[t + 1] - tau * log_probs[t + 1])
        };
        k[t] = (rewards[t] + b) + gamma * bracket;
    }
    Ok(k)
}

/// Inputs of the losses at one step. `log_probs` is the full log-policy row.
#[derive(Debug, Clone, Copy)]
pub struct LossStep<'a> {
    pub log_probs: &'a [f64],
    pub action: usize,
    pub value: f64,
    pub k_hat: f64,
    pub sigma2: f64,
    /// Importance weight on the score-function term (1 on-policy).
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub policy: f64,
    pub value: f64,
    pub tau: f64,
    /// `d L_tau / d tau` with the policy held fixed.
    pub tau_grad: f64,
    pub mean_entropy: f64,
    pub mean_sigma2: f64,
}

/// Adjoints of `L_value - L_policy` on one step's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAdjoint {
    pub logits: Vec<f64>,
    pub value: f64,
}

/// Gradient with respect to the logits of `log pi(a) * advantage + tau * H(pi)`.
pub fn policy_logit_grad(log_probs: &[f64], action: usize, advantage: f64, tau: f64) -> Vec<f64> {
    let h = entropy_of_log(log_probs);
    log_probs
        .iter()
        .enumerate()
        .map(|(i, &lp)| {
            let p = lp.exp();
            let score = if i == action { 1.0 - p } else { -p };
            advantage * score - tau * p * (lp + h)
        })
        .collect()
}

fn entropy_of_log(log_probs: &[f64]) -> f64 {
    -log_probs
        .iter()
        .map(|&lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * lp })
        .sum::<f64>()
}

/// Entropy of the softmax policy given its log-probabilities.
pub fn policy_entropy(log_probs: &[f64]) -> f64 {
    let p: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
    entropy(&p)
}

/// Evaluates
///
/// * `L_policy = mean[w log pi(a) <K - J> + tau H]`
/// * `L_value = mean[(J - <K - tau log pi(a)>)^2]`
/// * `L_tau = mean[sigma2 / (2 tau) + tau H]`
///
/// with `<.>` held constant, and returns per-step adjoints of
/// `L_value - L_policy` (the quantity the optimizer descends).
pub fn losses(steps: &[LossStep<'_>], tau: f64) -> Result<(LossTerms, Vec<StepAdjoint>), AgentError> {
    check_tau(tau)?;
    if steps.is_empty() {
        return Err(AgentError::EmptySegment);
    }
    let inv_n = 1.0 / steps.len() as f64;
    let mut terms = LossTerms::default();
    let mut adjoints = Vec::with_capacity(steps.len());
    for s in steps {
        let h = entropy_of_log(s.log_probs);
        let lp_a = s.log_probs[s.action];
        let advantage = s.weight * (s.k_hat - s.value);
        let target = s.k_hat - tau * lp_a;
        terms.policy += (lp_a * advantage + tau * h) * inv_n;
        terms.value += (s.value - target).powi(2) * inv_n;
        terms.tau += (s.sigma2 / (2.0 * tau) + tau * h) * inv_n;
        terms.tau_grad += (h - s.sigma2 / (2.0 * tau * tau)) * inv_n;
        terms.mean_entropy += h * inv_n;
        terms.mean_sigma2 += s.sigma2 * inv_n;
        let logits = policy_logit_grad(s.log_probs, s.action, advantage, tau)
            .into_iter()
            .map(|g| -g * inv_n)
            .collect();
        adjoints.push(StepAdjoint {
            logits,
            value: 2.0 * (s.value - target) * inv_n,
        });
    }
    Ok((terms, adjoints))
}
