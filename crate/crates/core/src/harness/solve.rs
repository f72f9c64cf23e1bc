//! Solve detection and log-log scaling fits.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveRule {
    pub window: usize,
    pub threshold: f64,
}

impl SolveRule {
    /// Window 100 and threshold `0.9 * optimal_return`.
    pub fn for_optimal(optimal_return: f64) -> Self {
        Self {
            window: 100,
            threshold: 0.9 * optimal_return,
        }
    }
}

/// Streaming form of [`detect_solved`].
#[derive(Debug, Clone)]
pub struct SolveDetector {
    rule: SolveRule,
    recent: VecDeque<f64>,
    seen: usize,
}

impl SolveDetector {
    pub fn new(rule: SolveRule) -> Self {
        assert!(rule.window >= 1, "window must be at least 1");
        Self {
            rule,
            recent: VecDeque::with_capacity(rule.window),
            seen: 0,
        }
    }

    /// Feeds one return; yields the 1-based episode index when the trailing
    /// window mean first reaches the threshold.
    pub fn push(&mut self, ret: f64) -> Option<usize> {
        self.seen += 1;
        if self.recent.len() == self.rule.window {
            self.recent.pop_front();
        }
        self.recent.push_back(ret);
        if self.recent.len() < self.rule.window {
            return None;
        }
        let mean = self.recent.iter().sum::<f64>() / self.rule.window as f64;
        (mean >= self.rule.threshold).then_some(self.seen)
    }
}

/// First 1-based episode `t >= window` whose trailing `window` returns have
/// mean at least `threshold`.
pub fn detect_solved(returns: &[f64], window: usize, threshold: f64) -> Option<usize> {
    let mut d = SolveDetector::new(SolveRule { window, threshold });
    returns.iter().find_map(|&r| d.push(r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub r_squared: f64,
    pub points: usize,
    /// Depths left out because they were never solved.
    pub excluded: Vec<f64>,
}

/// Least-squares fit of `log(solve episodes)` on `log(depth)`. Unsolved
/// depths (`None`) are excluded and reported.
pub fn fit_scaling(pairs: &[(f64, Option<f64>)]) -> Result<ScalingFit, HarnessError> {
    let excluded: Vec<f64> = pairs.iter().filter(|p| p.1.is_none()).map(|p| p.0).collect();
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter_map(|&(d, t)| t.map(|t| (d.ln(), t.ln())))
        .collect();
    if pts.len() < 3 {
        return Err(HarnessError::TooFewPoints(pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::TooFewPoints(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(ScalingFit {
        slope,
        intercept,
        residual: (ss_res / n).sqrt(),
        r_squared: if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 },
        points: pts.len(),
        excluded,
    })
}
