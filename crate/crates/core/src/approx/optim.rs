//! First-order update rules. Updates always apply `params -= lr * step(grad)`;
//! callers encode ascent by negating the gradient.

use serde::{Deserialize, Serialize};

use super::ApproxError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

/// Optimizer state for a list of parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, block_sizes: &[usize]) -> Self {
        let zeros = || block_sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        let (m, v) = match config {
            OptimizerConfig::Sgd { .. } => (Vec::new(), Vec::new()),
            OptimizerConfig::Adam { .. } => (zeros(), zeros()),
        };
        Self { config, step: 0, m, v }
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Moment buffers, for checkpointing.
    pub fn state(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub fn restore_state(&mut self, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// Applies one update. Non-finite gradients leave parameters and state untouched.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>]) -> Result<(), ApproxError> {
        if params.len() != grads.len() {
            return Err(ApproxError::Shape {
                what: "gradient blocks",
                expected: params.len(),
                got: grads.len(),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(ApproxError::Shape {
                    what: "gradient block",
                    expected: p.len(),
                    got: g.len(),
                });
            }
            if let Some(j) = g.iter().position(|x| !x.is_finite()) {
                return Err(ApproxError::NonFinite {
                    block: i,
                    index: j,
                    value: g[j],
                });
            }
        }
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.iter_mut().zip(g).for_each(|(x, g)| *x -= lr * g);
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let t = self.step as f64;
                let c1 = 1.0 - beta1.powf(t);
                let c2 = 1.0 - beta2.powf(t);
                for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[b], &mut self.v[b]);
                    for i in 0..p.len() {
                        let gi = g[i];
                        if gi == 0.0 && m[i] == 0.0 && v[i] == 0.0 {
                            continue;
                        }
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
