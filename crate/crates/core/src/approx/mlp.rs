//! Dense multilayer perceptron with a hand-written backward pass.
//!
//! Parameters live in one flat vector; layer `i` stores its weight matrix
//! (`out x in`, row-major) followed by its bias. The forward pass skips zero
//! inputs in the first layer, which makes one-hot observations cheap.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerInit {
    Zeros,
    Normal(f64),
    /// Rows (or columns, whichever are fewer) orthonormal, scaled by the gain.
    Orthogonal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    hidden: Activation,
    activate_output: bool,
}

/// Activations recorded by [`Mlp::forward`]: `acts[0]` is the input and
/// `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
    nonzero_inputs: Vec<usize>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    // Orthonormalize along the smaller dimension with modified Gram-Schmidt.
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while vecs.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for u in &vecs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            vecs.push(v);
        }
    }
    let mut w = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            w[r * cols + c] = gain * if rows <= cols { vecs[r][c] } else { vecs[c][r] };
        }
    }
    w
}

impl Mlp {
    /// `inits[i]` initializes the weights of layer `i`; biases start at zero.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        activate_output: bool,
        inits: &[LayerInit],
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        assert_eq!(inits.len(), sizes.len() - 1, "one init per layer");
        let mut params = Vec::new();
        for (i, init) in inits.iter().enumerate() {
            let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
            match *init {
                LayerInit::Zeros => params.extend(std::iter::repeat_n(0.0, fan_in * fan_out)),
                LayerInit::Normal(std) => {
                    params.extend((0..fan_in * fan_out).map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        std * z
                    }))
                }
                LayerInit::Orthogonal(gain) => params.extend(orthogonal(fan_out, fan_in, gain, rng)),
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
            hidden,
            activate_output,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<f64> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self, i: usize) -> (usize, usize) {
        let mut off = 0;
        for j in 0..i {
            off += self.sizes[j] * self.sizes[j + 1] + self.sizes[j + 1];
        }
        (off, off + self.sizes[i] * self.sizes[i + 1])
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 2 < self.sizes.len() || self.activate_output {
            self.hidden
        } else {
            Activation::Identity
        }
    }

    /// Runs the network, recording activations into `cache`.
    pub fn forward(&self, x: &[f64], cache: &mut MlpCache) {
        assert_eq!(x.len(), self.sizes[0], "input dimension");
        let n_layers = self.sizes.len() - 1;
        cache.acts.resize_with(n_layers + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        cache.nonzero_inputs.clear();
        cache.nonzero_inputs.extend((0..x.len()).filter(|&i| x[i] != 0.0));
        for i in 0..n_layers {
            let (w_off, b_off) = self.layer_offsets(i);
            let (fan_in, fan_out) = (self.sizes[i], self.sizes[i + 1]);
            let act = self.activation(i);
            let (before, after) = cache.acts.split_at_mut(i + 1);
            let input = &before[i];
            let out = &mut after[0];
            out.clear();
            out.extend_from_slice(&self.params[b_off..b_off + fan_out]);
            let w = &self.params[w_off..b_off];
            if i == 0 {
                for (o, y) in out.iter_mut().enumerate() {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    for &j in &cache.nonzero_inputs {
                        *y += row[j] * input[j];
                    }
                }
            } else {
                for (o, y) in out.iter_mut().enumerate() {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    *y += row.iter().zip(input.iter()).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            if act != Activation::Identity {
                out.iter_mut().for_each(|y| *y = act.apply(*y));
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = MlpCache::default();
        self.forward(x, &mut cache);
        cache.output().to_vec()
    }

    /// Accumulates `d(adjoint . output)/d params` into `grad`; returns the
    /// input adjoint when `want_input` is set.
    pub fn backward(&self, cache: &MlpCache, adjoint: &[f64], grad: &mut [f64], want_input: bool) -> Option<Vec<f64>> {
        assert_eq!(adjoint.len(), self.output_dim(), "adjoint dimension");
        assert_eq!(grad.len(), self.params.len(), "gradient buffer");
        let n_layers = self.sizes.len() - 1;
        let mut delta: Vec<f64> = adjoint.to_vec();
        for i in (0..n_layers).rev() {
            let (w_off, b_off) = self.layer_offsets(i);
            let (fan_in, fan_out) = (self.sizes[i], self.sizes[i + 1]);
            let act = self.activation(i);
            if act != Activation::Identity {
                for (d, y) in delta.iter_mut().zip(&cache.acts[i + 1]) {
                    *d *= act.grad_from_output(*y);
                }
            }
            let input = &cache.acts[i];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[b_off + o] += d;
                let g_row = &mut grad[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                if i == 0 {
                    for &j in &cache.nonzero_inputs {
                        g_row[j] += d * input[j];
                    }
                } else {
                    g_row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
                }
            }
            if i > 0 || want_input {
                let w = &self.params[w_off..b_off];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                }
                delta = prev;
            }
        }
        want_input.then_some(delta)
    }
}
