//! Small dense networks with hand-written backpropagation, and Adam.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Fully connected network, tanh on hidden layers, linear output. Parameters
/// are stored flat: for each layer the `out x in` weight matrix (row-major)
/// followed by its `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations from a forward pass, `acts[0]` being the input.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform Glorot initialization, output layer scaled by `output_gain`,
    /// zero biases.
    pub fn new(sizes: &[usize], output_gain: f64, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        let mut params = Vec::with_capacity(param_count(sizes));
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let gain = if l + 1 == layers { output_gain } else { 1.0 };
            let bound = gain * (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp { sizes: sizes.to_vec(), params }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == param_count(sizes)).then(|| Mlp { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache);
        cache.acts.pop().unwrap_or_default()
    }

    pub fn forward_cached(&self, input: &[f64], cache: &mut ForwardCache) {
        debug_assert_eq!(input.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        cache.acts.resize_with(layers + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let (prev, next) = cache.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut next[0];
            y.clear();
            for (row, b) in weights.chunks_exact(n_in.max(1)).take(n_out).zip(bias) {
                let z = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                y.push(if l + 1 < layers { z.tanh() } else { z });
            }
            if n_in == 0 {
                y.clear();
                y.extend_from_slice(bias);
            }
        }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`
    /// for the pass recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut o = 0;
        for l in 0..layers {
            offsets.push(o);
            o += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_output.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &cache.acts[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (k, d) in delta.iter().enumerate() {
                    gb[k] += d;
                    if *d != 0.0 {
                        for (g, v) in gw[k * n_in..(k + 1) * n_in].iter_mut().zip(x) {
                            *g += d * v;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for (k, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (p, w) in prev.iter_mut().zip(&weights[k * n_in..(k + 1) * n_in]) {
                        *p += d * w;
                    }
                }
            }
            for (p, a) in prev.iter_mut().zip(x) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Returns the parameter increment for gradient `grad` at rate `lr`.
    pub fn step(&mut self, grad: &[f64], lr: f64) -> Vec<f64> {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                -lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps)
            })
            .collect()
    }
}

/// Running per-dimension mean and variance (parallel-merge form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

/// Normalized observations are clipped to this magnitude.
pub const NORM_CLIP: f64 = 10.0;

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm { mean: vec![0.0; dim], var: vec![1.0; dim], count: 1e-4 }
    }

    pub fn update(&mut self, batch: &[Vec<f64>]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let dim = self.mean.len();
        let mut bm = vec![0.0; dim];
        for row in batch {
            for (m, x) in bm.iter_mut().zip(row) {
                *m += x / n;
            }
        }
        let mut bv = vec![0.0; dim];
        for row in batch {
            for ((v, x), m) in bv.iter_mut().zip(row).zip(&bm) {
                *v += (x - m).powi(2) / n;
            }
        }
        let total = self.count + n;
        for d in 0..dim {
            let delta = bm[d] - self.mean[d];
            let m2 = self.var[d] * self.count + bv[d] * n + delta * delta * self.count * n / total;
            self.mean[d] += delta * n / total;
            self.var[d] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((x, m), v)| ((x - m) / (v + 1e-8).sqrt()).clamp(-NORM_CLIP, NORM_CLIP))
            .collect()
    }
}
