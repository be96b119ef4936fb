use rand::{Rng, RngCore};

use crate::error::{check_dim, Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Weights, biases and (for policies) a state-independent Gaussian log-std.
///
/// Layer `l` maps `sizes[l]` inputs to `sizes[l + 1]` outputs with a
/// row-major `sizes[l + 1] x sizes[l]` weight matrix. Hidden layers use
/// tanh, the output layer is linear. The same type doubles as a gradient
/// container.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub log_std: Vec<f64>,
}

/// Activations recorded by a forward pass: `acts[0]` is the input,
/// `acts[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has at least the input")
    }
}

impl MlpParams {
    /// All-zero network. `log_std_dim` is the action dimension for a policy
    /// and zero for a critic.
    pub fn zeros(sizes: &[usize], log_std_dim: usize) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes.len() - 1;
        Self {
            sizes: sizes.to_vec(),
            weights: (0..layers).map(|l| vec![0.0; sizes[l] * sizes[l + 1]]).collect(),
            biases: (0..layers).map(|l| vec![0.0; sizes[l + 1]]).collect(),
            log_std: vec![0.0; log_std_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes, self.log_std.len())
    }

    /// Scaled-uniform stand-in for orthogonal init: entries have variance
    /// `gain^2 / fan_in`. Hidden layers use gain 1, the output layer
    /// `output_gain`. Biases start at zero.
    pub fn init(sizes: &[usize], log_std_dim: usize, output_gain: f64, rng: &mut dyn RngCore) -> Self {
        let mut p = Self::zeros(sizes, log_std_dim);
        let layers = p.num_layers();
        for l in 0..layers {
            let gain = if l + 1 == layers { output_gain } else { 1.0 };
            let limit = gain * (3.0 / sizes[l] as f64).sqrt();
            for w in p.weights[l].iter_mut() {
                *w = limit * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        p
    }

    pub fn init_policy(obs_dim: usize, hidden: &[usize], act_dim: usize, rng: &mut dyn RngCore) -> Self {
        let sizes = layer_sizes(obs_dim, hidden, act_dim);
        Self::init(&sizes, act_dim, 0.01, rng)
    }

    pub fn init_critic(obs_dim: usize, hidden: &[usize], rng: &mut dyn RngCore) -> Self {
        let sizes = layer_sizes(obs_dim, hidden, 1);
        Self::init(&sizes, 0, 1.0, rng)
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn is_policy(&self) -> bool {
        !self.log_std.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
            + self.log_std.len()
    }

    /// Parameter blocks in canonical order: W0, b0, W1, b1, ..., log_std.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.num_layers() + 1);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w);
            out.push(b);
        }
        out.push(&self.log_std);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.weights.len() + 1);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.log_std);
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for b in self.blocks() {
            flat.extend_from_slice(b);
        }
        flat
    }

    /// Overwrites every parameter from `flat` (same order as [`flatten`](Self::flatten)).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("flat parameter vector", flat.len(), self.num_params())?;
        let mut offset = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn unflatten_like(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.zeros_like();
        out.assign_flat(flat)?;
        Ok(out)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.log_std.len() == other.log_std.len()
    }

    pub fn fill_zero(&mut self) {
        for b in self.blocks_mut() {
            b.fill(0.0);
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        assert!(self.same_shape(other), "parameter shape mismatch");
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for b in self.blocks_mut() {
            for x in b.iter_mut() {
                *x *= alpha;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn clamp_log_std(&mut self) {
        for s in self.log_std.iter_mut() {
            *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// Order-sensitive hash of the exact parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.blocks() {
            for x in b {
                h ^= x.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {:?}", self.sizes)));
        }
        for l in 0..self.num_layers() {
            check_dim("weights", self.weights[l].len(), self.sizes[l] * self.sizes[l + 1])?;
            check_dim("biases", self.biases[l].len(), self.sizes[l + 1])?;
        }
        if !self.log_std.is_empty() {
            check_dim("log_std", self.log_std.len(), self.output_dim())?;
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Trace> {
        check_dim("network input", input.len(), self.input_dim())?;
        let layers = self.num_layers();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input.to_vec());
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let x = &acts[l];
            let w = &self.weights[l];
            let mut y = self.biases[l].clone();
            for (i, yi) in y.iter_mut().enumerate() {
                let row = &w[i * n_in..(i + 1) * n_in];
                *yi += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < layers {
                for v in y.iter_mut() {
                    *v = v.tanh();
                }
            }
            debug_assert_eq!(y.len(), n_out);
            acts.push(y);
        }
        Ok(Trace { acts })
    }

    /// Reverse pass for `upstream = dL/d(output)`: accumulates weight and
    /// bias gradients into `grad` and returns `dL/d(input)`. `log_std` in
    /// `grad` is left untouched.
    pub fn backward_into(&self, trace: &Trace, upstream: &[f64], grad: &mut MlpParams) -> Vec<f64> {
        let layers = self.num_layers();
        debug_assert_eq!(upstream.len(), self.output_dim());
        let mut delta = upstream.to_vec();
        for l in (0..layers).rev() {
            let n_in = self.sizes[l];
            let x = &trace.acts[l];
            let gw = &mut grad.weights[l];
            let gb = &mut grad.biases[l];
            let w = &self.weights[l];
            let mut dx = vec![0.0; n_in];
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[i] += d;
                let grow = &mut gw[i * n_in..(i + 1) * n_in];
                for (g, &xj) in grow.iter_mut().zip(x) {
                    *g += d * xj;
                }
                let wrow = &w[i * n_in..(i + 1) * n_in];
                for (dxj, &wij) in dx.iter_mut().zip(wrow) {
                    *dxj += d * wij;
                }
            }
            if l > 0 {
                // x = tanh(z): dz = dx * (1 - x^2)
                for (dxj, &xj) in dx.iter_mut().zip(x) {
                    *dxj *= 1.0 - xj * xj;
                }
            }
            delta = dx;
        }
        delta
    }

    /// Input gradient only (no parameter accumulation).
    pub fn input_vjp(&self, trace: &Trace, upstream: &[f64]) -> Vec<f64> {
        let layers = self.num_layers();
        let mut delta = upstream.to_vec();
        for l in (0..layers).rev() {
            let n_in = self.sizes[l];
            let w = &self.weights[l];
            let mut dx = vec![0.0; n_in];
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (dxj, &wij) in dx.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                    *dxj += d * wij;
                }
            }
            if l > 0 {
                for (dxj, &xj) in dx.iter_mut().zip(&trace.acts[l]) {
                    *dxj *= 1.0 - xj * xj;
                }
            }
            delta = dx;
        }
        delta
    }
}

pub fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}
