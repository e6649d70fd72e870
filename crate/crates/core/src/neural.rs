//! A small fully connected network with tanh hidden layers and a linear
//! scalar output, its exact reverse-mode gradients, an AdamW optimizer and a
//! plain-text checkpoint format.
//!
//! Parameters are addressed as one flat vector in layer order; within a layer
//! the weight matrix comes first (row-major, one row per output unit) and the
//! bias vector second. Gradients and optimizer moments use the same layout.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "freyr-ckpt v1";

/// Layer widths of the score and value networks.
pub const DEFAULT_DIMS: [usize; 4] = [11, 32, 16, 1];

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) || *dims.last().unwrap() != 1 {
        return Err(Error::contract(format!(
            "layer dims {dims:?} must have at least two positive entries and end in 1"
        )));
    }
    Ok(())
}

pub fn parameter_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `activations[0]` is the input; the last entry holds the output.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> f64 {
        self.activations.last().expect("non-empty")[0]
    }
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Mlp { dims: dims.to_vec(), params: vec![0.0; parameter_count(dims)] })
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        let mut net = Mlp::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for w in dims.windows(2) {
            let bound = (1.0 / w[0] as f64).sqrt();
            let n = w[0] * w[1] + w[1];
            for p in &mut net.params[off..off + n] {
                *p = rng.random_range(-bound..bound);
            }
            off += n;
        }
        Ok(net)
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        if params.len() != parameter_count(dims) {
            return Err(Error::contract(format!(
                "{} parameters given, dims {dims:?} need {}",
                params.len(),
                parameter_count(dims)
            )));
        }
        Ok(Mlp { dims: dims.to_vec(), params })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, fan_in, fan_out)
        self.dims.windows(2).scan(0, |off, w| {
            let here = *off;
            *off += w[0] * w[1] + w[1];
            Some((here, w[0], w[1]))
        })
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.dims[0] {
            return Err(Error::contract(format!(
                "input of length {} fed to a network expecting {}",
                input.len(),
                self.dims[0]
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        Ok(self.forward_cached(input)?.output())
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let n_layers = self.dims.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        for (l, (off, fan_in, fan_out)) in self.layers().enumerate() {
            let x = &activations[l];
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let hidden = l + 1 < n_layers;
            let out: Vec<f64> = (0..fan_out)
                .map(|j| {
                    let z = b[j] + w[j * fan_in..(j + 1) * fan_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    if hidden {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    /// Adds `upstream * d(output)/d(param)` into `grad` and returns the
    /// gradient with respect to the input.
    pub fn backward_into(&self, cache: &ForwardCache, upstream: f64, grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        let layers: Vec<_> = self.layers().collect();
        let mut delta = vec![upstream];
        for (l, &(off, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let x = &cache.activations[l];
            let w = &self.params[off..off + fan_in * fan_out];
            for j in 0..fan_out {
                let d = delta[j];
                if d != 0.0 {
                    let row = &mut grad[off + j * fan_in..off + (j + 1) * fan_in];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
                grad[off + fan_in * fan_out + j] += d;
            }
            let mut prev = vec![0.0; fan_in];
            for j in 0..fan_out {
                let d = delta[j];
                if d != 0.0 {
                    for (p, wji) in prev.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                        *p += d * wji;
                    }
                }
            }
            if l > 0 {
                // x is a tanh activation here
                for (p, a) in prev.iter_mut().zip(x) {
                    *p *= 1.0 - a * a;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Fresh gradients of `upstream * output` for every parameter, plus the
    /// input gradient.
    pub fn backward(&self, input: &[f64], upstream: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let cache = self.forward_cached(input)?;
        let mut grad = vec![0.0; self.params.len()];
        let input_grad = self.backward_into(&cache, upstream, &mut grad);
        Ok((grad, input_grad))
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        writeln!(out, "{}", dims.join(" "))?;
        for p in &self.params {
            // Display for f64 prints the shortest string that parses back exactly
            writeln!(out, "{p}")?;
        }
        Ok(())
    }

    /// Reads one network block from `lines`, leaving the rest untouched.
    pub fn read_from<'a, I: Iterator<Item = &'a str>>(lines: &mut I) -> Result<Self> {
        match lines.next() {
            Some(l) if l.trim_end() == CHECKPOINT_MAGIC => {}
            Some(l) => return Err(Error::Format(format!("expected `{CHECKPOINT_MAGIC}`, found `{l}`"))),
            None => return Err(Error::Format("empty checkpoint".into())),
        }
        let dims_line = lines.next().ok_or_else(|| Error::Format("missing dims line".into()))?;
        let dims = dims_line
            .split_whitespace()
            .map(|d| d.parse::<usize>().map_err(|_| Error::Format(format!("bad dim `{d}`"))))
            .collect::<Result<Vec<_>>>()?;
        check_dims(&dims).map_err(|e| Error::Format(e.to_string()))?;
        let n = parameter_count(&dims);
        let mut params = Vec::with_capacity(n);
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("truncated: {i} of {n} parameters present")))?;
            let v: f64 = line.trim().parse().map_err(|_| Error::Format(format!("bad parameter `{line}`")))?;
            if !v.is_finite() {
                return Err(Error::Format(format!("non-finite parameter `{line}`")));
            }
            params.push(v);
        }
        Ok(Mlp { dims, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let net = Mlp::read_from(&mut lines)?;
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Format("trailing data after parameters".into()));
        }
        Ok(net)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    /// One decoupled-weight-decay Adam step that descends `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer sized for {} parameters got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] *= 1.0 - self.lr * self.weight_decay;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
