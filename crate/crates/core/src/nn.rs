//! Small fully-connected networks with hand-written backward passes, and Adam.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per fixed reduction chunk; keeps gradient sums independent of threads.
const CHUNK_ROWS: usize = 64;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
            activation,
        }
    }

    /// He-uniform weights, zero biases.
    pub fn he_uniform(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim, activation);
        for w in &mut layer.weights {
            *w = rng.gen_range(-bound..bound);
        }
        layer
    }

    #[inline]
    fn forward_row(&self, x: &[f64], y: &mut [f64]) {
        for (o, out) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *out = self.activation.apply(acc);
        }
    }
}

/// Parameters of a chain of affine layers with per-layer activations.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    version: u64,
}

/// Activations retained by [`mlp_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    batch: usize,
    /// Input of every layer followed by the final output, each `batch × dim`.
    activations: Vec<Vec<f64>>,
    version: u64,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::invalid(format!(
                    "layer dimensions do not chain: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.biases.len() != l.out_dim {
                return Err(Error::invalid("layer storage does not match its dimensions"));
            }
        }
        Ok(Self {
            layers,
            version: fresh_version(),
        })
    }

    /// ReLU hidden layers with He-uniform init and a zero-initialized
    /// sigmoid head, so the initial output is 0.5 everywhere.
    pub fn color_head(input: usize, hidden: &[usize], output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut dim = input;
        for &h in hidden {
            layers.push(Layer::he_uniform(dim, h, Activation::Relu, &mut rng));
            dim = h;
        }
        layers.push(Layer::zeros(dim, output, Activation::Sigmoid));
        Self::new(layers).expect("chained by construction")
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// Marks parameters as changed; caches from earlier forwards become stale.
    pub fn touch(&mut self) {
        self.version = fresh_version();
    }

    pub fn zero_gradient(&self) -> Vec<LayerGradient> {
        self.layers
            .iter()
            .map(|l| LayerGradient {
                weights: vec![0.0; l.weights.len()],
                biases: vec![0.0; l.biases.len()],
            })
            .collect()
    }

    /// Dims header (`n_layers`, then `(in, out, activation)` per layer) and
    /// f32 LE weights followed by biases, layer by layer.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            for v in [l.in_dim as u32, l.out_dim as u32, l.activation.code()] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.biases) {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let err = |e: std::io::Error| Error::parse("mlp checkpoint", e.to_string());
        let mut b = [0u8; 4];
        let mut next = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut b).map_err(err)?;
            Ok(u32::from_le_bytes(b))
        };
        let n = next(r)? as usize;
        if n == 0 || n > 64 {
            return Err(Error::parse("mlp checkpoint", format!("implausible layer count {n}")));
        }
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let (i, o, a) = (next(r)? as usize, next(r)? as usize, next(r)?);
            if i == 0 || o == 0 || i * o > 1 << 24 {
                return Err(Error::parse("mlp checkpoint", "implausible layer shape"));
            }
            let act = Activation::from_code(a)
                .ok_or_else(|| Error::parse("mlp checkpoint", format!("unknown activation {a}")))?;
            layers.push(Layer::zeros(i, o, act));
        }
        for l in &mut layers {
            for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *v = f32::from_bits(next(r)?) as f64;
            }
        }
        Self::new(layers).map_err(|e| Error::parse("mlp checkpoint", e.to_string()))
    }
}

/// Forward pass over a row-major `batch × input_dim` matrix.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
    let in_dim = params.input_dim();
    if !input.len().is_multiple_of(in_dim) {
        return Err(Error::invalid(format!(
            "input length {} is not a multiple of the input width {in_dim}",
            input.len()
        )));
    }
    let batch = input.len() / in_dim;
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    activations.push(input.to_vec());
    for layer in &params.layers {
        let x = activations.last().unwrap();
        let mut y = vec![0.0; batch * layer.out_dim];
        y.par_chunks_mut(layer.out_dim)
            .zip(x.par_chunks(layer.in_dim))
            .with_min_len(CHUNK_ROWS)
            .for_each(|(yr, xr)| layer.forward_row(xr, yr));
        activations.push(y);
    }
    let cache = MlpCache {
        batch,
        activations,
        version: params.version,
    };
    Ok((cache.output().to_vec(), cache))
}

/// Reverse-mode gradients for the forward that produced `cache`.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &MlpCache,
    dl_doutput: &[f64],
) -> Result<(Vec<LayerGradient>, Vec<f64>)> {
    if cache.version != params.version {
        return Err(Error::State(
            "mlp cache is stale: parameters changed since forward".into(),
        ));
    }
    if dl_doutput.len() != cache.batch * params.output_dim() {
        return Err(Error::invalid("output gradient has the wrong shape"));
    }
    let batch = cache.batch;
    let n_chunks = batch.div_ceil(CHUNK_ROWS);
    let in_dim = params.input_dim();
    let mut dl_dinput = vec![0.0; batch * in_dim];

    let partials: Vec<Vec<LayerGradient>> = dl_dinput
        .par_chunks_mut(CHUNK_ROWS * in_dim)
        .enumerate()
        .map(|(chunk, dx_out)| {
            let rows = (chunk * CHUNK_ROWS)..((chunk + 1) * CHUNK_ROWS).min(batch);
            let mut grads = params.zero_gradient();
            let max_dim = params.layers.iter().map(|l| l.in_dim.max(l.out_dim)).max().unwrap();
            let mut delta = vec![0.0; max_dim];
            let mut prev = vec![0.0; max_dim];
            for (local, row) in rows.enumerate() {
                let out_dim = params.output_dim();
                delta[..out_dim].copy_from_slice(&dl_doutput[row * out_dim..(row + 1) * out_dim]);
                for (li, layer) in params.layers.iter().enumerate().rev() {
                    let y = &cache.activations[li + 1][row * layer.out_dim..(row + 1) * layer.out_dim];
                    let x = &cache.activations[li][row * layer.in_dim..(row + 1) * layer.in_dim];
                    // through the activation
                    for o in 0..layer.out_dim {
                        delta[o] *= layer.activation.derivative_from_output(y[o]);
                    }
                    let g = &mut grads[li];
                    prev[..layer.in_dim].fill(0.0);
                    for o in 0..layer.out_dim {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        g.biases[o] += d;
                        let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        let grow = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for i in 0..layer.in_dim {
                            grow[i] += d * x[i];
                            prev[i] += d * wrow[i];
                        }
                    }
                    std::mem::swap(&mut delta, &mut prev);
                }
                dx_out[local * in_dim..(local + 1) * in_dim].copy_from_slice(&delta[..in_dim]);
            }
            grads
        })
        .collect();
    debug_assert_eq!(partials.len(), n_chunks);

    let mut total = params.zero_gradient();
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            for (a, b) in t.weights.iter_mut().zip(p.weights) {
                *a += b;
            }
            for (a, b) in t.biases.iter_mut().zip(p.biases) {
                *a += b;
            }
        }
    }
    Ok((total, dl_dinput))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-4)
    }
}

/// Bias-corrected Adam over a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moments: Vec<Vec<f64>>,
    pub second_moments: Vec<Vec<f64>>,
}

impl AdamState {
    /// State for tensors of the given sizes.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first_moments: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            second_moments: sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    /// One update of every tensor. Fails without modifying anything if any
    /// gradient is non-finite or a shape does not match.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moments.len() || grads.len() != params.len() {
            return Err(Error::invalid("adam: tensor count mismatch"));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first_moments[i].len() || g.len() != p.len() {
                return Err(Error::invalid(format!("adam: shape mismatch in tensor {i}")));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient in tensor {i} at element {j}"
                )));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moments[i];
            let v = &mut self.second_moments[i];
            p.par_iter_mut()
                .zip(m.par_iter_mut())
                .zip(v.par_iter_mut())
                .zip(g.par_iter())
                .with_min_len(4096)
                .for_each(|(((p, m), v), g)| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// Flattens `(weights, biases)` of every layer for use with [`AdamState`].
pub fn layer_tensors_mut(params: &mut MlpParams) -> Vec<&mut [f64]> {
    params.touch();
    params
        .layers
        .iter_mut()
        .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
        .collect()
}

pub fn layer_gradient_tensors(grads: &[LayerGradient]) -> Vec<&[f64]> {
    grads
        .iter()
        .flat_map(|g| [g.weights.as_slice(), g.biases.as_slice()])
        .collect()
}

pub fn layer_sizes(params: &MlpParams) -> Vec<usize> {
    params
        .layers
        .iter()
        .flat_map(|l| [l.weights.len(), l.biases.len()])
        .collect()
}
