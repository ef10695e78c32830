//! Fully-connected ReLU classifier with inverted dropout and hand-derived
//! backpropagation.
//!
//! Weight matrices are stored as (fan_in, fan_out), so a batch x of shape
//! (B, in) maps through x·W + b. Dropout applies to hidden activations
//! only, scaled by 1/keep_prob at train time so evaluation needs no
//! rescaling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer sizes of the network: input dimension, hidden widths, class count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, classes: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden,
            classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArchitecture(
                "input dimension must be positive".to_string(),
            ));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if let Some(zero) = self.hidden.iter().position(|&h| h == 0) {
            return Err(Error::InvalidArchitecture(format!(
                "hidden layer {zero} has zero units"
            )));
        }
        Ok(())
    }

    /// Dimensions along the layer chain: input, each hidden, classes.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.classes);
        dims
    }

    pub fn num_params(&self) -> usize {
        let dims = self.layer_dims();
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Weights and biases of the network. Immutable during forward/backward;
/// only the optimizer updates it between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    arch: Architecture,
    /// One (fan_in, fan_out) matrix per layer, hidden layers first.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpParams {
    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }
}

/// Inverted-dropout settings: probability of keeping a hidden unit, and
/// the seed for the mask stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutConfig {
    pub keep_prob: f64,
    pub seed: u64,
}

impl DropoutConfig {
    pub fn sampler(&self) -> Result<DropoutSampler> {
        DropoutSampler::new(self.keep_prob, self.seed)
    }
}

/// Draws scaled dropout masks. Rebuilding the sampler from the same
/// config replays the identical mask stream.
#[derive(Clone, Debug)]
pub struct DropoutSampler {
    keep_prob: f64,
    rng: ChaCha8Rng,
}

impl DropoutSampler {
    pub fn new(keep_prob: f64, seed: u64) -> Result<Self> {
        if !keep_prob.is_finite() || keep_prob <= 0.0 || keep_prob > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "keep_prob must lie in (0, 1], got {keep_prob}"
            )));
        }
        Ok(Self {
            keep_prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    /// A mask of 0 or 1/keep_prob entries; multiplying activations by it
    /// keeps their expectation equal to the eval-mode values.
    fn draw_mask(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let scale = 1.0 / self.keep_prob;
        let mut mask = Array2::zeros((rows, cols));
        for v in mask.iter_mut() {
            if self.rng.random::<f64>() < self.keep_prob {
                *v = scale;
            }
        }
        mask
    }
}

/// Everything backward needs from a training-mode forward pass: the batch
/// input, per-layer pre-activations and (post-dropout) activations, and
/// the dropout masks when dropout was applied.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    input: Array2<f64>,
    pre_activations: Vec<Array2<f64>>,
    activations: Vec<Array2<f64>>,
    dropout_masks: Option<Vec<Array2<f64>>>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    /// Smallest |pre-activation| across all hidden units in the batch.
    /// Values near zero flag a ReLU kink: the loss is not differentiable
    /// there, so finite-difference checks should pick a different point.
    pub fn min_abs_pre_activation(&self) -> f64 {
        self.pre_activations
            .iter()
            .flat_map(|pre| pre.iter())
            .fold(f64::INFINITY, |acc, &v| acc.min(v.abs()))
    }
}

/// Per-parameter gradients, shaped exactly like [`MlpParams`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: params
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    /// Iterates over every gradient entry, weights then bias per layer.
    pub fn iter_all(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v * factor);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v * factor);
        }
    }
}

/// Initializes weights from N(0, 0.01²) and biases to zero,
/// deterministically in the seed.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<MlpParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.01).expect("valid std");
    let dims = arch.layer_dims();
    let mut weights = Vec::with_capacity(dims.len() - 1);
    let mut biases = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut w = Array2::zeros((fan_in, fan_out));
        for v in w.iter_mut() {
            *v = normal.sample(&mut rng);
        }
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpParams {
        arch: arch.clone(),
        weights,
        biases,
    })
}

fn validate_input(params: &MlpParams, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != params.arch.input_dim {
        return Err(Error::InvalidInput(format!(
            "input has {} features, network expects {}",
            x.ncols(),
            params.arch.input_dim
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("empty batch".to_string()));
    }
    if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite feature at flat index {bad}"
        )));
    }
    Ok(())
}

/// Evaluation-mode forward pass: affine + ReLU through the hidden layers,
/// affine to the logits. Pure function of (params, x).
pub fn forward_eval(params: &MlpParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    validate_input(params, &x)?;
    let n_hidden = params.arch.hidden.len();
    let mut h = x.to_owned();
    for l in 0..n_hidden {
        let mut a = h.dot(&params.weights[l]);
        a += &params.biases[l];
        a.mapv_inplace(|v| v.max(0.0));
        h = a;
    }
    let mut logits = h.dot(&params.weights[n_hidden]);
    logits += &params.biases[n_hidden];
    Ok(logits)
}

/// Training-mode forward pass. Applies inverted dropout to each hidden
/// activation when a sampler is given, and returns the trace backward
/// needs. With `dropout` None (or keep_prob = 1) the logits equal the
/// eval-mode forward.
pub fn forward_train(
    params: &MlpParams,
    x: ArrayView2<f64>,
    mut dropout: Option<&mut DropoutSampler>,
) -> Result<(Array2<f64>, ForwardTrace)> {
    validate_input(params, &x)?;
    let n_hidden = params.arch.hidden.len();
    let mut pre_activations = Vec::with_capacity(n_hidden);
    let mut activations = Vec::with_capacity(n_hidden);
    let mut masks = dropout.as_ref().map(|_| Vec::with_capacity(n_hidden));

    let mut h = x.to_owned();
    for l in 0..n_hidden {
        let mut pre = h.dot(&params.weights[l]);
        pre += &params.biases[l];
        let mut act = pre.mapv(|v| v.max(0.0));
        if let Some(sampler) = dropout.as_deref_mut() {
            let mask = sampler.draw_mask(act.nrows(), act.ncols());
            act *= &mask;
            masks.as_mut().expect("mask vec present").push(mask);
        }
        pre_activations.push(pre);
        activations.push(act.clone());
        h = act;
    }
    let mut logits = h.dot(&params.weights[n_hidden]);
    logits += &params.biases[n_hidden];

    let trace = ForwardTrace {
        input: x.to_owned(),
        pre_activations,
        activations,
        dropout_masks: masks,
    };
    Ok((logits, trace))
}

/// Backpropagates `grad_logits` (the gradient of a scalar loss with
/// respect to the logits) through the trace, reusing the dropout masks
/// recorded by the forward pass. Returns exact gradients for every
/// weight and bias.
pub fn backward(
    trace: &ForwardTrace,
    params: &MlpParams,
    grad_logits: ArrayView2<f64>,
) -> Result<Gradients> {
    let n_hidden = params.arch.hidden.len();
    if trace.pre_activations.len() != n_hidden || trace.activations.len() != n_hidden {
        return Err(Error::InvalidState(format!(
            "trace has {} hidden layers, params have {n_hidden}",
            trace.pre_activations.len()
        )));
    }
    if trace.input.ncols() != params.arch.input_dim {
        return Err(Error::InvalidState(format!(
            "trace input width {} does not match architecture input {}",
            trace.input.ncols(),
            params.arch.input_dim
        )));
    }
    if grad_logits.nrows() != trace.input.nrows() || grad_logits.ncols() != params.arch.classes {
        return Err(Error::InvalidState(format!(
            "grad_logits shape ({}, {}) does not match batch {} x classes {}",
            grad_logits.nrows(),
            grad_logits.ncols(),
            trace.input.nrows(),
            params.arch.classes
        )));
    }
    for (l, pre) in trace.pre_activations.iter().enumerate() {
        if pre.ncols() != params.arch.hidden[l] {
            return Err(Error::InvalidState(format!(
                "trace layer {l} width {} does not match architecture width {}",
                pre.ncols(),
                params.arch.hidden[l]
            )));
        }
    }

    let mut grad_w = vec![Array2::zeros((0, 0)); n_hidden + 1];
    let mut grad_b = vec![Array1::zeros(0); n_hidden + 1];

    // Output layer.
    let last_act = if n_hidden == 0 {
        trace.input.view()
    } else {
        trace.activations[n_hidden - 1].view()
    };
    grad_w[n_hidden] = last_act.t().dot(&grad_logits);
    grad_b[n_hidden] = grad_logits.sum_axis(Axis(0));

    // Hidden layers, output to input.
    let mut upstream = grad_logits.dot(&params.weights[n_hidden].t());
    for l in (0..n_hidden).rev() {
        if let Some(masks) = &trace.dropout_masks {
            upstream *= &masks[l];
        }
        // ReLU: pass gradient only where the pre-activation was positive.
        ndarray::Zip::from(&mut upstream)
            .and(&trace.pre_activations[l])
            .for_each(|g, &pre| {
                if pre <= 0.0 {
                    *g = 0.0;
                }
            });
        let input = if l == 0 {
            trace.input.view()
        } else {
            trace.activations[l - 1].view()
        };
        grad_w[l] = input.t().dot(&upstream);
        grad_b[l] = upstream.sum_axis(Axis(0));
        if l > 0 {
            upstream = upstream.dot(&params.weights[l].t());
        }
    }

    Ok(Gradients {
        weights: grad_w,
        biases: grad_b,
    })
}

/// Argmax over eval-mode logits, ties broken by the lowest class index.
pub fn predict(params: &MlpParams, x: ArrayView2<f64>) -> Result<Vec<usize>> {
    let logits = forward_eval(params, x)?;
    Ok(logits
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = row[0];
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            best
        })
        .collect())
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"OMLP";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a versioned binary checkpoint: magic, version, architecture
/// header, then f64 little-endian weights and biases per layer. The
/// round trip is bit-exact.
pub fn save_checkpoint<P: AsRef<Path>>(path: P, params: &MlpParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.arch.input_dim as u32).to_le_bytes())?;
    w.write_all(&(params.arch.hidden.len() as u32).to_le_bytes())?;
    for &h in &params.arch.hidden {
        w.write_all(&(h as u32).to_le_bytes())?;
    }
    w.write_all(&(params.arch.classes as u32).to_le_bytes())?;
    for (weights, biases) in params.weights.iter().zip(&params.biases) {
        for &v in weights.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for &v in biases.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::Format {
                offset: self.offset,
                message: format!("truncated while reading {what}"),
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact_at(&mut buf, what)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn read_f64(&mut self, what: &str) -> Result<f64> {
        let mut buf = [0u8; 8];
        self.read_exact_at(&mut buf, what)?;
        Ok(f64::from_le_bytes(buf))
    }
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<MlpParams> {
    let mut r = CountingReader {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };
    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:02x?}, expected {CHECKPOINT_MAGIC:02x?}"),
        });
    }
    let version = r.read_u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let input_dim = r.read_u32("input_dim")? as usize;
    let n_hidden = r.read_u32("hidden count")? as usize;
    if n_hidden > 1024 {
        return Err(Error::Format {
            offset: 12,
            message: format!("implausible hidden layer count {n_hidden}"),
        });
    }
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(r.read_u32("hidden width")? as usize);
    }
    let classes = r.read_u32("classes")? as usize;
    let arch = Architecture::new(input_dim, hidden, classes)
        .map_err(|e| Error::Format {
            offset: r.offset,
            message: format!("invalid architecture header: {e}"),
        })?;

    let dims = arch.layer_dims();
    let mut weights = Vec::with_capacity(dims.len() - 1);
    let mut biases = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut w = Array2::zeros((fan_in, fan_out));
        for v in w.iter_mut() {
            *v = r.read_f64("weight")?;
        }
        let mut b = Array1::zeros(fan_out);
        for v in b.iter_mut() {
            *v = r.read_f64("bias")?;
        }
        weights.push(w);
        biases.push(b);
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::Format {
            offset: r.offset,
            message: "trailing bytes after parameters".to_string(),
        });
    }
    Ok(MlpParams {
        arch,
        weights,
        biases,
    })
}
