//! Dense regression network: forward pass, batch weight gradients, and the
//! gradient-matching objective the reconstruction attack descends.
//!
//! Parameters are stored flat, layer by layer, each layer as its row-major
//! `out x in` weight matrix followed by its bias vector. The first layer's bias
//! is the `b1` whose per-sample partials drive the closed-form reconstruction.

mod dual;

pub use dual::{Dual3, Scalar};

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FedmapError, Result};
use crate::seed;

/// Standardized (easting, northing).
pub const FEATURE_DIM: usize = 2;

/// Below this, the dominant mean bias partial is treated as zero.
pub const BIAS_PARTIAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softplus,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z.value() > 0.0 {
                    z
                } else {
                    T::cst(0.0)
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => {
                if z.value() >= 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => T::cst(if z.value() > 0.0 { 1.0 } else { 0.0 }),
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (T::cst(1.0) - s)
            }
            Activation::Softplus => sigmoid(z),
            Activation::Identity => T::cst(1.0),
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    let one = T::cst(1.0);
    if z.value() >= 0.0 {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    }
}

/// Layer widths (input first, output last), one activation per hidden layer,
/// and the inverted-dropout rate applied after every hidden activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout_rate: f64,
}

impl ArchConfig {
    pub fn new(layer_widths: Vec<usize>, activations: Vec<Activation>, dropout_rate: f64) -> Result<Self> {
        let arch = Self {
            layer_widths,
            activations,
            dropout_rate,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// 2 -> 224 (ReLU) -> 640 (sigmoid) -> 1, 5% dropout.
    pub fn signal_map_default() -> Self {
        Self {
            layer_widths: vec![FEATURE_DIM, 224, 640, 1],
            activations: vec![Activation::Relu, Activation::Sigmoid],
            dropout_rate: 0.05,
        }
    }

    /// Smooth variant with custom hidden widths and no dropout.
    pub fn softplus(hidden: &[usize]) -> Self {
        let mut layer_widths = vec![FEATURE_DIM];
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(1);
        Self {
            layer_widths,
            activations: vec![Activation::Softplus; hidden.len()],
            dropout_rate: 0.0,
        }
    }

    /// Single affine layer `w . x + b`.
    pub fn linear() -> Self {
        Self {
            layer_widths: vec![FEATURE_DIM, 1],
            activations: vec![],
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.layer_widths;
        if w.len() < 2 {
            return Err(FedmapError::Config("need at least input and output widths".into()));
        }
        if w[0] != FEATURE_DIM {
            return Err(FedmapError::Config(format!(
                "input width must be {FEATURE_DIM}, got {}",
                w[0]
            )));
        }
        if *w.last().unwrap() != 1 {
            return Err(FedmapError::Config("output width must be 1".into()));
        }
        if w.iter().any(|&n| n == 0) {
            return Err(FedmapError::Config("layer widths must be positive".into()));
        }
        if self.activations.len() != w.len() - 2 {
            return Err(FedmapError::Config(format!(
                "{} hidden layers but {} activations",
                w.len() - 2,
                self.activations.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(FedmapError::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }

    /// Width `H` of the first layer (the bias vector the closed form reads).
    pub fn first_layer_width(&self) -> usize {
        self.layer_widths[1]
    }

    /// Offsets of layer `l`'s weight matrix and bias vector in the flat layout.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for p in self.layer_widths.windows(2).take(l) {
            off += p[0] * p[1] + p[1];
        }
        let (n_in, n_out) = (self.layer_widths[l], self.layer_widths[l + 1]);
        (off, off + n_in * n_out)
    }

    fn activation(&self, l: usize) -> Activation {
        self.activations.get(l).copied().unwrap_or(Activation::Identity)
    }
}

/// One labelled point in model space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: [f64; FEATURE_DIM],
    pub y: f64,
}

impl Sample {
    pub fn new(x: [f64; FEATURE_DIM], y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    /// Inverted dropout with masks drawn from `seed` and the sample index.
    Train { seed: u64 },
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    arch: Arc<ArchConfig>,
    flat: Vec<f64>,
}

impl ModelWeights {
    pub fn zeros(arch: &ArchConfig) -> Self {
        Self {
            flat: vec![0.0; arch.parameter_count()],
            arch: Arc::new(arch.clone()),
        }
    }

    pub fn from_flat(arch: &ArchConfig, flat: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if flat.len() != arch.parameter_count() {
            return Err(FedmapError::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                arch.parameter_count()
            )));
        }
        Ok(Self {
            arch: Arc::new(arch.clone()),
            flat,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(arch: &ArchConfig, seed: u64) -> Self {
        let mut w = Self::zeros(arch);
        let mut rng = seed::rng_for(seed, &[0x1417]);
        for l in 0..arch.num_layers() {
            let (n_in, n_out) = (arch.layer_widths[l], arch.layer_widths[l + 1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            let (wo, bo) = arch.layer_offsets(l);
            for v in &mut w.flat[wo..bo] {
                *v = dist.sample(&mut rng);
            }
        }
        w
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Weight matrix (row-major `out x in`) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (wo, bo) = self.arch.layer_offsets(l);
        let n_out = self.arch.layer_widths[l + 1];
        (&self.flat[wo..bo], &self.flat[bo..bo + n_out])
    }

    pub fn first_layer_bias(&self) -> &[f64] {
        self.layer(0).1
    }

    pub fn is_finite(&self) -> bool {
        self.flat.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other_arch: &ArchConfig, other_len: usize) -> Result<()> {
        if *self.arch != *other_arch || self.flat.len() != other_len {
            return Err(FedmapError::Shape(format!(
                "architectures differ ({:?} vs {:?})",
                self.arch.layer_widths, other_arch.layer_widths
            )));
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != self.flat.len() {
            return Err(FedmapError::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.flat.len()
            )));
        }
        Ok(Self {
            arch: Arc::clone(&self.arch),
            flat,
        })
    }
}

/// Per-sample partials of the loss with respect to one first-layer bias unit.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasPartials {
    pub unit: usize,
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

/// A gradient (or any vector shaped like the parameters).
///
/// When produced by [`weight_gradient`], it also keeps every sample's
/// first-layer-bias partials so the closed-form oracle can read `g_i(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    arch: Arc<ArchConfig>,
    flat: Vec<f64>,
    sample_bias: Option<Vec<f64>>,
    n_samples: usize,
}

impl GradientVector {
    pub fn from_flat(arch: &ArchConfig, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != arch.parameter_count() {
            return Err(FedmapError::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                arch.parameter_count()
            )));
        }
        Ok(Self {
            arch: Arc::new(arch.clone()),
            flat,
            sample_bias: None,
            n_samples: 0,
        })
    }

    pub fn zeros_like(w: &ModelWeights) -> Self {
        Self {
            arch: Arc::clone(&w.arch),
            flat: vec![0.0; w.flat.len()],
            sample_bias: None,
            n_samples: 0,
        }
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.flat.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            arch: Arc::clone(&self.arch),
            flat: self.flat.iter().map(|v| v * k).collect(),
            sample_bias: None,
            n_samples: 0,
        }
    }

    pub fn with_flat(&self, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != self.flat.len() {
            return Err(FedmapError::Shape("gradient length changed".into()));
        }
        Ok(Self {
            arch: Arc::clone(&self.arch),
            flat,
            sample_bias: None,
            n_samples: 0,
        })
    }

    pub fn first_layer_bias(&self) -> &[f64] {
        let (_, bo) = self.arch.layer_offsets(0);
        &self.flat[bo..bo + self.arch.first_layer_width()]
    }

    /// The unit `h` maximizing `|mean_i g_i|`, lowest index on ties.
    pub fn dominant_unit(&self) -> usize {
        let mut best = 0;
        let mut best_abs = f64::NEG_INFINITY;
        for (h, v) in self.first_layer_bias().iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = h;
            }
        }
        best
    }

    /// Per-sample partials for unit `h`; `None` unless this gradient came from
    /// [`weight_gradient`].
    pub fn bias_partials(&self, h: usize) -> Option<BiasPartials> {
        let rows = self.sample_bias.as_ref()?;
        let width = self.arch.first_layer_width();
        if h >= width {
            return None;
        }
        let per_sample: Vec<f64> = (0..self.n_samples).map(|i| rows[i * width + h]).collect();
        let mean = self.first_layer_bias()[h];
        Some(BiasPartials {
            unit: h,
            per_sample,
            mean,
        })
    }

    pub fn dominant_bias_partials(&self) -> Option<BiasPartials> {
        self.bias_partials(self.dominant_unit())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dropout_masks(arch: &ArchConfig, mode: DropoutMode, sample_index: usize) -> Option<Vec<Vec<f64>>> {
    let DropoutMode::Train { seed } = mode else {
        return None;
    };
    let p = arch.dropout_rate;
    if p == 0.0 {
        return None;
    }
    let mut rng = seed::rng_for(seed, &[sample_index as u64]);
    let keep = 1.0 / (1.0 - p);
    let hidden = &arch.layer_widths[1..arch.layer_widths.len() - 1];
    Some(
        hidden
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect()
            })
            .collect(),
    )
}

/// Forward pass keeping pre-activations and layer outputs.
fn forward_trace<T: Scalar>(
    w: &ModelWeights,
    x: [T; FEATURE_DIM],
    masks: Option<&[Vec<f64>]>,
) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
    let arch = w.arch();
    let n_layers = arch.num_layers();
    let mut pre = Vec::with_capacity(n_layers);
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(n_layers + 1);
    acts.push(x.to_vec());
    for l in 0..n_layers {
        let (wm, b) = w.layer(l);
        let n_in = arch.layer_widths[l];
        let input = &acts[l];
        let z: Vec<T> = b
            .iter()
            .enumerate()
            .map(|(j, &bj)| {
                let row = &wm[j * n_in..(j + 1) * n_in];
                let mut s = T::cst(bj);
                for (a, &wjk) in input.iter().zip(row) {
                    s += *a * wjk;
                }
                s
            })
            .collect();
        let out: Vec<T> = if l + 1 < n_layers {
            let act = arch.activation(l);
            let mask = masks.map(|m| &m[l]);
            z.iter()
                .enumerate()
                .map(|(k, &zk)| {
                    let a = act.apply(zk);
                    match mask {
                        Some(m) => a * m[k],
                        None => a,
                    }
                })
                .collect()
        } else {
            z.clone()
        };
        pre.push(z);
        acts.push(out);
    }
    (pre, acts)
}

/// Reverse pass for one sample's squared error. Every parameter partial is
/// handed to `sink(flat_index, value)`. Returns the prediction.
fn backprop<T: Scalar, F: FnMut(usize, T)>(
    w: &ModelWeights,
    x: [T; FEATURE_DIM],
    y: T,
    masks: Option<&[Vec<f64>]>,
    mut sink: F,
) -> T {
    let arch = w.arch();
    let (pre, acts) = forward_trace(w, x, masks);
    let n_layers = arch.num_layers();
    let pred = acts[n_layers][0];
    let mut delta = vec![(pred - y) * 2.0];
    for l in (0..n_layers).rev() {
        let (wo, bo) = arch.layer_offsets(l);
        let n_in = arch.layer_widths[l];
        let input = &acts[l];
        for (j, &dj) in delta.iter().enumerate() {
            sink(bo + j, dj);
            let base = wo + j * n_in;
            for (k, &ak) in input.iter().enumerate() {
                sink(base + k, dj * ak);
            }
        }
        if l == 0 {
            break;
        }
        let (wm, _) = w.layer(l);
        let act = arch.activation(l - 1);
        let mask = masks.map(|m| &m[l - 1]);
        let mut prev = vec![T::cst(0.0); n_in];
        for (j, &dj) in delta.iter().enumerate() {
            let row = &wm[j * n_in..(j + 1) * n_in];
            for (p, &wjk) in prev.iter_mut().zip(row) {
                *p += dj * wjk;
            }
        }
        for (k, p) in prev.iter_mut().enumerate() {
            let mut d = *p * act.derivative(pre[l - 1][k]);
            if let Some(m) = mask {
                d = d * m[k];
            }
            *p = d;
        }
        delta = prev;
    }
    pred
}

fn check_input(w: &ModelWeights, x: &[f64]) -> Result<[f64; FEATURE_DIM]> {
    if x.len() != w.arch().layer_widths[0] {
        return Err(FedmapError::Shape(format!(
            "feature vector of length {} for input width {}",
            x.len(),
            w.arch().layer_widths[0]
        )));
    }
    Ok([x[0], x[1]])
}

/// Network output for `x`.
pub fn forward(weights: &ModelWeights, x: &[f64], mode: DropoutMode) -> Result<f64> {
    let x = check_input(weights, x)?;
    let masks = dropout_masks(weights.arch(), mode, 0);
    let (_, acts) = forward_trace(weights, x, masks.as_deref());
    Ok(acts[weights.arch().num_layers()][0])
}

pub fn mse_loss(pred: f64, y: f64) -> f64 {
    (pred - y) * (pred - y)
}

/// Mean squared error over a batch (sample `i` uses dropout stream `i`).
pub fn batch_loss(weights: &ModelWeights, batch: &[Sample], mode: DropoutMode) -> Result<f64> {
    if batch.is_empty() {
        return Err(FedmapError::Precondition("empty batch".into()));
    }
    let mut total = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let masks = dropout_masks(weights.arch(), mode, i);
        let (_, acts) = forward_trace(weights, s.x, masks.as_deref());
        total += mse_loss(acts[weights.arch().num_layers()][0], s.y);
    }
    Ok(total / batch.len() as f64)
}

const GRADIENT_CHUNKS: usize = 16;

/// Gradient of the batch-mean squared error, with per-sample first-layer-bias
/// partials retained.
///
/// The batch is cut into a fixed number of contiguous chunks reduced in order,
/// so the result does not depend on the thread count.
pub fn weight_gradient(weights: &ModelWeights, batch: &[Sample], mode: DropoutMode) -> Result<GradientVector> {
    if batch.is_empty() {
        return Err(FedmapError::Precondition("weight gradient of an empty batch".into()));
    }
    let arch = weights.arch();
    let n_params = arch.parameter_count();
    let width = arch.first_layer_width();
    let (_, b1) = arch.layer_offsets(0);
    let chunk = batch.len().div_ceil(GRADIENT_CHUNKS).max(1);

    let partials: Vec<(Vec<f64>, Vec<f64>)> = batch
        .par_chunks(chunk)
        .enumerate()
        .map(|(c, samples)| {
            let mut acc = vec![0.0; n_params];
            let mut rows = vec![0.0; samples.len() * width];
            for (j, s) in samples.iter().enumerate() {
                let i = c * chunk + j;
                let masks = dropout_masks(arch, mode, i);
                let row = &mut rows[j * width..(j + 1) * width];
                backprop(weights, s.x, s.y, masks.as_deref(), |idx, g: f64| {
                    acc[idx] += g;
                    if idx >= b1 && idx < b1 + width {
                        row[idx - b1] = g;
                    }
                });
            }
            (acc, rows)
        })
        .collect();

    let inv = 1.0 / batch.len() as f64;
    let mut flat = vec![0.0; n_params];
    let mut sample_bias = Vec::with_capacity(batch.len() * width);
    for (acc, rows) in partials {
        for (f, a) in flat.iter_mut().zip(&acc) {
            *f += a;
        }
        sample_bias.extend(rows);
    }
    for f in &mut flat {
        *f *= inv;
    }
    Ok(GradientVector {
        arch: Arc::clone(&weights.arch),
        flat,
        sample_bias: Some(sample_bias),
        n_samples: batch.len(),
    })
}

/// Cosine similarity; errors if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FedmapError::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(FedmapError::DegenerateGradient(format!("norms {na:e} and {nb:e}")));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 - cos(dummy, true) + alpha`, in `[alpha, 2 + alpha]`.
pub fn match_loss(dummy_grad: &GradientVector, true_grad: &GradientVector, alpha: f64) -> Result<f64> {
    Ok(1.0 - cosine(dummy_grad.flat(), true_grad.flat())? + alpha)
}

/// Value and input-gradient of the matching loss at one dummy sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchGradient {
    pub loss: f64,
    pub cosine: f64,
    pub grad_x: [f64; FEATURE_DIM],
    pub grad_y: f64,
}

impl MatchGradient {
    pub fn norm(&self) -> f64 {
        (self.grad_x[0].powi(2) + self.grad_x[1].powi(2) + self.grad_y.powi(2)).sqrt()
    }
}

/// The matching objective for a fixed model and target gradient, evaluated in
/// inference mode.
#[derive(Debug, Clone)]
pub struct MatchObjective<'a> {
    weights: &'a ModelWeights,
    target: &'a [f64],
    target_norm: f64,
    alpha: f64,
}

impl<'a> MatchObjective<'a> {
    pub fn new(weights: &'a ModelWeights, target: &'a GradientVector, alpha: f64) -> Result<Self> {
        weights.check_same_shape(target.arch(), target.len())?;
        let target_norm = target.norm();
        if target_norm == 0.0 || !target_norm.is_finite() {
            return Err(FedmapError::DegenerateGradient(format!(
                "target gradient norm {target_norm:e}"
            )));
        }
        Ok(Self {
            weights,
            target: target.flat(),
            target_norm,
            alpha,
        })
    }

    /// Loss and exact derivative with respect to `(x', y')`, by forward-mode
    /// differentiation through the reverse pass.
    pub fn eval(&self, x: [f64; FEATURE_DIM], y: f64) -> Result<MatchGradient> {
        let xd = [Dual3::var(x[0], 0), Dual3::var(x[1], 1)];
        let yd = Dual3::var(y, 2);
        let mut dot_acc = Dual3::default();
        let mut sq_acc = Dual3::default();
        let target = self.target;
        backprop(self.weights, xd, yd, None, |idx, g: Dual3| {
            dot_acc += g * target[idx];
            sq_acc += g * g;
        });
        if !(sq_acc.v > 0.0) || !sq_acc.v.is_finite() {
            return Err(FedmapError::DegenerateGradient(format!(
                "dummy gradient norm^2 = {:e}",
                sq_acc.v
            )));
        }
        let cos = dot_acc / (sq_acc.sqrt() * self.target_norm);
        let loss = Dual3::cst(1.0 + self.alpha) - cos;
        Ok(MatchGradient {
            loss: loss.v,
            cosine: cos.v,
            grad_x: [loss.d[0], loss.d[1]],
            grad_y: loss.d[2],
        })
    }

    /// Loss only, through the plain `f64` gradient path.
    pub fn value(&self, x: [f64; FEATURE_DIM], y: f64) -> Result<f64> {
        let mut g = vec![0.0; self.target.len()];
        backprop(self.weights, x, y, None, |idx, v: f64| g[idx] += v);
        let ng = dot(&g, &g).sqrt();
        if ng == 0.0 {
            return Err(FedmapError::DegenerateGradient("dummy gradient is zero".into()));
        }
        Ok(1.0 - dot(&g, self.target) / (ng * self.target_norm) + self.alpha)
    }
}

/// Gradient of the matching loss with respect to the dummy sample `(x', y')`.
pub fn input_gradient_of_match(
    weights: &ModelWeights,
    true_grad: &GradientVector,
    x: [f64; FEATURE_DIM],
    y: f64,
    alpha: f64,
) -> Result<MatchGradient> {
    MatchObjective::new(weights, true_grad, alpha)?.eval(x, y)
}

/// `w - eta * grad`.
pub fn sgd_step(weights: &ModelWeights, grad: &GradientVector, eta: f64) -> Result<ModelWeights> {
    weights.check_same_shape(grad.arch(), grad.len())?;
    let flat = weights
        .flat()
        .iter()
        .zip(grad.flat())
        .map(|(w, g)| w - eta * g)
        .collect();
    weights.with_flat(flat)
}
