//! One-dimensional convolutional contact classifier with hand-written
//! forward and backward passes.
//!
//! Sequence activations are stored `[channel][sample][time]` so that a whole
//! batch of convolutions reduces to one matrix product over an im2col buffer.
//! Flat activations are stored `[sample][feature]`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataio::{WindowRef, WindowedDataset, N_FEATURES};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PCNW";
pub const WEIGHTS_VERSION: u32 = 1;
pub const PRESETS: [&str; 4] = ["2blocks", "1block", "4blocks", "convpool"];

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("unknown architecture preset {0:?}")]
    UnknownPreset(String),
    #[error("checksum failure: {0}")]
    ChecksumFailure(String),
    #[error("unsupported weight file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Stride 1, length-preserving padding.
    Conv1d {
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    Dropout,
    /// Window and stride `size`, floor length.
    MaxPool {
        size: usize,
    },
    Flatten,
    Dense {
        out: usize,
    },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv1d { out_channels, kernel } => write!(f, "Conv1D {out_channels} k{kernel}"),
            LayerSpec::Relu => write!(f, "ReLU"),
            LayerSpec::Dropout => write!(f, "Dropout"),
            LayerSpec::MaxPool { size } => write!(f, "MaxPool1D {size}"),
            LayerSpec::Flatten => write!(f, "Flatten"),
            LayerSpec::Dense { out } => write!(f, "FC {out}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Seq { channels: usize, len: usize },
    Flat { features: usize },
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Seq { channels, len } => channels * len,
            Shape::Flat { features } => features,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Seq { channels, len } => write!(f, "{channels}x{len}"),
            Shape::Flat { features } => write!(f, "{features}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub input_channels: usize,
    pub window: usize,
    pub n_classes: usize,
    pub layers: Vec<LayerSpec>,
}

fn conv_block(layers: &mut Vec<LayerSpec>, channels: usize) {
    layers.extend([
        LayerSpec::Conv1d { out_channels: channels, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Conv1d { out_channels: channels, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Dropout,
        LayerSpec::MaxPool { size: 2 },
    ]);
}

fn dense_head(layers: &mut Vec<LayerSpec>, n_classes: usize) {
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense { out: 2048 },
        LayerSpec::Relu,
        LayerSpec::Dropout,
        LayerSpec::Dense { out: 512 },
        LayerSpec::Relu,
        LayerSpec::Dropout,
        LayerSpec::Dense { out: n_classes },
    ]);
}

impl ArchitectureSpec {
    pub fn new(input_channels: usize, window: usize, n_classes: usize, layers: Vec<LayerSpec>) -> Result<Self, NetError> {
        let spec = Self { input_channels, window, n_classes, layers };
        spec.shapes()?;
        Ok(spec)
    }

    /// Named preset for `n_legs` legs over `window` samples of the full feature set.
    pub fn preset(name: &str, window: usize, n_legs: usize) -> Result<Self, NetError> {
        Self::preset_with_channels(name, N_FEATURES, window, n_legs)
    }

    pub fn preset_with_channels(name: &str, channels: usize, window: usize, n_legs: usize) -> Result<Self, NetError> {
        let n_classes = 1usize << n_legs;
        let mut layers = Vec::new();
        match name {
            "2blocks" => [64, 128].iter().for_each(|&c| conv_block(&mut layers, c)),
            "1block" => conv_block(&mut layers, 64),
            "4blocks" => [64, 128, 256, 512].iter().for_each(|&c| conv_block(&mut layers, c)),
            "convpool" => layers.extend([
                LayerSpec::Conv1d { out_channels: 64, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv1d { out_channels: 128, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::Dropout,
                LayerSpec::MaxPool { size: 2 },
            ]),
            _ => return Err(NetError::UnknownPreset(name.to_string())),
        }
        dense_head(&mut layers, n_classes);
        Self::new(channels, window, n_classes, layers)
    }

    pub fn input_shape(&self) -> Shape {
        Shape::Seq { channels: self.input_channels, len: self.window }
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.window
    }

    /// Activation shapes from input to logits (`layers.len() + 1` entries).
    pub fn shapes(&self) -> Result<Vec<Shape>, NetError> {
        if self.n_classes < 2 || !self.n_classes.is_power_of_two() {
            return Err(NetError::ShapeMismatch(format!("{} classes is not a power of two", self.n_classes)));
        }
        let mut shapes = vec![self.input_shape()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next =
                output_shape(layer, *shapes.last().unwrap()).map_err(|m| NetError::ShapeMismatch(format!("layer {i} ({layer}): {m}")))?;
            shapes.push(next);
        }
        match shapes.last() {
            Some(Shape::Flat { features }) if *features == self.n_classes => Ok(shapes),
            Some(s) => Err(NetError::ShapeMismatch(format!("network ends in {s}, expected {} logits", self.n_classes))),
            None => unreachable!(),
        }
    }
}

fn output_shape(layer: &LayerSpec, input: Shape) -> Result<Shape, String> {
    match (*layer, input) {
        (_, s) if s.size() == 0 => Err("empty input".into()),
        (LayerSpec::Conv1d { out_channels, kernel }, Shape::Seq { len, .. }) => {
            if out_channels == 0 || kernel == 0 {
                Err("zero-sized convolution".into())
            } else {
                Ok(Shape::Seq { channels: out_channels, len })
            }
        }
        (LayerSpec::MaxPool { size }, Shape::Seq { channels, len }) => {
            if size == 0 || len < size {
                Err(format!("cannot pool length {len} by {size}"))
            } else {
                Ok(Shape::Seq { channels, len: len / size })
            }
        }
        (LayerSpec::Flatten, Shape::Seq { channels, len }) => Ok(Shape::Flat { features: channels * len }),
        (LayerSpec::Dense { out }, Shape::Flat { .. }) if out > 0 => Ok(Shape::Flat { features: out }),
        (LayerSpec::Relu | LayerSpec::Dropout, s) => Ok(s),
        (_, s) => Err(format!("incompatible input {s}")),
    }
}

fn param_shape(layer: &LayerSpec, input: Shape) -> (usize, usize) {
    match (*layer, input) {
        (LayerSpec::Conv1d { out_channels, kernel }, Shape::Seq { channels, .. }) => (out_channels * channels * kernel, out_channels),
        (LayerSpec::Dense { out }, Shape::Flat { features }) => (out * features, out),
        _ => (0, 0),
    }
}

fn fan_in(layer: &LayerSpec, input: Shape) -> usize {
    match (*layer, input) {
        (LayerSpec::Conv1d { kernel, .. }, Shape::Seq { channels, .. }) => channels * kernel,
        (LayerSpec::Dense { .. }, Shape::Flat { features }) => features,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    /// Conv: `[out][in][k]`; dense: `[out][in]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
}

impl NetworkParams {
    pub fn zeros(spec: &ArchitectureSpec) -> Result<Self, NetError> {
        let shapes = spec.shapes()?;
        Ok(Self {
            layers: spec
                .layers
                .iter()
                .zip(&shapes)
                .map(|(l, s)| {
                    let (w, b) = param_shape(l, *s);
                    LayerParams { weight: vec![0.0; w], bias: vec![0.0; b] }
                })
                .collect(),
        })
    }

    /// Kaiming-uniform weights over the fan-in, zero biases.
    pub fn init(spec: &ArchitectureSpec, seed: u64) -> Result<Self, NetError> {
        let shapes = spec.shapes()?;
        let mut params = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for ((layer, shape), p) in spec.layers.iter().zip(&shapes).zip(&mut params.layers) {
            let fan = fan_in(layer, *shape);
            if fan > 0 {
                let bound = (6.0 / fan as f64).sqrt();
                p.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
            }
        }
        Ok(params)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn check(&self, spec: &ArchitectureSpec) -> Result<(), NetError> {
        let expected = Self::zeros(spec)?;
        let same = self.layers.len() == expected.layers.len()
            && self.layers.iter().zip(&expected.layers).all(|(a, b)| a.weight.len() == b.weight.len() && a.bias.len() == b.bias.len());
        if !same {
            return Err(NetError::ShapeMismatch("parameters do not match the architecture".into()));
        }
        Ok(())
    }

    fn scale(&mut self, s: f64) {
        self.values_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    Train { dropout: f64 },
}

/// A batch of activations; see the module docs for layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub n: usize,
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Activation {
    pub fn zeros(n: usize, shape: Shape) -> Self {
        Self { n, shape, data: vec![0.0; n * shape.size()] }
    }

    /// Builds a batch from consecutive per-sample buffers (`[c][l]` for sequences).
    pub fn from_samples(samples: &[f64], n: usize, shape: Shape) -> Result<Self, NetError> {
        let size = shape.size();
        if samples.len() != n * size {
            return Err(NetError::ShapeMismatch(format!("{} values for {n} samples of {shape}", samples.len())));
        }
        let data = match shape {
            Shape::Flat { .. } => samples.to_vec(),
            Shape::Seq { channels, len } => {
                let mut d = vec![0.0; samples.len()];
                for s in 0..n {
                    for c in 0..channels {
                        let src = &samples[s * size + c * len..][..len];
                        d[(c * n + s) * len..][..len].copy_from_slice(src);
                    }
                }
                d
            }
        };
        Ok(Self { n, shape, data })
    }

    /// Inverse of [`Activation::from_samples`].
    pub fn to_samples(&self) -> Vec<f64> {
        match self.shape {
            Shape::Flat { .. } => self.data.clone(),
            Shape::Seq { channels, len } => {
                let n = self.n;
                let mut out = vec![0.0; self.data.len()];
                for s in 0..n {
                    for c in 0..channels {
                        out[(s * channels + c) * len..][..len].copy_from_slice(&self.data[(c * n + s) * len..][..len]);
                    }
                }
                out
            }
        }
    }
}

/// Cached forward quantities needed by the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv { col: Vec<f64> },
    Relu { active: Vec<bool> },
    Dropout { scale: Option<Vec<f64>> },
    MaxPool { argmax: Vec<usize>, input_len: usize },
    Flatten,
    Dense { input: Vec<f64> },
}

/// `c = alpha * a * b + beta * c` on strided row/column views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + n - 1 < c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], cin: usize, n: usize, len: usize, kernel: usize) -> Vec<f64> {
    let pad = (kernel - 1) / 2;
    let nl = n * len;
    let mut col = vec![0.0; cin * kernel * nl];
    for ci in 0..cin {
        for k in 0..kernel {
            let row = &mut col[(ci * kernel + k) * nl..][..nl];
            let shift = k as isize - pad as isize;
            let lo = (-shift).max(0) as usize;
            let hi = (len as isize - shift).min(len as isize).max(0) as usize;
            for s in 0..n {
                if lo < hi {
                    let src = &x[(ci * n + s) * len..][..len];
                    let from = (lo as isize + shift) as usize;
                    row[s * len + lo..s * len + hi].copy_from_slice(&src[from..from + hi - lo]);
                }
            }
        }
    }
    col
}

fn col2im(dcol: &[f64], cin: usize, n: usize, len: usize, kernel: usize) -> Vec<f64> {
    let pad = (kernel - 1) / 2;
    let nl = n * len;
    let mut dx = vec![0.0; cin * nl];
    for ci in 0..cin {
        for k in 0..kernel {
            let row = &dcol[(ci * kernel + k) * nl..][..nl];
            let shift = k as isize - pad as isize;
            let lo = (-shift).max(0) as usize;
            let hi = (len as isize - shift).min(len as isize).max(0) as usize;
            for s in 0..n {
                let dst = &mut dx[(ci * n + s) * len..][..len];
                for t in lo..hi {
                    dst[(t as isize + shift) as usize] += row[s * len + t];
                }
            }
        }
    }
    dx
}

/// Runs one layer on a batch.
pub fn layer_forward<R: Rng + ?Sized>(
    layer: &LayerSpec,
    params: &LayerParams,
    x: &Activation,
    mode: Mode,
    rng: &mut R,
) -> Result<(Activation, LayerCache), NetError> {
    let out_shape = output_shape(layer, x.shape).map_err(|m| NetError::ShapeMismatch(format!("{layer}: {m}")))?;
    let (pw, pb) = param_shape(layer, x.shape);
    if params.weight.len() != pw || params.bias.len() != pb {
        return Err(NetError::ShapeMismatch(format!("{layer}: parameter count")));
    }
    if x.data.len() != x.n * x.shape.size() {
        return Err(NetError::ShapeMismatch(format!("{layer}: activation buffer")));
    }
    let n = x.n;
    let mut y = Activation::zeros(n, out_shape);
    let cache = match (*layer, x.shape) {
        (LayerSpec::Conv1d { out_channels, kernel }, Shape::Seq { channels, len }) => {
            let col = im2col(&x.data, channels, n, len, kernel);
            let (ck, nl) = (channels * kernel, n * len);
            for (co, row) in y.data.chunks_exact_mut(nl).enumerate() {
                row.fill(params.bias[co]);
            }
            gemm(out_channels, ck, nl, &params.weight, (ck, 1), &col, (nl, 1), 1.0, &mut y.data, nl);
            LayerCache::Conv { col }
        }
        (LayerSpec::Relu, _) => {
            let active: Vec<bool> = x.data.iter().map(|v| *v > 0.0).collect();
            for (o, (v, a)) in y.data.iter_mut().zip(x.data.iter().zip(&active)) {
                *o = if *a { *v } else { 0.0 };
            }
            LayerCache::Relu { active }
        }
        (LayerSpec::Dropout, _) => match mode {
            Mode::Train { dropout } if dropout > 0.0 => {
                let keep = 1.0 / (1.0 - dropout);
                let scale: Vec<f64> = (0..x.data.len()).map(|_| if rng.random::<f64>() < dropout { 0.0 } else { keep }).collect();
                for (o, (v, s)) in y.data.iter_mut().zip(x.data.iter().zip(&scale)) {
                    *o = v * s;
                }
                LayerCache::Dropout { scale: Some(scale) }
            }
            _ => {
                y.data.copy_from_slice(&x.data);
                LayerCache::Dropout { scale: None }
            }
        },
        (LayerSpec::MaxPool { size }, Shape::Seq { channels, len }) => {
            let out_len = len / size;
            let mut argmax = Vec::with_capacity(y.data.len());
            for row in 0..channels * n {
                for t in 0..out_len {
                    let base = row * len + t * size;
                    let mut best = base;
                    for i in base + 1..base + size {
                        if x.data[i] > x.data[best] {
                            best = i;
                        }
                    }
                    y.data[row * out_len + t] = x.data[best];
                    argmax.push(best);
                }
            }
            LayerCache::MaxPool { argmax, input_len: x.data.len() }
        }
        (LayerSpec::Flatten, Shape::Seq { channels, len }) => {
            let f = channels * len;
            for c in 0..channels {
                for s in 0..n {
                    y.data[s * f + c * len..][..len].copy_from_slice(&x.data[(c * n + s) * len..][..len]);
                }
            }
            LayerCache::Flatten
        }
        (LayerSpec::Dense { out }, Shape::Flat { features }) => {
            for row in y.data.chunks_exact_mut(out) {
                row.copy_from_slice(&params.bias);
            }
            gemm(n, features, out, &x.data, (features, 1), &params.weight, (1, features), 1.0, &mut y.data, out);
            LayerCache::Dense { input: x.data.clone() }
        }
        _ => unreachable!("shape compatibility checked above"),
    };
    Ok((y, cache))
}

/// Back-propagates `dy` through one layer. Returns the input gradient when
/// `need_dx` is set, and the parameter gradient.
pub fn layer_backward(
    layer: &LayerSpec,
    params: &LayerParams,
    in_shape: Shape,
    cache: &LayerCache,
    dy: &Activation,
    need_dx: bool,
) -> Result<(Option<Activation>, LayerParams), NetError> {
    let n = dy.n;
    let mut grad = LayerParams { weight: vec![0.0; params.weight.len()], bias: vec![0.0; params.bias.len()] };
    let dx_data: Option<Vec<f64>> = match (*layer, in_shape, cache) {
        (LayerSpec::Conv1d { out_channels, kernel }, Shape::Seq { channels, len }, LayerCache::Conv { col }) => {
            let (ck, nl) = (channels * kernel, n * len);
            gemm(out_channels, nl, ck, &dy.data, (nl, 1), col, (1, nl), 0.0, &mut grad.weight, ck);
            for (co, row) in dy.data.chunks_exact(nl).enumerate() {
                grad.bias[co] = row.iter().sum();
            }
            need_dx.then(|| {
                let mut dcol = vec![0.0; ck * nl];
                gemm(ck, out_channels, nl, &params.weight, (1, ck), &dy.data, (nl, 1), 0.0, &mut dcol, nl);
                col2im(&dcol, channels, n, len, kernel)
            })
        }
        (LayerSpec::Relu, _, LayerCache::Relu { active }) => {
            need_dx.then(|| dy.data.iter().zip(active).map(|(g, a)| if *a { *g } else { 0.0 }).collect())
        }
        (LayerSpec::Dropout, _, LayerCache::Dropout { scale }) => need_dx.then(|| match scale {
            Some(s) => dy.data.iter().zip(s).map(|(g, s)| g * s).collect(),
            None => dy.data.clone(),
        }),
        (LayerSpec::MaxPool { .. }, _, LayerCache::MaxPool { argmax, input_len }) => need_dx.then(|| {
            let mut dx = vec![0.0; *input_len];
            for (g, &i) in dy.data.iter().zip(argmax) {
                dx[i] += g;
            }
            dx
        }),
        (LayerSpec::Flatten, Shape::Seq { channels, len }, LayerCache::Flatten) => need_dx.then(|| {
            let f = channels * len;
            let mut dx = vec![0.0; dy.data.len()];
            for c in 0..channels {
                for s in 0..n {
                    dx[(c * n + s) * len..][..len].copy_from_slice(&dy.data[s * f + c * len..][..len]);
                }
            }
            dx
        }),
        (LayerSpec::Dense { out }, Shape::Flat { features }, LayerCache::Dense { input }) => {
            gemm(out, n, features, &dy.data, (1, out), input, (features, 1), 0.0, &mut grad.weight, features);
            for row in dy.data.chunks_exact(out) {
                grad.bias.iter_mut().zip(row).for_each(|(b, g)| *b += g);
            }
            need_dx.then(|| {
                let mut dx = vec![0.0; n * features];
                gemm(n, out, features, &dy.data, (out, 1), &params.weight, (features, 1), 0.0, &mut dx, features);
                dx
            })
        }
        _ => return Err(NetError::ShapeMismatch(format!("{layer}: cache does not match layer"))),
    };
    Ok((dx_data.map(|data| Activation { n, shape: in_shape, data }), grad))
}

fn check_input(spec: &ArchitectureSpec, input: &[f64], n: usize) -> Result<(), NetError> {
    if input.len() != n * spec.input_len() {
        return Err(NetError::ShapeMismatch(format!(
            "expected {n} windows of {}x{} values, got {} values",
            spec.input_channels,
            spec.window,
            input.len()
        )));
    }
    Ok(())
}

fn forward_cached<R: Rng + ?Sized>(
    params: &NetworkParams,
    spec: &ArchitectureSpec,
    input: &[f64],
    n: usize,
    mode: Mode,
    rng: &mut R,
) -> Result<(Activation, Vec<LayerCache>), NetError> {
    check_input(spec, input, n)?;
    params.check(spec)?;
    let mut x = Activation::from_samples(input, n, spec.input_shape())?;
    let mut caches = Vec::with_capacity(spec.layers.len());
    for (layer, p) in spec.layers.iter().zip(&params.layers) {
        let (y, cache) = layer_forward(layer, p, &x, mode, rng)?;
        caches.push(cache);
        x = y;
    }
    Ok((x, caches))
}

/// Logits for a batch of channel-major windows, `n × n_classes` row-major.
pub fn forward_batch<R: Rng + ?Sized>(
    params: &NetworkParams,
    spec: &ArchitectureSpec,
    input: &[f64],
    n: usize,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<f64>, NetError> {
    Ok(forward_cached(params, spec, input, n, mode, rng)?.0.data)
}

/// Logits for one channel-major `[channels][w]` window.
pub fn forward<R: Rng + ?Sized>(
    params: &NetworkParams,
    spec: &ArchitectureSpec,
    window: &[f64],
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<f64>, NetError> {
    forward_batch(params, spec, window, 1, mode, rng)
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| (z - lse).exp()).collect()
}

/// Cross-entropy of `label` under the softmax of `logits`.
pub fn loss(logits: &[f64], label: u32) -> Result<f64, NetError> {
    if label as usize >= logits.len() {
        return Err(NetError::LabelOutOfRange { label, classes: logits.len() });
    }
    Ok(log_sum_exp(logits) - logits[label as usize])
}

/// Summed loss and summed parameter gradient over a batch.
pub fn backward_batch<R: Rng + ?Sized>(
    params: &NetworkParams,
    spec: &ArchitectureSpec,
    input: &[f64],
    labels: &[u32],
    mode: Mode,
    rng: &mut R,
) -> Result<(f64, NetworkParams, Vec<f64>), NetError> {
    let n = labels.len();
    let (logits, caches) = forward_cached(params, spec, input, n, mode, rng)?;
    let k = spec.n_classes;
    let mut total = 0.0;
    let mut dy = Activation::zeros(n, Shape::Flat { features: k });
    for (s, &label) in labels.iter().enumerate() {
        let z = &logits.data[s * k..][..k];
        total += loss(z, label)?;
        let p = softmax(z);
        let g = &mut dy.data[s * k..][..k];
        g.copy_from_slice(&p);
        g[label as usize] -= 1.0;
    }
    let shapes = spec.shapes()?;
    let mut grads = vec![LayerParams::default(); spec.layers.len()];
    for i in (0..spec.layers.len()).rev() {
        let (dx, g) = layer_backward(&spec.layers[i], &params.layers[i], shapes[i], &caches[i], &dy, i > 0)?;
        grads[i] = g;
        if let Some(dx) = dx {
            dy = dx;
        }
    }
    Ok((total, NetworkParams { layers: grads }, logits.data))
}

/// Loss and exact gradient for one window.
pub fn backward<R: Rng + ?Sized>(
    params: &NetworkParams,
    spec: &ArchitectureSpec,
    window: &[f64],
    label: u32,
    mode: Mode,
    rng: &mut R,
) -> Result<(f64, NetworkParams), NetError> {
    let (l, g, _) = backward_batch(params, spec, window, &[label], mode, rng)?;
    Ok((l, g))
}

/// Most probable class (lowest index on ties) and the class probabilities.
pub fn classify(logits: &[f64]) -> (u32, Vec<f64>) {
    let mut best = 0;
    for (i, z) in logits.iter().enumerate() {
        if *z > logits[best] {
            best = i;
        }
    }
    (best as u32, softmax(logits))
}

pub fn predict(params: &NetworkParams, spec: &ArchitectureSpec, window: &[f64]) -> Result<(u32, Vec<f64>), NetError> {
    let logits = forward(params, spec, window, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(classify(&logits))
}

/// Indexable labelled windows in channel-major layout.
pub trait WindowSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn input_len(&self) -> usize;
    /// Writes window `index` into `out` and returns its label.
    fn fill(&self, index: usize, out: &mut [f64]) -> Option<u32>;
}

/// Windows held in memory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledWindows {
    pub input_len: usize,
    pub data: Vec<f64>,
    pub labels: Vec<u32>,
}

impl LabeledWindows {
    pub fn new(input_len: usize) -> Self {
        Self { input_len, data: Vec::new(), labels: Vec::new() }
    }

    pub fn push(&mut self, window: &[f64], label: u32) {
        assert_eq!(window.len(), self.input_len);
        self.data.extend_from_slice(window);
        self.labels.push(label);
    }

    pub fn window(&self, i: usize) -> &[f64] {
        &self.data[i * self.input_len..][..self.input_len]
    }
}

impl WindowSource for LabeledWindows {
    fn len(&self) -> usize {
        self.labels.len()
    }
    fn input_len(&self) -> usize {
        self.input_len
    }
    fn fill(&self, index: usize, out: &mut [f64]) -> Option<u32> {
        out.copy_from_slice(self.window(index));
        Some(self.labels[index])
    }
}

/// A subset of a [`WindowedDataset`], normalized on the fly.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    pub dataset: &'a WindowedDataset,
    pub refs: Vec<WindowRef>,
}

impl WindowSource for DatasetView<'_> {
    fn len(&self) -> usize {
        self.refs.len()
    }
    fn input_len(&self) -> usize {
        N_FEATURES * self.dataset.w
    }
    fn fill(&self, index: usize, out: &mut [f64]) -> Option<u32> {
        let r = self.refs[index];
        self.dataset.fill_normalized(r, out);
        self.dataset.label(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    Sgd,
}

impl std::str::FromStr for Optimizer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            _ => Err(format!("unknown optimizer {s:?} (expected adam or sgd)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 30, learning_rate: 1e-4, epochs: 30, dropout: 0.2, seed: 0, optimizer: Optimizer::Adam }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.batch_size == 0 {
            return Err(NetError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(NetError::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NetError::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,train_loss,train_acc,val_acc";

pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{TRAIN_LOG_HEADER}\n");
    for e in log {
        let val = e.val_acc.map_or("N/A".to_string(), |v| format!("{v:.6}"));
        s.push_str(&format!("{},{:.8},{:.6},{}\n", e.epoch, e.train_loss, e.train_acc, val));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut NetworkParams, grad: &NetworkParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.values_mut().zip(grad.values()).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn fill_batch<S: WindowSource + ?Sized>(source: &S, indices: &[usize], buf: &mut Vec<f64>, labels: &mut Vec<u32>) {
    let len = source.input_len();
    buf.resize(indices.len() * len, 0.0);
    labels.clear();
    for (slot, &i) in indices.iter().enumerate() {
        labels.push(source.fill(i, &mut buf[slot * len..][..len]).unwrap_or(u32::MAX));
    }
}

/// Eval-mode predictions for every window of `source`.
pub fn predict_source<S: WindowSource + ?Sized>(
    params: &NetworkParams,
    spec: &ArchitectureSpec,
    source: &S,
    batch_size: usize,
) -> Result<Vec<(u32, Vec<f64>)>, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut buf, mut labels) = (Vec::new(), Vec::new());
    let mut out = Vec::with_capacity(source.len());
    let all: Vec<usize> = (0..source.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        fill_batch(source, chunk, &mut buf, &mut labels);
        let logits = forward_batch(params, spec, &buf, chunk.len(), Mode::Eval, &mut rng)?;
        out.extend(logits.chunks_exact(spec.n_classes).map(classify));
    }
    Ok(out)
}

/// Fraction of windows whose predicted class equals the label.
pub fn accuracy<S: WindowSource + ?Sized>(
    params: &NetworkParams,
    spec: &ArchitectureSpec,
    source: &S,
    batch_size: usize,
) -> Result<f64, NetError> {
    if source.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let preds = predict_source(params, spec, source, batch_size)?;
    let mut scratch = vec![0.0; source.input_len()];
    let hits = preds.iter().enumerate().filter(|(i, (c, _))| source.fill(*i, &mut scratch) == Some(*c)).count();
    Ok(hits as f64 / source.len() as f64)
}

/// Mini-batch training with mean-reduced loss. When a validation set is
/// given, the parameters of the epoch with the best validation accuracy are
/// returned.
pub fn train<S: WindowSource + ?Sized, V: WindowSource + ?Sized>(
    spec: &ArchitectureSpec,
    train_set: &S,
    val_set: Option<&V>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, NetError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    if train_set.input_len() != spec.input_len() {
        return Err(NetError::ShapeMismatch(format!("windows of {} values, network expects {}", train_set.input_len(), spec.input_len())));
    }
    let mut params = NetworkParams::init(spec, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam { m: vec![0.0; params.num_params()], v: vec![0.0; params.num_params()], t: 0 };
    let mode = Mode::Train { dropout: config.dropout };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let (mut buf, mut labels) = (Vec::new(), Vec::new());
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, NetworkParams)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            fill_batch(train_set, batch, &mut buf, &mut labels);
            let (l, mut grad, logits) = backward_batch(&params, spec, &buf, &labels, mode, &mut rng)?;
            loss_sum += l;
            hits += logits.chunks_exact(spec.n_classes).zip(&labels).filter(|(z, y)| classify(z).0 == **y).count();
            grad.scale(1.0 / batch.len() as f64);
            match config.optimizer {
                Optimizer::Adam => adam.step(&mut params, &grad, config.learning_rate),
                Optimizer::Sgd => params.values_mut().zip(grad.values()).for_each(|(p, g)| *p -= config.learning_rate * g),
            }
        }
        let val_acc = match val_set {
            Some(v) if !v.is_empty() => Some(accuracy(&params, spec, v, 256)?),
            _ => None,
        };
        let entry = EpochLog { epoch, train_loss: loss_sum / order.len() as f64, train_acc: hits as f64 / order.len() as f64, val_acc };
        on_epoch(&entry);
        log.push(entry);
        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, params.clone()));
            }
        }
    }
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (params, config.epochs),
    };
    Ok(TrainOutcome { params, log, best_epoch })
}

fn layer_tag(layer: &LayerSpec) -> (u8, u32, u32) {
    match *layer {
        LayerSpec::Conv1d { out_channels, kernel } => (1, out_channels as u32, kernel as u32),
        LayerSpec::Relu => (2, 0, 0),
        LayerSpec::Dropout => (3, 0, 0),
        LayerSpec::MaxPool { size } => (4, size as u32, 0),
        LayerSpec::Flatten => (5, 0, 0),
        LayerSpec::Dense { out } => (6, out as u32, 0),
    }
}

fn layer_from_tag(tag: u8, a: u32, b: u32) -> Result<LayerSpec, NetError> {
    Ok(match tag {
        1 => LayerSpec::Conv1d { out_channels: a as usize, kernel: b as usize },
        2 => LayerSpec::Relu,
        3 => LayerSpec::Dropout,
        4 => LayerSpec::MaxPool { size: a as usize },
        5 => LayerSpec::Flatten,
        6 => LayerSpec::Dense { out: a as usize },
        _ => return Err(NetError::Format(format!("unknown layer tag {tag}"))),
    })
}

/// Serializes weights: magic, version, architecture, little-endian values, CRC32.
pub fn encode_params(params: &NetworkParams, spec: &ArchitectureSpec) -> Result<Vec<u8>, NetError> {
    params.check(spec)?;
    let mut b = Vec::with_capacity(32 + 8 * params.num_params());
    b.extend_from_slice(WEIGHTS_MAGIC);
    b.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    for v in [spec.input_channels, spec.window, spec.n_classes, spec.layers.len()] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for layer in &spec.layers {
        let (tag, x, y) = layer_tag(layer);
        b.push(tag);
        b.extend_from_slice(&x.to_le_bytes());
        b.extend_from_slice(&y.to_le_bytes());
    }
    b.extend_from_slice(&(params.num_params() as u64).to_le_bytes());
    for v in params.values() {
        b.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    Ok(b)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NetError> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| NetError::Format("unexpected end of data".into()))?;
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<(NetworkParams, ArchitectureSpec), NetError> {
    if bytes.len() < 12 {
        return Err(NetError::ChecksumFailure(format!("file too short ({} bytes)", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(NetError::ChecksumFailure(format!("stored {stored:08x}, computed {actual:08x}")));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(NetError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(NetError::VersionMismatch { found: version, expected: WEIGHTS_VERSION });
    }
    let (channels, window, classes, n_layers) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let tag = r.take(1)?[0];
        let (a, b) = (r.u32()?, r.u32()?);
        layers.push(layer_from_tag(tag, a, b)?);
    }
    let spec = ArchitectureSpec::new(channels, window, classes, layers)?;
    let mut params = NetworkParams::zeros(&spec)?;
    let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    if count != params.num_params() as u64 {
        return Err(NetError::Format(format!("{count} values for {} parameters", params.num_params())));
    }
    for v in params.values_mut() {
        *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    }
    if r.pos != body.len() {
        return Err(NetError::Format("trailing bytes".into()));
    }
    if !params.all_finite() {
        return Err(NetError::Format("non-finite parameter".into()));
    }
    Ok((params, spec))
}

pub fn save_params(params: &NetworkParams, spec: &ArchitectureSpec, path: &Path) -> Result<(), NetError> {
    let bytes = encode_params(params, spec)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<(NetworkParams, ArchitectureSpec), NetError> {
    decode_params(&std::fs::read(path)?)
}
