//! Multilayer-perceptron encoder with an L2-normalized output, exact
//! backpropagation and plain SGD.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Added to the squared norm before the square root in the output
/// normalization, so an all-zero pre-normalization output maps to zero
/// instead of NaN.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid layer dims {0:?}: need at least an input and an output size, all > 0")]
    InvalidDims(Vec<usize>),
    #[error("input has dimension {got}, model expects {expected}")]
    InputDimension { expected: usize, got: usize },
    #[error("gradient shape does not match the model")]
    GradientShape,
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: u64 },
    #[error("invalid SGD config: {0}")]
    InvalidSgd(String),
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

/// Dense layer `y = W x + b` with `W` stored row-major (`out × in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.bias)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()),
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    dims: Vec<usize>,
    activation: Activation,
    seed: u64,
    layers: Vec<Layer>,
}

/// Unit-norm descriptor vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(Vec<f64>);

impl Descriptor {
    /// Normalizes `v` with the ε-guarded norm. Returns the norm used.
    pub fn from_raw(mut v: Vec<f64>) -> (Self, f64) {
        let norm = (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        (Self(v), norm)
    }

    /// Wraps a vector that is already unit-norm.
    pub fn from_unit(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input of layer `l`; the last entry is the
    /// pre-normalization output.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    norm: f64,
    descriptor: Descriptor,
}

impl ForwardCache {
    pub fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    pub fn pre_norm_output(&self) -> &[f64] {
        self.inputs.last().expect("at least one layer")
    }
}

/// Parameter gradients with the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(model: &EncoderModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= s);
            l.bias.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }
}

impl EncoderModel {
    /// Xavier-uniform weights, zero biases.
    pub fn init(dims: &[usize], activation: Activation, seed: u64) -> Result<Self, EncoderError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(EncoderError::InvalidDims(dims.to_vec()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out);
                layer
                    .weights
                    .iter_mut()
                    .for_each(|x| *x = rng.random_range(-bound..=bound));
                layer
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            seed,
            layers,
        })
    }

    /// Builds a model from explicit layers; dims are derived from them.
    pub fn from_layers(
        layers: Vec<Layer>,
        activation: Activation,
        seed: u64,
    ) -> Result<Self, EncoderError> {
        let mut dims = Vec::with_capacity(layers.len() + 1);
        for (k, l) in layers.iter().enumerate() {
            let consistent = l.weights.len() == l.in_dim * l.out_dim
                && l.bias.len() == l.out_dim
                && (k == 0 || dims[k] == l.in_dim);
            if !consistent || l.in_dim == 0 || l.out_dim == 0 {
                return Err(EncoderError::InvalidDims(dims));
            }
            if k == 0 {
                dims.push(l.in_dim);
            }
            dims.push(l.out_dim);
        }
        if layers.is_empty() {
            return Err(EncoderError::InvalidDims(dims));
        }
        Ok(Self {
            dims,
            activation,
            seed,
            layers,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn d_in(&self) -> usize {
        self.dims[0]
    }

    pub fn d_out(&self) -> usize {
        *self.dims.last().expect("validated dims")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    /// Forward pass. Hidden layers use the activation; the last layer is
    /// linear and followed by L2 normalization.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache, EncoderError> {
        if x.len() != self.d_in() {
            return Err(EncoderError::InputDimension {
                expected: self.d_in(),
                got: x.len(),
            });
        }
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers - 1);
        inputs.push(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.forward_into(inputs.last().expect("non-empty"), &mut z);
            if k + 1 < n_layers {
                let a = z.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(z);
                inputs.push(a);
            } else {
                inputs.push(z);
            }
        }
        let (descriptor, norm) = Descriptor::from_raw(inputs.last().expect("non-empty").clone());
        Ok(ForwardCache {
            inputs,
            pre,
            norm,
            descriptor,
        })
    }

    pub fn describe(&self, x: &[f64]) -> Result<Descriptor, EncoderError> {
        Ok(self.forward(x)?.descriptor)
    }

    /// Backpropagates `grad_descriptor` (dL/dv) to parameter gradients,
    /// accumulating into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_descriptor: &[f64],
        grads: &mut Gradients,
    ) {
        let v = cache.descriptor.as_slice();
        // normalization Jacobian (I - v vᵀ) / ‖u‖
        let along: f64 = v.iter().zip(grad_descriptor).map(|(a, b)| a * b).sum();
        let mut delta: Vec<f64> = grad_descriptor
            .iter()
            .zip(v)
            .map(|(g, vi)| (g - vi * along) / cache.norm)
            .collect();

        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.inputs[k];
            let g = &mut grads.layers[k];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                if d != 0.0 {
                    let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    row.iter_mut().zip(input).for_each(|(w, x)| *w += d * x);
                }
            }
            if k == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.in_dim];
            for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                if d != 0.0 {
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                }
            }
            let pre = &cache.pre[k - 1];
            for ((p, &z), &a) in prev.iter_mut().zip(pre).zip(input) {
                *p *= self.activation.derivative(z, a);
            }
            delta = prev;
        }
    }

    pub fn backward(&self, cache: &ForwardCache, grad_descriptor: &[f64]) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, grad_descriptor, &mut grads);
        grads
    }

    /// `p ← p − lr(iteration)·g`.
    pub fn sgd_step(
        &mut self,
        grads: &Gradients,
        iteration: u64,
        cfg: &SgdConfig,
    ) -> Result<(), EncoderError> {
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.weights.len() != l.weights.len() || g.bias.len() != l.bias.len())
        {
            return Err(EncoderError::GradientShape);
        }
        if !grads.is_finite() {
            return Err(EncoderError::NonFiniteGradient { iteration });
        }
        let lr = cfg.learning_rate(iteration);
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weights
                .iter_mut()
                .zip(&g.weights)
                .for_each(|(p, d)| *p -= lr * d);
            l.bias
                .iter_mut()
                .zip(&g.bias)
                .for_each(|(p, d)| *p -= lr * d);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `factor` every `period` iterations.
    Step {
        factor: f64,
        period: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub schedule: LrSchedule,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            schedule: LrSchedule::Constant,
        }
    }
}

impl SgdConfig {
    pub fn step(period: u64) -> Self {
        Self {
            learning_rate: 0.1,
            schedule: LrSchedule::Step {
                factor: 0.1,
                period,
            },
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EncoderError::InvalidSgd("learning rate must be > 0".into()));
        }
        if let LrSchedule::Step { factor, period } = self.schedule {
            if period == 0 {
                return Err(EncoderError::InvalidSgd("step period must be > 0".into()));
            }
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(EncoderError::InvalidSgd("step factor must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn learning_rate(&self, iteration: u64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Step { factor, period } => {
                let drops = (iteration / period).min(i32::MAX as u64) as i32;
                self.learning_rate * factor.powi(drops)
            }
        }
    }
}

/// On-disk checkpoint. `serde_json` writes doubles in shortest round-trip
/// form, so save/load is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub iteration: u64,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_model(model: &EncoderModel, iteration: u64) -> Self {
        Self {
            dims: model.dims.clone(),
            activation: model.activation,
            seed: model.seed,
            iteration,
            weights: model.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: model.layers.iter().map(|l| l.bias.clone()).collect(),
        }
    }

    pub fn into_model(self) -> Result<EncoderModel, EncoderError> {
        if self.dims.len() < 2
            || self.weights.len() != self.dims.len() - 1
            || self.biases.len() != self.weights.len()
        {
            return Err(EncoderError::InvalidDims(self.dims));
        }
        let layers = self
            .dims
            .windows(2)
            .zip(self.weights.into_iter().zip(self.biases))
            .map(|(w, (weights, bias))| Layer {
                in_dim: w[0],
                out_dim: w[1],
                weights,
                bias,
            })
            .collect();
        EncoderModel::from_layers(layers, self.activation, self.seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}
