//! Multi-layer perceptron classifier with exact forward/backward passes.
//!
//! The model exposes raw logits Z(x) from an identity output layer, the hinge
//! loss max(max_{i≠t} Z(x)_i − Z(x)_t, −κ) with its input gradient for the
//! attack loops, and softmax cross-entropy gradients for training. Weights
//! round-trip through a little-endian binary format (magic "NNW1").

use std::fs;
use std::path::Path;

use crate::bytes::{read_f64_le, read_u32_le, read_u8, take};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamState};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: &[u8; 4] = b"NNW1";

/// Layer activation. The numeric codes are the on-disk encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity = 0,
    Relu = 1,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed in terms of the activation output. For relu,
    /// out > 0 exactly when the pre-activation was positive; the kink at 0
    /// takes the zero branch.
    fn grad_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Dense layer: `weights` is (out × in) row-major, `biases` has length out.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Tensor,
    pub biases: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Tensor, biases: Tensor, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "layer weights must be rank 2, got shape {:?}",
                weights.shape()
            )));
        }
        if biases.len() != weights.shape()[0] {
            return Err(Error::ShapeMismatch {
                expected: vec![weights.shape()[0]],
                actual: biases.shape().to_vec(),
            });
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        debug_assert_eq!(input.len(), in_dim);
        let w = self.weights.data();
        let mut out = Vec::with_capacity(out_dim);
        for o in 0..out_dim {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let z: f64 = row.iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>()
                + self.biases.data()[o];
            out.push(self.activation.apply(z));
        }
        out
    }
}

/// Per-layer parameter gradients in the same shapes as the layer parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: Tensor,
    pub d_biases: Tensor,
}

/// Joint output of `MlpModel::hinge_eval`.
#[derive(Debug, Clone)]
pub struct HingeEval {
    /// max(max_{i≠t} Z_i − Z_t, −κ)
    pub value: f64,
    /// d value / d input; all-zero when the hinge is floored
    pub grad: Tensor,
    /// argmax class of the logits
    pub predicted: usize,
    pub logits: Tensor,
}

/// Training hyperparameters. All fields must be positive.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Feed-forward classifier. The final layer is always identity so that
/// `forward_logits` returns raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Validates that consecutive layer dimensions chain, the output layer is
    /// identity, and there are at least two classes.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::InvalidArgument("model needs at least one layer".into()))?;
        if last.activation != Activation::Identity {
            return Err(Error::InvalidArgument(
                "output layer must have identity activation".into(),
            ));
        }
        if last.out_dim() < 2 {
            return Err(Error::InvalidArgument(format!(
                "model needs at least 2 classes, got {}",
                last.out_dim()
            )));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::InvalidArgument(format!(
                    "layer {} out-dim {} does not chain into layer {} in-dim {}",
                    k,
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Fresh model over `dims` = [input, hidden..., classes]: relu hidden
    /// layers, identity head, weights uniform in ±√(6/(fan_in+fan_out)),
    /// zero biases. Sampling order is fixed (layer by layer, weights
    /// row-major, then biases), so a seed pins the model exactly.
    pub fn random(dims: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least input and output dimensions".into(),
            ));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.uniform(-limit, limit))
                .collect();
            let activation = if k + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer::new(
                Tensor::matrix(fan_out, fan_in, weights)?,
                Tensor::zeros(fan_out),
                activation,
            )?);
        }
        MlpModel::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Replace one layer's weight matrix (same shape). Gradient-check
    /// harnesses use this to probe single parameters.
    pub fn set_layer_weights(&mut self, idx: usize, weights: Tensor) -> Result<()> {
        let current = &self.layers[idx].weights;
        if weights.shape() != current.shape() {
            return Err(Error::ShapeMismatch {
                expected: current.shape().to_vec(),
                actual: weights.shape().to_vec(),
            });
        }
        self.layers[idx].weights = weights;
        Ok(())
    }

    /// Replace one layer's bias vector (same shape).
    pub fn set_layer_biases(&mut self, idx: usize, biases: Tensor) -> Result<()> {
        let current = &self.layers[idx].biases;
        if biases.shape() != current.shape() {
            return Err(Error::ShapeMismatch {
                expected: current.shape().to_vec(),
                actual: biases.shape().to_vec(),
            });
        }
        self.layers[idx].biases = biases;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.input_dim()],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_class(&self, t: usize) -> Result<()> {
        if t >= self.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "class index {} out of range for {} classes",
                t,
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Raw logits Z(x).
    pub fn forward_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut current = x.data().to_vec();
        for layer in &self.layers {
            current = layer.forward(&current);
        }
        Ok(Tensor::from_vec(current))
    }

    /// Forward pass keeping every post-activation output for backprop.
    /// Index 0 is the input itself.
    fn forward_trace(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.data().to_vec());
        for layer in &self.layers {
            let next = layer.forward(trace.last().unwrap());
            trace.push(next);
        }
        Ok(trace)
    }

    /// Backpropagates `d_logits` to the input only.
    fn backprop_input(&self, trace: &[Vec<f64>], d_logits: &[f64]) -> Vec<f64> {
        let mut delta = d_logits.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace[k + 1];
            for (dz, o) in delta.iter_mut().zip(out) {
                *dz *= layer.activation.grad_from_output(*o);
            }
            let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
            let w = layer.weights.data();
            let mut prev = vec![0.0; in_dim];
            for o in 0..out_dim {
                let row = &w[o * in_dim..(o + 1) * in_dim];
                let dz = delta[o];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += wi * dz;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Backpropagates `d_logits` to all parameters and the input.
    fn backprop_params(&self, trace: &[Vec<f64>], d_logits: &[f64]) -> (Vec<LayerGrads>, Vec<f64>) {
        let mut grads: Vec<Option<LayerGrads>> = vec![None; self.layers.len()];
        let mut delta = d_logits.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace[k + 1];
            let input = &trace[k];
            for (dz, o) in delta.iter_mut().zip(out) {
                *dz *= layer.activation.grad_from_output(*o);
            }
            let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
            let mut dw = vec![0.0; out_dim * in_dim];
            for o in 0..out_dim {
                let dz = delta[o];
                let row = &mut dw[o * in_dim..(o + 1) * in_dim];
                for (d, xi) in row.iter_mut().zip(input) {
                    *d = dz * xi;
                }
            }
            grads[k] = Some(LayerGrads {
                d_weights: Tensor::matrix(out_dim, in_dim, dw).expect("gradient shape"),
                d_biases: Tensor::from_vec(delta.clone()),
            });
            let w = layer.weights.data();
            let mut prev = vec![0.0; in_dim];
            for o in 0..out_dim {
                let row = &w[o * in_dim..(o + 1) * in_dim];
                let dz = delta[o];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += wi * dz;
                }
            }
            delta = prev;
        }
        (grads.into_iter().map(Option::unwrap).collect(), delta)
    }

    /// Predicted class: argmax of the logits, ties broken by the lowest index.
    pub fn classify(&self, x: &Tensor) -> Result<usize> {
        let logits = self.forward_logits(x)?;
        Ok(argmax(logits.data()))
    }

    /// Hinge loss f(x, t) = max(max_{i≠t} Z(x)_i − Z(x)_t, −κ).
    ///
    /// Equals −κ exactly when the target's margin over the runner-up reaches κ.
    pub fn hinge_loss(&self, x: &Tensor, t: usize, kappa: f64) -> Result<f64> {
        let logits = self.forward_logits(x)?;
        self.check_class(t)?;
        Ok(hinge_from_logits(logits.data(), t, kappa).0)
    }

    /// Exact gradient of `hinge_loss` with respect to the input.
    ///
    /// All-zero when the hinge is floored at −κ. At the kink, and at ties in
    /// the inner max, the logit-difference branch with the lowest competing
    /// index is taken, keeping gradients deterministic.
    pub fn hinge_input_grad(&self, x: &Tensor, t: usize, kappa: f64) -> Result<Tensor> {
        Ok(self.hinge_eval(x, t, kappa)?.grad)
    }

    /// Hinge value, hinge input gradient and logits from one forward/backward
    /// pass. The attack inner loops call this once per candidate.
    pub fn hinge_eval(&self, x: &Tensor, t: usize, kappa: f64) -> Result<HingeEval> {
        self.check_class(t)?;
        let trace = self.forward_trace(x)?;
        let logits = trace.last().unwrap().clone();
        let (value, active) = hinge_from_logits(&logits, t, kappa);
        let grad = match active {
            None => Tensor::zeros(x.len()),
            Some(runner_up) => {
                let mut d_logits = vec![0.0; logits.len()];
                d_logits[runner_up] = 1.0;
                d_logits[t] = -1.0;
                Tensor::from_vec(self.backprop_input(&trace, &d_logits))
            }
        };
        Ok(HingeEval {
            value,
            grad,
            predicted: argmax(&logits),
            logits: Tensor::from_vec(logits),
        })
    }

    /// Softmax cross-entropy loss of `x` against `label`.
    pub fn cross_entropy_loss(&self, x: &Tensor, label: usize) -> Result<f64> {
        self.check_class(label)?;
        let logits = self.forward_logits(x)?;
        let z = logits.data();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        Ok(log_sum - (z[label] - max))
    }

    /// Cross-entropy gradients for every layer's weights and biases.
    pub fn cross_entropy_param_grads(&self, x: &Tensor, label: usize) -> Result<Vec<LayerGrads>> {
        self.check_class(label)?;
        let trace = self.forward_trace(x)?;
        let z = trace.last().unwrap();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let mut d_logits: Vec<f64> = z.iter().map(|v| (v - max).exp() / sum).collect();
        d_logits[label] -= 1.0;
        let (grads, _) = self.backprop_params(&trace, &d_logits);
        Ok(grads)
    }

    /// Fraction of examples classified to their label.
    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        let mut correct = 0usize;
        for (x, &label) in data.examples.iter().zip(&data.labels) {
            if self.classify(x)? == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.examples.len() as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
            out.push(layer.activation.code());
            for w in layer.weights.data() {
                out.extend_from_slice(&w.to_le_bytes());
            }
            for b in layer.biases.data() {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut off = 0usize;
        let magic = take(bytes, &mut off, 4, "magic")?;
        if magic != WEIGHT_MAGIC {
            return Err(Error::parse(0, format!("bad magic {magic:?}, expected \"NNW1\"")));
        }
        let layer_count = read_u32_le(bytes, &mut off, "layer count")?;
        if layer_count == 0 {
            return Err(Error::parse(4, "layer count must be positive"));
        }
        let mut layers = Vec::with_capacity(layer_count as usize);
        let mut prev_out: Option<u32> = None;
        for k in 0..layer_count {
            let in_off = off;
            let in_dim = read_u32_le(bytes, &mut off, "in_dim")?;
            let out_off = off;
            let out_dim = read_u32_le(bytes, &mut off, "out_dim")?;
            let act_off = off;
            let act_code = read_u8(bytes, &mut off, "activation")?;
            if in_dim == 0 || out_dim == 0 {
                return Err(Error::parse(
                    in_off,
                    format!("layer {k} has zero dimension {in_dim}x{out_dim}"),
                ));
            }
            if let Some(prev) = prev_out {
                if prev != in_dim {
                    return Err(Error::parse(
                        in_off,
                        format!("layer {k} in_dim {in_dim} does not chain from previous out_dim {prev}"),
                    ));
                }
            }
            let activation = Activation::from_code(act_code).ok_or_else(|| {
                Error::parse(act_off, format!("unknown activation code {act_code}"))
            })?;
            let is_last = k + 1 == layer_count;
            if is_last && activation != Activation::Identity {
                return Err(Error::parse(act_off, "output layer must be identity"));
            }
            if is_last && out_dim < 2 {
                return Err(Error::parse(
                    out_off,
                    format!("output layer needs at least 2 classes, got {out_dim}"),
                ));
            }
            let n_weights = (in_dim as usize)
                .checked_mul(out_dim as usize)
                .ok_or_else(|| Error::parse(in_off, "implausible layer size"))?;
            let mut weights = Vec::with_capacity(n_weights);
            for _ in 0..n_weights {
                weights.push(read_f64_le(bytes, &mut off, "weight")?);
            }
            let mut biases = Vec::with_capacity(out_dim as usize);
            for _ in 0..out_dim {
                biases.push(read_f64_le(bytes, &mut off, "bias")?);
            }
            layers.push(Layer::new(
                Tensor::matrix(out_dim as usize, in_dim as usize, weights)
                    .map_err(|e| Error::parse(in_off, format!("layer {k}: {e}")))?,
                Tensor::from_vec(biases),
                activation,
            )?);
            prev_out = Some(out_dim);
        }
        if off != bytes.len() {
            return Err(Error::parse(
                off,
                format!("{} trailing bytes after last layer", bytes.len() - off),
            ));
        }
        MlpModel::new(layers)
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Argmax with ties broken by the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Returns (hinge value, active runner-up index). The index is `None` exactly
/// when the hinge is floored at −κ (strictly below the kink).
fn hinge_from_logits(logits: &[f64], t: usize, kappa: f64) -> (f64, Option<usize>) {
    let mut runner_up = None;
    let mut best = f64::NEG_INFINITY;
    for (i, z) in logits.iter().enumerate() {
        if i != t && *z > best {
            best = *z;
            runner_up = Some(i);
        }
    }
    let runner_up = runner_up.expect("at least 2 classes");
    let diff = best - logits[t];
    if diff >= -kappa {
        (diff, Some(runner_up))
    } else {
        (-kappa, None)
    }
}

/// Mini-batch Adam training on softmax cross-entropy. Shuffling draws from
/// `cfg.seed`, so the whole run is a pure function of (model, data, cfg).
pub fn train_classifier(
    model: MlpModel,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<MlpModel> {
    if data.examples.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidArgument(
            "epochs, batch_size and learning_rate must be positive".into(),
        ));
    }
    for &label in &data.labels {
        if label >= model.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                model.num_classes()
            )));
        }
    }

    let mut model = model;
    let mut rng = SeededRng::new(cfg.seed);
    let mut adam: Vec<(AdamState, AdamState)> = model
        .layers
        .iter()
        .map(|l| {
            (
                AdamState::for_params(&l.weights, cfg.learning_rate),
                AdamState::for_params(&l.biases, cfg.learning_rate),
            )
        })
        .collect();

    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<LayerGrads>> = None;
            for &idx in batch {
                let grads = model.cross_entropy_param_grads(&data.examples[idx], data.labels[idx])?;
                acc = Some(match acc {
                    None => grads,
                    Some(mut sums) => {
                        for (sum, g) in sums.iter_mut().zip(&grads) {
                            sum.d_weights = sum.d_weights.add(&g.d_weights)?;
                            sum.d_biases = sum.d_biases.add(&g.d_biases)?;
                        }
                        sums
                    }
                });
            }
            let scale = 1.0 / batch.len() as f64;
            let sums = acc.expect("non-empty batch");
            for (k, g) in sums.into_iter().enumerate() {
                let (w_state, b_state) = adam[k].clone();
                let (w_state, new_w) =
                    adam_step(w_state, &model.layers[k].weights, &g.d_weights.scale(scale))?;
                let (b_state, new_b) =
                    adam_step(b_state, &model.layers[k].biases, &g.d_biases.scale(scale))?;
                adam[k] = (w_state, b_state);
                model.layers[k].weights = new_w;
                model.layers[k].biases = new_b;
            }
        }
    }
    Ok(model)
}

/// Mean cross-entropy loss over a dataset.
pub fn mean_ce_loss(model: &MlpModel, data: &LabeledDataset) -> Result<f64> {
    let mut total = 0.0;
    for (x, &label) in data.examples.iter().zip(&data.labels) {
        total += model.cross_entropy_loss(x, label)?;
    }
    Ok(total / data.examples.len() as f64)
}

/// Single identity layer over `dim` inputs, so Z(x) = x. Used throughout the
/// tests as the simplest model with an analytic decision boundary.
pub fn identity_model(dim: usize) -> MlpModel {
    let mut weights = vec![0.0; dim * dim];
    for i in 0..dim {
        weights[i * dim + i] = 1.0;
    }
    MlpModel::new(vec![Layer::new(
        Tensor::matrix(dim, dim, weights).unwrap(),
        Tensor::zeros(dim),
        Activation::Identity,
    )
    .unwrap()])
    .unwrap()
}
