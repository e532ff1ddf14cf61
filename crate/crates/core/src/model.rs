//! A small fully-connected feature extractor with exact reverse-mode
//! gradients, the feature-level knowledge-distillation loss, rotation
//! pseudo-class augmentation, and total-loss assembly.
//!
//! The extractor maps an input vector to an n-dimensional feature; the
//! quantizer losses differentiate through it via [`FeatureModel::backward`].
//! No autodiff framework is involved: every gradient is written out by
//! hand and pinned by finite-difference tests.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{distance, distance_grad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Linear => v,
        }
    }

    /// Derivative as a function of the pre-activation; the ReLU kink at 0
    /// takes the subgradient 0.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One affine layer `act(W x + b)` with `W` stored row-major
/// (`out_dim × in_dim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::contract(format!(
                "layer shape mismatch: {}x{} needs {} weights and {} biases, got {} and {}",
                out_dim,
                in_dim,
                in_dim * out_dim,
                out_dim,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Layer {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    fn forward_into(&self, input: &[f64], pre: &mut Vec<f64>, out: &mut Vec<f64>) {
        pre.clear();
        out.clear();
        for i in 0..self.out_dim {
            let row = &self.weights[i * self.in_dim..(i + 1) * self.in_dim];
            let mut acc = self.bias[i];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            pre.push(acc);
            out.push(self.activation.apply(acc));
        }
    }
}

/// A feed-forward feature extractor. `snapshot_id` changes on every
/// parameter update; forward caches are tied to it so gradients can never
/// be computed against stale activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<Layer>,
    snapshot_id: u64,
}

/// Activations recorded by a cached forward pass, consumed by
/// [`FeatureModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    snapshot_id: u64,
    input: Vec<f64>,
    preacts: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache from a non-empty model")
    }
}

/// Gradients for every layer of a model, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(model: &FeatureModel) -> Self {
        ModelGrads {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &ModelGrads, c: f64) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += c * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += c * y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= c);
            l.bias.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| *v == 0.0))
    }
}

impl FeatureModel {
    /// Builds a model from explicit layers, validating the dimension
    /// chain.
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("model needs at least one layer".to_string()));
        }
        let mut dim = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim != dim {
                return Err(Error::contract(format!(
                    "layer {i} expects input dim {}, previous layer produces {dim}",
                    l.in_dim
                )));
            }
            dim = l.out_dim;
        }
        Ok(FeatureModel {
            input_dim,
            output_dim: dim,
            layers,
            snapshot_id: 0,
        })
    }

    /// Standard MLP: ReLU hidden layers, linear output, weights drawn
    /// from zero-mean Gaussians scaled by `sqrt(2 / fan_in)` (hidden) or
    /// `sqrt(1 / fan_in)` (output), zero biases.
    pub fn new_mlp(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::config(
                "backbone",
                "all layer sizes must be positive".to_string(),
            ));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut in_dim = input_dim;
        for &h in hidden {
            layers.push(Self::random_layer(in_dim, h, Activation::Relu, rng)?);
            in_dim = h;
        }
        layers.push(Self::random_layer(in_dim, output_dim, Activation::Linear, rng)?);
        Self::from_layers(input_dim, layers)
    }

    fn random_layer(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Layer> {
        let gain = match activation {
            Activation::Relu => 2.0,
            Activation::Linear => 1.0,
        };
        let normal = Normal::new(0.0, (gain / in_dim as f64).sqrt())
            .map_err(|e| Error::Numeric(e.to_string()))?;
        let weights: Vec<f64> = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
        Layer::new(in_dim, out_dim, weights, vec![0.0; out_dim], activation)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn snapshot_id(&self) -> u64 {
        self.snapshot_id
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Weight count of one layer. This and the `nudge_*` methods exist
    /// for finite-difference gradient diagnostics; they panic on an
    /// out-of-range layer index.
    pub fn layer_weight_count(&self, layer: usize) -> usize {
        self.layers[layer].weights.len()
    }

    pub fn layer_bias_count(&self, layer: usize) -> usize {
        self.layers[layer].bias.len()
    }

    /// Adds `delta` to a single weight, invalidating outstanding caches.
    pub fn nudge_weight(&mut self, layer: usize, index: usize, delta: f64) {
        self.layers[layer].weights[index] += delta;
        self.snapshot_id += 1;
    }

    /// Adds `delta` to a single bias entry, invalidating outstanding
    /// caches.
    pub fn nudge_bias(&mut self, layer: usize, index: usize, delta: f64) {
        self.layers[layer].bias[index] += delta;
        self.snapshot_id += 1;
    }

    /// The last layer's parameters, viewed as a classification head:
    /// row-major weights and the bias vector.
    pub fn head_parameters(&self) -> (&[f64], &[f64]) {
        let last = self.layers.last().expect("models have at least one layer");
        (&last.weights, &last.bias)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass that records every pre- and post-activation for a
    /// later backward pass.
    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if x.len() != self.input_dim {
            return Err(Error::contract(format!(
                "input dim {} != model input dim {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut current = x;
        for layer in &self.layers {
            let mut pre = Vec::new();
            let mut out = Vec::new();
            layer.forward_into(current, &mut pre, &mut out);
            preacts.push(pre);
            acts.push(out);
            current = acts.last().unwrap();
        }
        let z = acts.last().unwrap().clone();
        Ok((
            z,
            ForwardCache {
                snapshot_id: self.snapshot_id,
                input: x.to_vec(),
                preacts,
                acts,
            },
        ))
    }

    /// Reverse-mode pass: given `dL/dz`, returns gradients for every
    /// parameter and for the input. The cache must come from a forward
    /// pass on the current parameters.
    pub fn backward(
        &self,
        upstream: &[f64],
        cache: &ForwardCache,
    ) -> Result<(ModelGrads, Vec<f64>)> {
        if cache.snapshot_id != self.snapshot_id {
            return Err(Error::contract(
                "stale forward cache: parameters changed since the forward pass".to_string(),
            ));
        }
        if upstream.len() != self.output_dim {
            return Err(Error::contract(format!(
                "upstream gradient dim {} != output dim {}",
                upstream.len(),
                self.output_dim
            )));
        }
        let mut grads = ModelGrads::zeros_like(self);
        let mut dl_dout = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.preacts[l];
            let input: &[f64] = if l == 0 { &cache.input } else { &cache.acts[l - 1] };
            let dl_dpre: Vec<f64> = dl_dout
                .iter()
                .zip(pre)
                .map(|(g, p)| g * layer.activation.derivative(*p))
                .collect();
            let lg = &mut grads.layers[l];
            for i in 0..layer.out_dim {
                let g = dl_dpre[i];
                lg.bias[i] += g;
                let row = &mut lg.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (slot, x) in row.iter_mut().zip(input) {
                    *slot += g * x;
                }
            }
            let mut dl_din = vec![0.0; layer.in_dim];
            for i in 0..layer.out_dim {
                let g = dl_dpre[i];
                let row = &layer.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (slot, w) in dl_din.iter_mut().zip(row) {
                    *slot += g * w;
                }
            }
            dl_dout = dl_din;
        }
        Ok((grads, dl_dout))
    }

    /// One gradient-descent step on all parameters. Shapes must match;
    /// the snapshot id advances so outstanding caches become stale.
    pub fn apply_gradients(&mut self, grads: &ModelGrads, lr: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::contract("gradient layer count mismatch".to_string()));
        }
        for (layer, g) in self.layers.iter().zip(&grads.layers) {
            if g.weights.len() != layer.weights.len() || g.bias.len() != layer.bias.len() {
                return Err(Error::contract("gradient shape mismatch".to_string()));
            }
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= lr * gw;
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
        self.snapshot_id += 1;
        Ok(())
    }
}

/// Feature-level knowledge distillation: the mean smoothed Euclidean
/// distance between the previous and current extractor's features on a
/// batch. Gradients flow only into the current model; the previous model
/// is a frozen snapshot.
pub fn loss_kd(
    batch: &[Vec<f64>],
    model_prev: &FeatureModel,
    model_cur: &FeatureModel,
) -> Result<(f64, ModelGrads)> {
    if model_prev.input_dim != model_cur.input_dim
        || model_prev.output_dim != model_cur.output_dim
    {
        return Err(Error::contract(
            "distillation models must share input and output dims".to_string(),
        ));
    }
    if batch.is_empty() {
        return Err(Error::contract(
            "knowledge distillation needs a non-empty batch".to_string(),
        ));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads = ModelGrads::zeros_like(model_cur);
    for x in batch {
        let z_prev = model_prev.forward(x)?;
        let (z_cur, cache) = model_cur.forward_cached(x)?;
        let d = distance(&z_cur, &z_prev);
        total += d;
        let upstream: Vec<f64> = distance_grad(&z_cur, &z_prev, d)
            .into_iter()
            .map(|g| g * scale)
            .collect();
        let (g, _) = model_cur.backward(&upstream, &cache)?;
        grads.add_scaled(&g, 1.0);
    }
    Ok((total * scale, grads))
}

/// Scalar loss weights for the prototype and distillation terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.3,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1.is_finite() && self.lambda1 >= 0.0) {
            return Err(Error::config(
                "lambda1",
                format!("must be finite and >= 0, got {}", self.lambda1),
            ));
        }
        if !(self.lambda2.is_finite() && self.lambda2 >= 0.0) {
            return Err(Error::config(
                "lambda2",
                format!("must be finite and >= 0, got {}", self.lambda2),
            ));
        }
        Ok(())
    }
}

/// Combines the loss terms for task `t`: the first task trains on
/// `dce + na` alone, later tasks add the weighted prototype terms and
/// distillation: `dce + λ1·hat_dce + na + hat_na + λ2·kd`. The prototype
/// and distillation terms must be present exactly when `t > 0`.
pub fn total_loss(
    dce: f64,
    na: f64,
    proto_terms: Option<(f64, f64)>,
    kd: Option<f64>,
    weights: &LossWeights,
    t: usize,
) -> Result<f64> {
    weights.validate()?;
    match (t, proto_terms, kd) {
        (0, None, None) => Ok(dce + na),
        (0, _, _) => Err(Error::contract(
            "prototype/distillation terms are undefined on the first task".to_string(),
        )),
        (_, Some((hat_dce, hat_na)), Some(kd)) => {
            Ok(dce + weights.lambda1 * hat_dce + na + hat_na + weights.lambda2 * kd)
        }
        _ => Err(Error::contract(
            "later tasks require prototype and distillation terms".to_string(),
        )),
    }
}

/// A square pixel grid with its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSample {
    pub pixels: Vec<Vec<f64>>,
    pub label: usize,
}

impl GridSample {
    pub fn flatten(&self) -> Vec<f64> {
        self.pixels.iter().flatten().copied().collect()
    }
}

/// One 90° clockwise rotation: `out[i][j] = in[H-1-j][i]`.
pub fn rotate_cw(pixels: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let h = pixels.len();
    if pixels.iter().any(|row| row.len() != h) {
        return Err(Error::contract(
            "rotation requires a square grid".to_string(),
        ));
    }
    Ok((0..h)
        .map(|i| (0..h).map(|j| pixels[h - 1 - j][i]).collect())
        .collect())
}

/// Expands each sample into four pseudo-class samples: `k` clockwise
/// quarter-turns map label `y` to `y·4 + k`, growing the trained label
/// universe from `p` to `4p` classes. Evaluation later restricts to the
/// original labels.
pub fn rotate_augment(batch: &[GridSample], p: usize) -> Result<Vec<GridSample>> {
    let mut out = Vec::with_capacity(batch.len() * 4);
    for sample in batch {
        if sample.label >= p {
            return Err(Error::contract(format!(
                "label {} outside the {p} original classes",
                sample.label
            )));
        }
        let mut pixels = sample.pixels.clone();
        for k in 0..4 {
            if k > 0 {
                pixels = rotate_cw(&pixels)?;
            } else if pixels.iter().any(|row| row.len() != pixels.len()) {
                return Err(Error::contract(
                    "rotation requires a square grid".to_string(),
                ));
            }
            out.push(GridSample {
                pixels: pixels.clone(),
                label: sample.label * 4 + k,
            });
        }
    }
    Ok(out)
}
