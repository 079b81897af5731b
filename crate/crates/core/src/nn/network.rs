//! Stack of dense layers forming an autoencoder, with forward and backward passes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layer::{Activation, DenseLayer};
use super::loss::rmse_loss;
use super::train::TrainConfig;
use crate::error::{shape_err, Error, Result};
use crate::matrix::{accumulate_weight_grad, affine, backprop_input, Matrix, MulCounter};
use crate::rng::{stream_rng, STREAM_INIT};

/// Hidden-layer and output-layer activation of a network built by [`init_network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activations {
    pub hidden: Activation,
    pub output: Activation,
}

impl Activations {
    pub const fn new(hidden: Activation, output: Activation) -> Self {
        Self { hidden, output }
    }
}

impl From<Activation> for Activations {
    fn from(a: Activation) -> Self {
        Self::new(a, a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<DenseLayer>,
    #[serde(skip)]
    generation: u64,
}

impl Network {
    /// Checks that adjacent layers chain and that the network reconstructs
    /// its input (`first.in_dim == last.out_dim`).
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (t, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(shape_err(
                    format!("layer {} input", t + 1),
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        let first = layers[0].in_dim();
        let last = layers[layers.len() - 1].out_dim();
        if first != last {
            return Err(shape_err("autoencoder output width", first, last));
        }
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    #[inline]
    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Number of dense layers.
    #[inline]
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `[input, h1, ..., output]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.layers.len() + 1);
        w.push(self.input_dim());
        w.extend(self.layers.iter().map(DenseLayer::out_dim));
        w
    }

    /// Width of the narrowest hidden representation (the code).
    pub fn code_size(&self) -> usize {
        let w = self.widths();
        if w.len() <= 2 {
            return w[0];
        }
        w[1..w.len() - 1].iter().copied().min().unwrap_or(w[0])
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Dense indices of the hidden layers: every layer but the output one.
    pub fn hidden_layer_indices(&self) -> core::ops::Range<usize> {
        0..self.layers.len().saturating_sub(1)
    }

    /// Bumped on every parameter mutation; forward caches record it.
    #[inline]
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub(crate) fn layer_params_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        self.generation = self.generation.wrapping_add(1);
        self.layers[i].params_mut()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights().iter().chain(l.biases()).all(|v| v.is_finite()))
    }

    /// SHA-256 over every layer's parameter hash, in order.
    pub fn param_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for l in &self.layers {
            h.update(l.param_hash());
        }
        h.finalize().into()
    }

    /// Forward pass keeping the per-layer intermediates needed by [`Network::backward`].
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(batch)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(batch.clone());
        for layer in &self.layers {
            let z = affine(
                acts.last().expect("non-empty"),
                layer.weights(),
                layer.biases(),
                layer.out_dim(),
                &mut (),
            );
            let mut a = z.clone();
            let act = layer.activation();
            for v in a.as_mut_slice() {
                *v = act.apply(*v);
            }
            pre.push(z);
            acts.push(a);
        }
        let out = acts.last().expect("non-empty").clone();
        Ok((
            out,
            ForwardCache {
                generation: self.generation,
                acts,
                pre,
            },
        ))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward_with(batch, &mut ())
    }

    /// Forward pass that also counts every scalar multiplication performed
    /// by the affine kernels.
    pub fn forward_counting(&self, batch: &Matrix) -> Result<(Matrix, u64)> {
        let mut n = 0u64;
        let out = self.forward_with(batch, &mut n)?;
        Ok((out, n))
    }

    fn forward_with<C: MulCounter>(&self, batch: &Matrix, counter: &mut C) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut z = affine(&x, layer.weights(), layer.biases(), layer.out_dim(), counter);
            let act = layer.activation();
            for v in z.as_mut_slice() {
                *v = act.apply(*v);
            }
            x = z;
        }
        Ok(x)
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(shape_err("layer 0 input", self.input_dim(), batch.cols()));
        }
        Ok(())
    }

    /// Gradients of `RMSE(output, targets) + (lambda/2) * sum w^2` with
    /// respect to every weight and bias.
    ///
    /// The batch RMSE over `count = rows * cols` elements has
    /// `dL/dy = (y - t) / (count * L)`, i.e. the `1/(2 L count)` chain factor
    /// times `d(e^2)/de = 2e`. At `L == 0` the gradient is taken as zero.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        targets: &Matrix,
        lambda: f64,
    ) -> Result<(f64, Gradients)> {
        if cache.generation != self.generation || cache.pre.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let out = cache.acts.last().expect("non-empty");
        if targets.rows() != out.rows() {
            return Err(shape_err("target rows", out.rows(), targets.rows()));
        }
        if targets.cols() != out.cols() {
            return Err(shape_err("target columns", out.cols(), targets.cols()));
        }
        let loss = rmse_loss(out, targets)?;
        let count = (out.rows() * out.cols()) as f64;

        let mut delta = Matrix::zeros(out.rows(), out.cols());
        if loss > 0.0 {
            let scale = 1.0 / (count * loss);
            for ((d, y), t) in delta
                .as_mut_slice()
                .iter_mut()
                .zip(out.as_slice())
                .zip(targets.as_slice())
            {
                *d = (y - t) * scale;
            }
        }

        let mut grads: Vec<LayerGrad> = self
            .layers
            .iter()
            .map(|l| LayerGrad {
                weights: vec![0.0; l.weights().len()],
                biases: vec![0.0; l.biases().len()],
            })
            .collect();

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let act = layer.activation();
            let z = &cache.pre[li];
            let a = &cache.acts[li + 1];
            for ((d, &zv), &av) in delta
                .as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .zip(a.as_slice())
            {
                *d *= act.derivative(zv, av);
            }
            let g = &mut grads[li];
            accumulate_weight_grad(&delta, &cache.acts[li], &mut g.weights, &mut g.biases);
            if lambda != 0.0 {
                for (gw, w) in g.weights.iter_mut().zip(layer.weights()) {
                    *gw += lambda * w;
                }
            }
            if li > 0 {
                delta = backprop_input(&delta, layer.weights(), layer.in_dim());
            }
        }
        Ok((loss, Gradients { layers: grads }))
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl ForwardCache {
    pub fn activations(&self) -> &[Matrix] {
        &self.acts
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights().len()],
                    biases: vec![0.0; l.biases().len()],
                })
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(&g.biases))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Builds an autoencoder with widths `shape = [d, h1, ..., hk, d]`.
///
/// Weights follow `config.init`, biases are zero, every layer is `Fresh`.
/// Hidden layers use `activations.hidden`, the last layer `activations.output`.
pub fn init_network(
    shape: &[usize],
    activations: impl Into<Activations>,
    config: &TrainConfig,
) -> Result<Network> {
    validate_shape(shape)?;
    let acts = activations.into();
    let mut rng = stream_rng(config.seed, STREAM_INIT);
    let n = shape.len() - 1;
    let mut layers = Vec::with_capacity(n);
    for t in 0..n {
        let act = if t + 1 == n { acts.output } else { acts.hidden };
        layers.push(DenseLayer::new_random(
            shape[t],
            shape[t + 1],
            act,
            config.init,
            &mut rng,
        )?);
    }
    Network::from_layers(layers)
}

pub(crate) fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.len() < 3 {
        return Err(Error::Config(format!(
            "network shape needs at least 3 widths, got {}",
            shape.len()
        )));
    }
    if let Some(p) = shape.iter().position(|&w| w == 0) {
        return Err(Error::Config(format!("width at position {p} is zero")));
    }
    Ok(())
}
