//! Dense layer: `a = activation(x W^T + b)`, weights row-major `out_dim x in_dim`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + libm::exp(-z))
                } else {
                    let e = libm::exp(z);
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => libm::tanh(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    /// ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "tanh" => Some(Activation::Tanh),
            "identity" | "linear" => Some(Activation::Identity),
            _ => None,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Tanh => 2,
            Activation::Identity => 3,
        }
    }
}

/// Weight initialization scheme. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// i.i.d. uniform on `[-1, 1]`.
    UniformPm1,
    /// i.i.d. uniform on `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`.
    UniformScaled,
}

impl Init {
    pub fn bound(self, in_dim: usize) -> f64 {
        match self {
            Init::UniformPm1 => 1.0,
            Init::UniformScaled => 1.0 / libm::sqrt(in_dim as f64),
        }
    }
}

/// Where a layer's parameters came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Origin {
    Fresh,
    /// Copied from dense layer `layer` of trained edge model `model` (1-based).
    Edge { model: usize, layer: usize },
    /// Block-diagonal composite of `blocks` equal-shape edge layers at widened
    /// position `position` (1-based); cross-block weights are fresh.
    EdgeBlocks { position: usize, blocks: usize },
    /// Input layers of `blocks` edge models stacked over the shared input.
    EdgeFanOut { blocks: usize },
    /// Mean of the output layers of `blocks` edge models over their
    /// concatenated inputs.
    EdgeAverage { blocks: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
    origin: Origin,
}

impl DenseLayer {
    pub fn new_random<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new_uniform(in_dim, out_dim, activation, init.bound(in_dim), rng)
    }

    /// Weights uniform on `[-bound, bound]`, zero biases.
    pub fn new_uniform<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        bound: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "layer dims must be positive, got {in_dim}x{out_dim}"
            )));
        }
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::Config(format!("invalid init bound {bound}")));
        }
        let mut weights = vec![0.0; in_dim * out_dim];
        if bound > 0.0 {
            let dist = Uniform::new_inclusive(-bound, bound)
                .map_err(|e| Error::Config(format!("{e}")))?;
            for w in &mut weights {
                *w = dist.sample(rng);
            }
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            biases: vec![0.0; out_dim],
            activation,
            origin: Origin::Fresh,
        })
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
        origin: Origin,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "layer dims must be positive, got {in_dim}x{out_dim}"
            )));
        }
        if weights.len() != in_dim * out_dim {
            return Err(shape_err("layer weights", in_dim * out_dim, weights.len()));
        }
        if biases.len() != out_dim {
            return Err(shape_err("layer biases", out_dim, biases.len()));
        }
        if !weights.iter().chain(&biases).all(|v| v.is_finite()) {
            return Err(Error::Config("layer parameters must be finite".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            biases,
            activation,
            origin,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// Parameters carried over from trained edge layers, per the origin tag.
    pub fn pretrained_param_count(&self) -> usize {
        match self.origin {
            Origin::Fresh => 0,
            Origin::Edge { .. } | Origin::EdgeFanOut { .. } | Origin::EdgeAverage { .. } => self.param_count(),
            Origin::EdgeBlocks { blocks, .. } if blocks > 0 => {
                self.weights.len() / blocks + self.biases.len()
            }
            Origin::EdgeBlocks { .. } => 0,
        }
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.biases)
    }

    /// Copy of this layer re-tagged as coming from edge model `model`, layer `layer`.
    pub fn copied_from_edge(&self, model: usize, layer: usize) -> Self {
        let mut l = self.clone();
        l.origin = Origin::Edge { model, layer };
        l
    }

    /// `sum_j w_j` over this layer's weights (biases excluded).
    pub fn signed_weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `sum_j |w_j|` over this layer's weights.
    pub fn l1_weight_sum(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    /// SHA-256 over dims, activation and the raw bits of every parameter.
    /// The origin tag is not part of the hash.
    pub fn param_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.in_dim as u64).to_le_bytes());
        h.update((self.out_dim as u64).to_le_bytes());
        h.update([self.activation.tag()]);
        for v in self.weights.iter().chain(&self.biases) {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(Activation::Sigmoid.apply(1000.0), 1.0);
        assert_eq!(Activation::Sigmoid.apply(-1000.0), 0.0);
        assert!((Activation::Sigmoid.apply(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scaled_init_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = DenseLayer::new_random(16, 8, Activation::Tanh, Init::UniformScaled, &mut rng)
            .unwrap();
        assert!(l.weights().iter().all(|w| w.abs() <= 0.25));
        assert!(l.biases().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn hash_ignores_origin_but_not_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = DenseLayer::new_random(3, 2, Activation::Relu, Init::UniformPm1, &mut rng)
            .unwrap();
        let c = l.copied_from_edge(2, 1);
        assert_eq!(l.param_hash(), c.param_hash());
        let mut m = l.clone();
        m.params_mut().1[0] = 1e-300;
        assert_ne!(l.param_hash(), m.param_hash());
    }

    #[test]
    fn from_parts_rejects_non_finite() {
        let e = DenseLayer::from_parts(
            1,
            1,
            vec![f64::NAN],
            vec![0.0],
            Activation::Identity,
            Origin::Fresh,
        );
        assert!(e.is_err());
    }
}
