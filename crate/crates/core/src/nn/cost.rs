//! Analytic operation counts for dense autoencoders. [`estimate_cost`] is
//! exact for any shape; [`uniform_forward_mults`] is the square-layer special
//! case.

use serde::{Deserialize, Serialize};

use super::network::validate_shape;
use crate::error::Result;

/// Exponent of the training-time upper bound for uniform networks.
pub const ASYMPTOTIC_EXPONENT: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEstimate {
    /// `sum over layers of out * in`.
    pub mult_forward_per_sample: u64,
    /// `mult_forward_per_sample * n_samples`.
    pub mult_forward_total: u64,
    /// One activation evaluation per output unit per sample.
    pub activation_ops: u64,
    /// Multiplications in the backward kernels: weight gradients for every
    /// layer, input gradients for every layer but the first, one activation
    /// derivative per unit.
    pub backward_ops: u64,
    pub asymptotic_exponent: u32,
}

impl CostEstimate {
    /// Forward + activation + backward operations for one pass over the samples.
    pub fn training_ops(&self) -> u64 {
        self.mult_forward_total + self.activation_ops + self.backward_ops
    }
}

pub fn estimate_cost(shape: &[usize], n_samples: u64) -> Result<CostEstimate> {
    validate_shape(shape)?;
    let mut fwd = 0u64;
    let mut units = 0u64;
    let mut input_grad = 0u64;
    for (t, w) in shape.windows(2).enumerate() {
        let m = (w[0] * w[1]) as u64;
        fwd += m;
        units += w[1] as u64;
        if t > 0 {
            input_grad += m;
        }
    }
    Ok(CostEstimate {
        mult_forward_per_sample: fwd,
        mult_forward_total: fwd * n_samples,
        activation_ops: units * n_samples,
        backward_ops: (fwd + input_grad + units) * n_samples,
        asymptotic_exponent: ASYMPTOTIC_EXPONENT,
    })
}

/// `n_layers * width^3`: forward multiplications of `n_layers` square layers
/// of the given width over a batch of `width` samples.
pub fn uniform_forward_mults(n_layers: u64, width: u64) -> u64 {
    n_layers * width * width * width
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_shape_by_hand() {
        let c = estimate_cost(&[2, 3, 2], 1).unwrap();
        assert_eq!(c.mult_forward_per_sample, 12);
        assert_eq!(c.activation_ops, 5);
        // weight grads 12 + input grads of layer 2 (6) + 5 derivatives
        assert_eq!(c.backward_ops, 23);
        assert_eq!(c.asymptotic_exponent, 5);
    }

    #[test]
    fn uniform_closed_form_over_width_samples() {
        // four 60x60 layers, 60 samples
        let c = estimate_cost(&[60; 5], 60).unwrap();
        assert_eq!(c.mult_forward_total, 864_000);
        assert_eq!(uniform_forward_mults(4, 60), 864_000);
        assert_eq!(c.mult_forward_per_sample, 4 * 60 * 60);
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(estimate_cost(&[4, 4], 1).is_err());
        assert!(estimate_cost(&[4, 0, 4], 1).is_err());
    }
}
