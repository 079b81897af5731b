//! Adam and plain SGD parameter updates.

use alloc::vec;
use alloc::vec::Vec;

use super::network::{Gradients, LayerGrad, Network};
use super::train::TrainConfig;
use crate::error::{shape_err, Result};

/// First and second moment accumulators mirroring the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
    t: u64,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        let zeros = || {
            net.layers()
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights().len()],
                    biases: vec![0.0; l.biases().len()],
                })
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[LayerGrad] {
        &self.m
    }

    pub fn second_moments(&self) -> &[LayerGrad] {
        &self.v
    }

    fn check(&self, net: &Network) -> Result<()> {
        if self.m.len() != net.depth() {
            return Err(shape_err("adam state layers", net.depth(), self.m.len()));
        }
        for (i, (m, l)) in self.m.iter().zip(net.layers()).enumerate() {
            if m.weights.len() != l.weights().len() || m.biases.len() != l.biases().len() {
                return Err(shape_err(
                    alloc::format!("adam state layer {i}"),
                    l.param_count(),
                    m.weights.len() + m.biases.len(),
                ));
            }
        }
        Ok(())
    }
}

fn check_grads(net: &Network, grads: &Gradients) -> Result<()> {
    if grads.layers.len() != net.depth() {
        return Err(shape_err("gradient layers", net.depth(), grads.layers.len()));
    }
    for (i, (g, l)) in grads.layers.iter().zip(net.layers()).enumerate() {
        if g.weights.len() != l.weights().len() || g.biases.len() != l.biases().len() {
            return Err(shape_err(
                alloc::format!("gradient layer {i}"),
                l.param_count(),
                g.weights.len() + g.biases.len(),
            ));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    net: &mut Network,
    grads: &Gradients,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    check_grads(net, grads)?;
    state.check(net)?;
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let t = state.t as f64;
    let c1 = 1.0 - libm::pow(b1, t);
    let c2 = 1.0 - libm::pow(b2, t);
    let lr = config.learning_rate;
    let eps = config.epsilon;

    for li in 0..net.depth() {
        let g = &grads.layers[li];
        let m = &mut state.m[li];
        let v = &mut state.v[li];
        let (w, b) = net.layer_params_mut(li);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        };
        update(w, &g.weights, &mut m.weights, &mut v.weights);
        update(b, &g.biases, &mut m.biases, &mut v.biases);
    }
    Ok(())
}

/// `p <- p - lr * g`.
pub fn sgd_step(net: &mut Network, grads: &Gradients, lr: f64) -> Result<()> {
    check_grads(net, grads)?;
    for li in 0..net.depth() {
        let g = &grads.layers[li];
        let (w, b) = net.layer_params_mut(li);
        for (p, gv) in w.iter_mut().zip(&g.weights) {
            *p -= lr * gv;
        }
        for (p, gv) in b.iter_mut().zip(&g.biases) {
            *p -= lr * gv;
        }
    }
    Ok(())
}
