//! Mini-batch training loop and its per-epoch trace.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layer::Init;
use super::loss::rmse_loss;
use super::network::Network;
use super::optim::{adam_step, sgd_step, AdamState};
use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 factor; adds `lambda * w` to every weight gradient.
    pub lambda: f64,
    /// Recorded only. No penalty is applied.
    pub sparsity: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub init: Init,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 0.005,
            beta1: 0.8,
            beta2: 0.9,
            epsilon: 1e-8,
            lambda: 1e-8,
            sparsity: 0.2,
            batch_size: Some(32),
            seed: 0,
            init: Init::UniformPm1,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.validate_hyper()
    }

    pub(crate) fn validate_hyper(&self) -> Result<()> {
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(Error::Config(format!("beta1 must be in (0,1), got {}", self.beta1)));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::Config(format!("beta2 must be in (0,1), got {}", self.beta2)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Signed and absolute weight sums of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSums {
    pub signed: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// RMSE accumulated over the epoch's mini-batches (before each update).
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
    /// One entry per dense layer, taken after the epoch's last update.
    pub layer_sums: Vec<LayerSums>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_rmse).collect()
    }

    /// Validation losses; epochs without a validation value are skipped.
    pub fn val_losses(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.val_rmse).collect()
    }

    pub fn min_val(&self) -> Option<f64> {
        self.val_losses().into_iter().reduce(f64::min)
    }
}

pub fn layer_sums(net: &Network) -> Vec<LayerSums> {
    net.layers()
        .iter()
        .map(|l| LayerSums {
            signed: l.signed_weight_sum(),
            l1: l.l1_weight_sum(),
        })
        .collect()
}

/// Optimizer state carried between calls of [`fit`].
#[derive(Debug, Clone)]
pub enum OptimState {
    Adam(AdamState),
    Sgd,
}

impl OptimState {
    pub fn new(net: &Network, optimizer: Optimizer) -> Self {
        match optimizer {
            Optimizer::Adam => OptimState::Adam(AdamState::new(net)),
            Optimizer::Sgd => OptimState::Sgd,
        }
    }
}

/// Trains an autoencoder (targets = inputs) for exactly `config.epochs` epochs.
///
/// Epoch `e` (1-based) shuffles rows with stream `e - 1` of `config.seed`.
pub fn train(
    net: &mut Network,
    train_data: &Matrix,
    val_data: &Matrix,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    if val_data.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut state = OptimState::new(net, config.optimizer);
    fit(net, train_data, Some(val_data), config, 0, &mut state)
}

/// Training loop shared by [`train`], fine-tuning and federated local updates.
///
/// `epoch_offset` shifts the shuffle streams so that a run split into chunks
/// reproduces the uninterrupted run.
pub fn fit(
    net: &mut Network,
    train_data: &Matrix,
    val_data: Option<&Matrix>,
    config: &TrainConfig,
    epoch_offset: usize,
    state: &mut OptimState,
) -> Result<TrainTrace> {
    config.validate()?;
    if train_data.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if train_data.cols() != net.input_dim() {
        return Err(shape_err("training data columns", net.input_dim(), train_data.cols()));
    }
    if let Some(v) = val_data {
        if v.cols() != net.input_dim() {
            return Err(shape_err("validation data columns", net.input_dim(), v.cols()));
        }
    }
    if matches!(
        (&*state, config.optimizer),
        (OptimState::Sgd, Optimizer::Adam) | (OptimState::Adam(_), Optimizer::Sgd)
    ) {
        return Err(Error::Config("optimizer state does not match config".into()));
    }

    let n = train_data.rows();
    let bs = config.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = TrainTrace::default();

    for e in 0..config.epochs {
        let epoch = e + 1;
        let mut rng = stream_rng(config.seed, (epoch_offset + e) as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut sq_sum = 0.0;
        for chunk in order.chunks(bs) {
            let batch = train_data.select_rows(chunk);
            let (_, cache) = net.forward(&batch)?;
            let (loss, grads) = net.backward(&cache, &batch, config.lambda)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            sq_sum += loss * loss * (chunk.len() * batch.cols()) as f64;
            match state {
                OptimState::Adam(st) => adam_step(net, &grads, st, config)?,
                OptimState::Sgd => sgd_step(net, &grads, config.learning_rate)?,
            }
        }
        let train_rmse = libm::sqrt(sq_sum / (n * train_data.cols()) as f64);
        if !train_rmse.is_finite() || !net.all_finite() {
            return Err(Error::Diverged { epoch });
        }
        let val_rmse = match val_data {
            Some(v) if v.rows() > 0 => {
                let out = net.predict(v)?;
                let l = rmse_loss(&out, v)?;
                if !l.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                Some(l)
            }
            _ => None,
        };
        trace.records.push(EpochRecord {
            epoch,
            train_rmse,
            val_rmse,
            layer_sums: layer_sums(net),
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::Activation;
    use crate::nn::network::{init_network, Activations};
    use alloc::vec;

    fn toy_data(rows: usize, seed: u64) -> Matrix {
        use rand::Rng;
        let mut rng = stream_rng(seed, 99);
        let mut data = Vec::with_capacity(rows * 4);
        for _ in 0..rows {
            let t: f64 = rng.random();
            data.extend_from_slice(&[t, 1.0 - t, 0.5 * t, 0.25]);
        }
        Matrix::from_vec(rows, 4, data).unwrap()
    }

    #[test]
    fn zero_epochs_is_a_config_error() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let mut net = init_network(&[4, 2, 4], Activation::Tanh, &TrainConfig::default()).unwrap();
        let d = toy_data(10, 1);
        assert!(matches!(train(&mut net, &d, &d, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn fixed_seed_gives_identical_trace() {
        let cfg = TrainConfig {
            epochs: 5,
            seed: 17,
            init: Init::UniformScaled,
            ..TrainConfig::default()
        };
        let acts = Activations::new(Activation::Tanh, Activation::Sigmoid);
        let d = toy_data(64, 2);
        let run = || {
            let mut net = init_network(&[4, 3, 4], acts, &cfg).unwrap();
            let t = train(&mut net, &d, &d, &cfg).unwrap();
            (net, t)
        };
        let (n1, t1) = run();
        let (n2, t2) = run();
        assert_eq!(t1, t2);
        assert_eq!(n1.param_hash(), n2.param_hash());
        assert_eq!(t1.len(), 5);
    }

    #[test]
    fn chunked_fit_equals_single_run() {
        let cfg = TrainConfig {
            epochs: 6,
            seed: 5,
            optimizer: Optimizer::Sgd,
            learning_rate: 0.3,
            ..TrainConfig::default()
        };
        let d = toy_data(40, 3);
        let net0 = init_network(&[4, 3, 4], Activation::Sigmoid, &cfg).unwrap();

        let mut a = net0.clone();
        let mut st = OptimState::new(&a, Optimizer::Sgd);
        fit(&mut a, &d, None, &cfg, 0, &mut st).unwrap();

        let mut b = net0;
        let half = TrainConfig { epochs: 3, ..cfg.clone() };
        let mut st = OptimState::new(&b, Optimizer::Sgd);
        fit(&mut b, &d, None, &half, 0, &mut st).unwrap();
        fit(&mut b, &d, None, &half, 3, &mut st).unwrap();
        assert_eq!(a.param_hash(), b.param_hash());
    }

    #[test]
    fn divergence_names_the_epoch() {
        let cfg = TrainConfig {
            epochs: 50,
            optimizer: Optimizer::Sgd,
            learning_rate: 1e300,
            init: Init::UniformPm1,
            ..TrainConfig::default()
        };
        let d = toy_data(16, 4);
        let mut net = init_network(&[4, 3, 4], Activation::Identity, &cfg).unwrap();
        match train(&mut net, &d, &d, &cfg) {
            Err(Error::Diverged { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn trace_records_sums_for_every_layer() {
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let d = toy_data(20, 5);
        let mut net = init_network(&[4, 6, 5, 6, 4], Activation::Tanh, &cfg).unwrap();
        let t = train(&mut net, &d, &d, &cfg).unwrap();
        assert_eq!(t.records[1].layer_sums.len(), 4);
        let last = &t.records[1].layer_sums[2];
        assert_eq!(last.signed, net.layers()[2].signed_weight_sum());
        assert_eq!(vec![1, 2], t.records.iter().map(|r| r.epoch).collect::<Vec<_>>());
    }
}
