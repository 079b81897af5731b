//! Federated averaging baseline.
//!
//! Each round the global model is broadcast, every client runs local SGD on
//! its own block, and the server moves the global model toward the
//! sample-weighted average of the client models:
//! `global <- global + central_lr * (average - global)`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::EdgePartition;
use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{fit, init_network, rmse_loss, Activations, Init, Network, OptimState, Optimizer, TrainConfig};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    /// Client step size.
    pub edge_lr: f64,
    /// Server step toward the aggregate; 1 replaces the global model.
    pub central_lr: f64,
    pub l2_reg: f64,
    pub shape: Vec<usize>,
    pub activations: Activations,
    pub batch_size: Option<usize>,
    pub init: Init,
    /// `Adam` is an ablation switch; the reference recurrence is plain SGD.
    pub local_optimizer: Optimizer,
    pub seed: u64,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            n_clients: 4,
            rounds: 50,
            local_epochs: 20,
            edge_lr: 1e-8,
            central_lr: 0.005,
            l2_reg: 1e-8,
            shape: alloc::vec![180, 90, 60, 30, 30, 60, 90, 180],
            activations: Activations::new(crate::nn::Activation::Tanh, crate::nn::Activation::Sigmoid),
            batch_size: Some(32),
            init: Init::UniformPm1,
            local_optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 || self.rounds == 0 || self.local_epochs == 0 {
            return Err(Error::Config(
                "federated run needs at least one client, round and local epoch".into(),
            ));
        }
        if !(self.central_lr >= 0.0 && self.central_lr.is_finite()) {
            return Err(Error::Config(format!("central lr must be >= 0, got {}", self.central_lr)));
        }
        self.client_config(1).validate()
    }

    /// Local training config of client `k` (1-based): seed `seed ^ k`.
    pub fn client_config(&self, k: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.local_epochs,
            learning_rate: self.edge_lr,
            lambda: self.l2_reg,
            batch_size: self.batch_size,
            seed: derive_seed(self.seed, k),
            init: self.init,
            optimizer: self.local_optimizer,
            ..TrainConfig::default()
        }
    }

    /// `rounds * local_epochs`.
    pub fn total_local_epochs(&self) -> usize {
        self.rounds * self.local_epochs
    }

    /// Config of the initial global model.
    pub fn global_init_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            init: self.init,
            ..TrainConfig::default()
        }
    }
}

/// Upload plus download of every parameter as f64, per client per round.
pub fn fl_bytes_exchanged(param_count: usize, rounds: usize, clients: usize) -> u64 {
    2 * param_count as u64 * rounds as u64 * clients as u64 * 8
}

pub fn fl_broadcast(global: &Network, m: usize) -> Vec<Network> {
    (0..m).map(|_| global.clone()).collect()
}

/// Runs `config.epochs` local epochs on `data`; shuffle streams start at
/// `epoch_offset`. Returns the RMSE of the last local epoch.
pub fn fl_local_update(
    net: &mut Network,
    data: &Matrix,
    config: &TrainConfig,
    epoch_offset: usize,
) -> Result<f64> {
    let mut state = OptimState::new(net, config.optimizer);
    let trace = fit(net, data, None, config, epoch_offset, &mut state)?;
    Ok(trace.records.last().map_or(0.0, |r| r.train_rmse))
}

/// Sample-weighted parameter average with weights `N_i / sum N`.
///
/// Computed as `p_1 + sum_i w_i (p_i - p_1)`, so identical clients and a
/// single client reproduce their parameters exactly.
pub fn fl_aggregate(clients: &[Network], counts: &[usize]) -> Result<Network> {
    let first = clients.first().ok_or(Error::EmptyDataset)?;
    if counts.len() != clients.len() {
        return Err(shape_err("client sample counts", clients.len(), counts.len()));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let widths = first.widths();
    for (i, c) in clients.iter().enumerate() {
        if c.widths() != widths {
            return Err(Error::Shape {
                context: format!("client {} model shape", i + 1),
                expected: first.param_count(),
                found: c.param_count(),
            });
        }
    }
    let weights: Vec<f64> = counts.iter().map(|&n| n as f64 / total as f64).collect();
    let mut out = first.clone();
    for l in 0..out.depth() {
        let (w, b) = out.layer_params_mut(l);
        for (i, c) in clients.iter().enumerate().skip(1) {
            let src = &c.layers()[l];
            let base = &first.layers()[l];
            for ((dst, &p), &p0) in w.iter_mut().zip(src.weights()).zip(base.weights()) {
                *dst += weights[i] * (p - p0);
            }
            for ((dst, &p), &p0) in b.iter_mut().zip(src.biases()).zip(base.biases()) {
                *dst += weights[i] * (p - p0);
            }
        }
    }
    Ok(out)
}

/// `old + lr * (new - old)`; `lr == 1` returns `new` exactly.
pub fn server_step(old: &Network, aggregate: Network, lr: f64) -> Network {
    if lr == 1.0 {
        return aggregate;
    }
    let mut out = old.clone();
    for l in 0..out.depth() {
        let (w, b) = out.layer_params_mut(l);
        let a = &aggregate.layers()[l];
        for (d, &v) in w.iter_mut().zip(a.weights()) {
            *d += lr * (v - *d);
        }
        for (d, &v) in b.iter_mut().zip(a.biases()) {
            *d += lr * (v - *d);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub global_val_loss: f64,
    pub global_val_acc: Option<f64>,
    /// Final local-epoch RMSE of each client.
    pub client_losses: Vec<f64>,
    pub wall_clock_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlTrace {
    pub rounds: Vec<RoundRecord>,
}

impl FlTrace {
    pub fn val_losses(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.global_val_loss).collect()
    }
}

/// Round-by-round federated run. Client updates of a round are independent
/// and may be computed in any order or in parallel via [`FlState::local_update`].
#[derive(Debug, Clone)]
pub struct FlState {
    pub config: FlConfig,
    pub global: Network,
    pub trace: FlTrace,
}

impl FlState {
    pub fn new(config: FlConfig) -> Result<Self> {
        config.validate()?;
        let global = init_network(&config.shape, config.activations, &config.global_init_config())?;
        Ok(Self::with_global(config, global))
    }

    pub fn with_global(config: FlConfig, global: Network) -> Self {
        Self {
            config,
            global,
            trace: FlTrace::default(),
        }
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.trace.rounds.len()
    }

    pub fn is_done(&self) -> bool {
        self.round() >= self.config.rounds
    }

    /// Client `k` (1-based) update for the current round, from the current global.
    pub fn local_update(&self, k: usize, data: &Matrix) -> Result<(Network, f64)> {
        let mut net = self.global.clone();
        let offset = self.round() * self.config.local_epochs;
        let loss = fl_local_update(&mut net, data, &self.config.client_config(k), offset).map_err(
            |e| match e {
                Error::Diverged { .. } => Error::ClientDiverged {
                    round: self.round() + 1,
                    client: k,
                },
                other => other,
            },
        )?;
        Ok((net, loss))
    }

    /// Aggregates the round's client models (in client order) and evaluates the new global.
    pub fn apply_round(&mut self, updates: Vec<(Network, f64)>, counts: &[usize], val: &Matrix) -> Result<&RoundRecord> {
        if updates.len() != self.config.n_clients {
            return Err(shape_err("client updates", self.config.n_clients, updates.len()));
        }
        let (nets, client_losses): (Vec<Network>, Vec<f64>) = updates.into_iter().unzip();
        let agg = fl_aggregate(&nets, counts)?;
        self.global = server_step(&self.global, agg, self.config.central_lr);
        let round = self.round() + 1;
        if !self.global.all_finite() {
            return Err(Error::Diverged { epoch: round });
        }
        let global_val_loss = rmse_loss(&self.global.predict(val)?, val)?;
        self.trace.rounds.push(RoundRecord {
            round,
            global_val_loss,
            global_val_acc: None,
            client_losses,
            wall_clock_s: None,
        });
        Ok(self.trace.rounds.last().expect("just pushed"))
    }

    /// One full round, clients in order.
    pub fn step(&mut self, clients: &[&Matrix], val: &Matrix) -> Result<&RoundRecord> {
        let updates = clients
            .iter()
            .enumerate()
            .map(|(i, d)| self.local_update(i + 1, d))
            .collect::<Result<Vec<_>>>()?;
        let counts: Vec<usize> = clients.iter().map(|d| d.rows()).collect();
        self.apply_round(updates, &counts, val)
    }
}

/// Full run on the partition's edge training blocks, validated on the
/// central test block.
pub fn fl_run(partition: &EdgePartition, config: &FlConfig) -> Result<(FlTrace, Network)> {
    if partition.m() != config.n_clients {
        return Err(shape_err("client blocks", config.n_clients, partition.m()));
    }
    let val = partition.central.test.features();
    if val.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let clients: Vec<&Matrix> = partition.edges.iter().map(|p| p.train.features()).collect();
    let mut state = FlState::new(config.clone())?;
    while !state.is_done() {
        state.step(&clients, val)?;
    }
    Ok((state.trace, state.global))
}
