//! Independent training of the edge autoencoders on their partition blocks.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EdgePartition, SplitPair};
use crate::detector::{classify, score, Classification, Threshold};
use crate::error::{shape_err, Error, Result};
use crate::nn::{init_network, rmse_loss, train, Activations, Network, TrainConfig, TrainTrace};
use crate::rng::derive_seed;

/// Architecture and training settings shared by every edge model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    /// `[d, h1, ..., hk, d]`.
    pub shape: Vec<usize>,
    pub activations: Activations,
    /// `seed` is the master seed; edge `k` trains with `seed ^ k`.
    pub train: TrainConfig,
}

impl EdgeSpec {
    /// Training config of edge `k` (1-based).
    pub fn config_for(&self, k: usize) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.train.seed, k),
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeModelSet {
    pub models: Vec<Network>,
    pub traces: Vec<TrainTrace>,
    pub spec: EdgeSpec,
    /// Content hashes of each edge's (train, test) blocks.
    pub data_hashes: Vec<([u8; 32], [u8; 32])>,
}

impl EdgeModelSet {
    pub fn m(&self) -> usize {
        self.models.len()
    }

    /// Dense depth of each model.
    pub fn depths(&self) -> Vec<usize> {
        self.models.iter().map(Network::depth).collect()
    }

    /// Model `k` (1-based).
    pub fn model(&self, k: usize) -> Option<&Network> {
        self.models.get(k.wrapping_sub(1))
    }

    /// Assembles a set from models trained elsewhere (e.g. in parallel).
    pub fn from_parts(
        partition: &EdgePartition,
        spec: EdgeSpec,
        trained: Vec<(Network, TrainTrace)>,
    ) -> Result<Self> {
        if trained.len() != partition.m() {
            return Err(shape_err("trained edge models", partition.m(), trained.len()));
        }
        let (models, traces) = trained.into_iter().unzip();
        Ok(Self {
            models,
            traces,
            spec,
            data_hashes: partition
                .edges
                .iter()
                .map(|p| (p.train.content_hash(), p.test.content_hash()))
                .collect(),
        })
    }
}

/// Trains edge `k` (1-based) on its own block, validating on its own test block.
pub fn train_edge(k: usize, block: &SplitPair, spec: &EdgeSpec) -> Result<(Network, TrainTrace)> {
    let d = spec.shape.first().copied().unwrap_or(0);
    if block.train.cols() != d {
        return Err(shape_err("edge input width vs feature count", block.train.cols(), d));
    }
    let cfg = spec.config_for(k);
    let mut net = init_network(&spec.shape, spec.activations, &cfg)?;
    let trace = train(&mut net, block.train.features(), block.test.features(), &cfg).map_err(|e| match e {
        Error::Diverged { epoch } => Error::EdgeDiverged { edge: k, epoch },
        other => other,
    })?;
    Ok((net, trace))
}

/// Trains every edge serially in edge order.
pub fn train_edges(partition: &EdgePartition, spec: &EdgeSpec) -> Result<EdgeModelSet> {
    let trained = partition
        .edges
        .iter()
        .enumerate()
        .map(|(i, block)| train_edge(i + 1, block, spec))
        .collect::<Result<Vec<_>>>()?;
    EdgeModelSet::from_parts(partition, spec.clone(), trained)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvaluation {
    pub rmse: f64,
    /// Present only when the test set is labeled and a threshold is given.
    pub accuracy: Option<f64>,
}

pub fn evaluate_edge(model: &Network, test: &Dataset, threshold: Option<&Threshold>) -> Result<EdgeEvaluation> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let x = test.features();
    if x.cols() != model.input_dim() {
        return Err(shape_err("test data columns", model.input_dim(), x.cols()));
    }
    let rmse = rmse_loss(&model.predict(x)?, x)?;
    let accuracy = match (test.labels(), threshold) {
        (Some(labels), Some(t)) => match classify(&score(model, x)?, t, Some(labels))? {
            Classification::Report(r) => Some(r.accuracy),
            Classification::Labels(_) => None,
        },
        _ => None,
    };
    Ok(EdgeEvaluation { rmse, accuracy })
}
