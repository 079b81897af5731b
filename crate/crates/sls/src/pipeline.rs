//! Turns a configuration and a seed into the data every arm consumes.

use serde::{Deserialize, Serialize};
use sls_core::data::{
    generate_synthetic, partition_edges, split_80_20, Dataset, EdgePartition, NormRecord, SplitPair, SynthConfig,
};

use crate::config::{DataSource, ExperimentConfig};
use crate::data_io::{ingest_csv, Schema};
use crate::error::{Error, Result};

/// Mixed into the seed of the synthetic hold-out set.
pub const HOLDOUT_SALT: u64 = 0x005E_ED0F_401D;

#[derive(Debug, Clone)]
pub struct Prepared {
    /// Normal rows only, in every train and test block.
    pub partition: EdgePartition,
    /// Labeled evaluation rows for detection, if any attacks are available.
    pub detect: Option<Dataset>,
    pub norm: NormRecord,
    pub hashes: DataHashes,
    /// Rows dropped while reading a CSV source.
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataHashes {
    pub source: String,
    /// `(train, test)` per edge.
    pub edges: Vec<(String, String)>,
    pub central_train: String,
    pub central_val: String,
    pub detect: Option<String>,
}

fn hx(ds: &Dataset) -> String {
    hex::encode(ds.content_hash())
}

/// Raw dataset for `seed` plus the number of dropped CSV rows.
pub fn load_source(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, usize)> {
    match &cfg.data.source {
        DataSource::Synthetic {
            dim,
            n_normal,
            n_attack,
            attack_shift,
            region_jitter,
        } => {
            let mut sc = SynthConfig::standard(*dim, *n_normal, *n_attack, *attack_shift, seed);
            sc.region_jitter = *region_jitter;
            Ok((generate_synthetic(&sc)?, 0))
        }
        DataSource::Csv { path, schema } => {
            let ing = ingest_csv(path, &Schema::read(schema)?)?;
            Ok((ing.dataset, ing.dropped))
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let (raw, dropped_rows) = load_source(cfg, seed)?;
    prepare_from(cfg, &raw, seed, dropped_rows)
}

/// Split 80:20, fit the normalization on normal training rows, partition,
/// then strip attacks from every block.
pub fn prepare_from(cfg: &ExperimentConfig, raw: &Dataset, seed: u64, dropped_rows: usize) -> Result<Prepared> {
    let width = cfg.edge.shape[0];
    if raw.cols() != width {
        return Err(Error::Config(format!(
            "data has {} feature columns but edge.shape starts with {width}",
            raw.cols()
        )));
    }
    let split = split_80_20(raw, seed)?;
    let normal_train = split.train.normal_only();
    if normal_train.is_empty() {
        return Err(sls_core::Error::EmptyDataset.into());
    }
    let norm = NormRecord::fit(&normal_train, cfg.data.normalize)?;
    let split = SplitPair {
        train: norm.apply(&split.train)?,
        test: norm.apply(&split.test)?,
    };
    let p = cfg.partition;
    let full = partition_edges(&split, p.edges, p.train_rows, p.test_rows)?;
    let strip = |b: &SplitPair| SplitPair {
        train: b.train.normal_only(),
        test: b.test.normal_only(),
    };
    let partition = EdgePartition {
        edges: full.edges.iter().map(strip).collect(),
        s_train: full.s_train,
        s_test: full.s_test,
        central: strip(&full.central),
    };
    if partition.central.train.is_empty() || partition.central.test.is_empty() {
        return Err(Error::Config("no normal rows left for the central cloud".into()));
    }
    let detect = match (&cfg.data.holdout, &cfg.data.source) {
        (Some(h), DataSource::Synthetic { dim, attack_shift, region_jitter, .. }) => {
            let mut sc = SynthConfig::standard(*dim, h.n_normal, h.n_attack, *attack_shift, seed ^ HOLDOUT_SALT);
            sc.region_jitter = *region_jitter;
            Some(norm.apply(&generate_synthetic(&sc)?)?)
        }
        _ if full.central.test.count_label(1) > 0 => Some(full.central.test.clone()),
        _ => None,
    };
    let hashes = DataHashes {
        source: hx(raw),
        edges: partition.edges.iter().map(|b| (hx(&b.train), hx(&b.test))).collect(),
        central_train: hx(&partition.central.train),
        central_val: hx(&partition.central.test),
        detect: detect.as_ref().map(hx),
    };
    Ok(Prepared {
        partition,
        detect,
        norm,
        hashes,
        dropped_rows,
    })
}
