use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_SPLIT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
}

/// Shuffles rows with `seed`, then takes the first 80% as train and the rest
/// as test. The test size is `floor(n / 5)`.
pub fn split_80_20(ds: &Dataset, seed: u64) -> Result<SplitPair> {
    let n = ds.rows();
    if n < 5 {
        return Err(Error::Partition {
            what: "80:20 split".into(),
            required: 5,
            available: n,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, STREAM_SPLIT));
    let n_test = n / 5;
    let n_train = n - n_test;
    Ok(SplitPair {
        train: ds.subset(&idx[..n_train]),
        test: ds.subset(&idx[n_train..]),
    })
}

/// Per-edge sub-datasets plus the rows left for the central cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePartition {
    pub edges: Vec<SplitPair>,
    pub s_train: usize,
    pub s_test: usize,
    /// Train and test rows not assigned to any edge.
    pub central: SplitPair,
}

impl EdgePartition {
    pub fn m(&self) -> usize {
        self.edges.len()
    }

    /// Same blocks with attack rows removed from every training set.
    pub fn normal_training(&self) -> Self {
        let strip = |p: &SplitPair| SplitPair {
            train: p.train.normal_only(),
            test: p.test.clone(),
        };
        Self {
            edges: self.edges.iter().map(strip).collect(),
            s_train: self.s_train,
            s_test: self.s_test,
            central: strip(&self.central),
        }
    }
}

/// Assigns consecutive equal blocks: edge `k` (1-based) gets train rows
/// `(k-1)*s_train .. k*s_train` and test rows `(k-1)*s_test .. k*s_test`.
pub fn partition_edges(
    split: &SplitPair,
    m: usize,
    s_train: usize,
    s_test: usize,
) -> Result<EdgePartition> {
    if m == 0 || s_train == 0 || s_test == 0 {
        return Err(Error::Config(
            "edge count and per-edge sizes must be positive".into(),
        ));
    }
    let need_train = m * s_train;
    if need_train > split.train.rows() {
        return Err(Error::Partition {
            what: "edge training blocks".into(),
            required: need_train,
            available: split.train.rows(),
        });
    }
    let need_test = m * s_test;
    if need_test > split.test.rows() {
        return Err(Error::Partition {
            what: "edge test blocks".into(),
            required: need_test,
            available: split.test.rows(),
        });
    }
    let range = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
    let edges = (0..m)
        .map(|k| SplitPair {
            train: split.train.subset(&range(k * s_train, (k + 1) * s_train)),
            test: split.test.subset(&range(k * s_test, (k + 1) * s_test)),
        })
        .collect();
    let central = SplitPair {
        train: split.train.subset(&range(need_train, split.train.rows())),
        test: split.test.subset(&range(need_test, split.test.rows())),
    };
    Ok(EdgePartition {
        edges,
        s_train,
        s_test,
        central,
    })
}
