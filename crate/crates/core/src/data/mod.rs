//! Datasets, normalization, the 80:20 split, edge partitioning and the
//! synthetic flow-metadata generator.

mod partition;
mod synth;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;

pub use partition::{partition_edges, split_80_20, EdgePartition, SplitPair};
pub use synth::{generate_synthetic, SynthConfig, SynthManifest};

/// Feature matrix with optional binary labels (0 normal, 1 attack).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    labels: Option<Vec<u8>>,
    feature_names: Vec<String>,
    /// Identity of each row in the dataset it was first built from.
    row_ids: Vec<usize>,
    normalization: Option<NormRecord>,
    manifest: Option<SynthManifest>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Option<Vec<u8>>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if !features.is_finite() {
            return Err(Error::Config("dataset contains NaN or infinite values".into()));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(shape_err("label count", features.rows(), l.len()));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::Config("labels must be 0 or 1".into()));
            }
        }
        if !feature_names.is_empty() && feature_names.len() != features.cols() {
            return Err(shape_err("feature names", features.cols(), feature_names.len()));
        }
        let feature_names = if feature_names.is_empty() {
            (0..features.cols()).map(|i| format!("f{i}")).collect()
        } else {
            feature_names
        };
        let row_ids = (0..features.rows()).collect();
        Ok(Self {
            features,
            labels,
            feature_names,
            row_ids,
            normalization: None,
            manifest: None,
        })
    }

    #[inline]
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    #[inline]
    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn normalization(&self) -> Option<&NormRecord> {
        self.normalization.as_ref()
    }

    pub fn manifest(&self) -> Option<&SynthManifest> {
        self.manifest.as_ref()
    }

    /// Attaches the generator record, e.g. one read back from a sidecar file.
    pub fn set_manifest(&mut self, m: SynthManifest) {
        self.manifest = Some(m);
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.features.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0
    }

    /// Rows `idx` in order, keeping row ids, labels and metadata.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            feature_names: self.feature_names.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
            normalization: self.normalization.clone(),
            manifest: self.manifest.clone(),
        }
    }

    /// Rows labeled normal; an unlabeled dataset is returned whole.
    pub fn normal_only(&self) -> Self {
        match &self.labels {
            None => self.clone(),
            Some(l) => {
                let idx: Vec<usize> = (0..l.len()).filter(|&i| l[i] == 0).collect();
                self.subset(&idx)
            }
        }
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&v| v == label).count())
    }

    /// SHA-256 over shape, feature bits, labels and row ids.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.rows() as u64).to_le_bytes());
        h.update((self.cols() as u64).to_le_bytes());
        for v in self.features.as_slice() {
            h.update(v.to_le_bytes());
        }
        if let Some(l) = &self.labels {
            h.update(l);
        }
        for id in &self.row_ids {
            h.update((*id as u64).to_le_bytes());
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    MinMax,
    ZScore,
}

/// Per-feature affine map `x -> (x - offset) / scale`; constant features map to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub offset: f64,
    pub scale: f64,
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub method: NormMethod,
    pub features: Vec<FeatureNorm>,
}

impl NormRecord {
    /// minmax: offset = min, scale = max - min.
    /// zscore: offset = mean, scale = population std.
    pub fn fit(ds: &Dataset, method: NormMethod) -> Result<Self> {
        if ds.rows() < 2 {
            return Err(Error::Partition {
                what: "normalization".into(),
                required: 2,
                available: ds.rows(),
            });
        }
        let x = ds.features();
        let n = x.rows() as f64;
        let features = (0..x.cols())
            .map(|c| {
                let col = (0..x.rows()).map(|r| x.get(r, c));
                let (offset, scale) = match method {
                    NormMethod::MinMax => {
                        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                            (lo.min(v), hi.max(v))
                        });
                        (lo, hi - lo)
                    }
                    NormMethod::ZScore => {
                        let mean = col.clone().sum::<f64>() / n;
                        let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        (mean, libm::sqrt(var))
                    }
                };
                FeatureNorm {
                    offset,
                    scale,
                    constant: !(scale > 0.0),
                }
            })
            .collect();
        Ok(Self { method, features })
    }

    /// Applies the stored per-feature map to any dataset with the same columns.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.cols() != self.features.len() {
            return Err(shape_err("normalization columns", self.features.len(), ds.cols()));
        }
        let mut out = ds.clone();
        let cols = ds.cols();
        for (i, v) in out.features.as_mut_slice().iter_mut().enumerate() {
            let f = &self.features[i % cols];
            *v = if f.constant { 0.0 } else { (*v - f.offset) / f.scale };
        }
        out.normalization = Some(self.clone());
        Ok(out)
    }

    pub fn constant_features(&self) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.constant)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Fits a [`NormRecord`] on `ds` and applies it.
pub fn normalize(ds: &Dataset, method: NormMethod) -> Result<(Dataset, NormRecord)> {
    let rec = NormRecord::fit(ds, method)?;
    let out = rec.apply(ds)?;
    Ok((out, rec))
}
