//! Synthetic flow-metadata: Gaussian normal traffic and mean-shifted attacks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream_rng, STREAM_JITTER, STREAM_SYNTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_normal: usize,
    pub n_attack: usize,
    pub normal_mean: Vec<f64>,
    pub normal_std: Vec<f64>,
    /// Attack mean offset per feature, in units of that feature's std.
    pub attack_shift: Vec<f64>,
    pub seed: u64,
    /// Region index used to draw the per-region mean jitter.
    #[serde(default)]
    pub region: u64,
    /// Std (in feature-std units) of the per-region mean offset. 0 disables it.
    #[serde(default)]
    pub region_jitter: f64,
}

impl SynthConfig {
    /// `dim` standard-normal features, every attack feature shifted by `shift` sigma.
    pub fn standard(dim: usize, n_normal: usize, n_attack: usize, shift: f64, seed: u64) -> Self {
        Self {
            n_normal,
            n_attack,
            normal_mean: vec![0.0; dim],
            normal_std: vec![1.0; dim],
            attack_shift: vec![shift; dim],
            seed,
            region: 0,
            region_jitter: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.normal_mean.len()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Config("synthetic data needs at least one feature".into()));
        }
        if self.normal_std.len() != d || self.attack_shift.len() != d {
            return Err(Error::Config(format!(
                "synthetic spec lengths differ: mean {d}, std {}, shift {}",
                self.normal_std.len(),
                self.attack_shift.len()
            )));
        }
        if self.n_normal + self.n_attack == 0 {
            return Err(Error::Config("synthetic data needs at least one row".into()));
        }
        if self.normal_std.iter().any(|s| !(s.is_finite() && *s >= 0.0))
            || self.normal_mean.iter().chain(&self.attack_shift).any(|v| !v.is_finite())
            || !(self.region_jitter.is_finite() && self.region_jitter >= 0.0)
        {
            return Err(Error::Config("synthetic parameters must be finite, std >= 0".into()));
        }
        Ok(())
    }
}

/// Record of how a synthetic dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub rows: usize,
    pub attack_rows: usize,
    /// Largest per-feature attack shift, in std units.
    pub attack_shift_max_sigma: f64,
    /// Per-feature mean actually used after region jitter.
    pub effective_mean: Vec<f64>,
}

/// Normal rows first (label 0), then attack rows (label 1).
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let d = cfg.dim();
    let mut mean = cfg.normal_mean.clone();
    if cfg.region_jitter > 0.0 {
        let mut jr = stream_rng(cfg.seed ^ cfg.region, STREAM_JITTER);
        for (m, s) in mean.iter_mut().zip(&cfg.normal_std) {
            let z: f64 = StandardNormal.sample(&mut jr);
            *m += cfg.region_jitter * s * z;
        }
    }
    let mut rng = stream_rng(cfg.seed, STREAM_SYNTH);
    let n = cfg.n_normal + cfg.n_attack;
    let mut data = Vec::with_capacity(n * d);
    let dists = |shift: bool| -> Result<Vec<Normal<f64>>> {
        (0..d)
            .map(|j| {
                let mu = mean[j] + if shift { cfg.attack_shift[j] * cfg.normal_std[j] } else { 0.0 };
                Normal::new(mu, cfg.normal_std[j]).map_err(|e| Error::Config(format!("{e}")))
            })
            .collect()
    };
    let normal = dists(false)?;
    let attack = dists(true)?;
    for _ in 0..cfg.n_normal {
        data.extend(normal.iter().map(|g| g.sample(&mut rng)));
    }
    for _ in 0..cfg.n_attack {
        data.extend(attack.iter().map(|g| g.sample(&mut rng)));
    }
    let mut labels = vec![0u8; cfg.n_normal];
    labels.resize(n, 1);
    let mut ds = Dataset::new(Matrix::from_vec(n, d, data)?, Some(labels), Vec::new())?;
    ds.set_manifest(SynthManifest {
        config: cfg.clone(),
        rows: n,
        attack_rows: cfg.n_attack,
        attack_shift_max_sigma: cfg.attack_shift.iter().fold(0.0, |m, v| m.max(v.abs())),
        effective_mean: mean,
    });
    Ok(ds)
}
