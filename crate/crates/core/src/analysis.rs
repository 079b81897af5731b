//! Per-layer weight-sum ratios over training, contribution scores and layer
//! selection masks.
//!
//! Ratios are taken over the hidden layers. Hidden layer `l` (1-based) is the
//! dense layer whose outputs are the `l`-th hidden neurons, i.e. dense index
//! `l - 1`; the output layer `D-1` is excluded. At one epoch, with `s_l` the
//! layer's weight sum:
//!
//! * `alpha_l = s_l / sum_h s_h` (sum over all hidden layers)
//! * `beta_l  = s_l / s_last` (last hidden layer)
//!
//! Both the signed sum and the L1 sum are tracked. A zero denominator leaves
//! the ratio undefined (`None`) and the epoch is listed in the flags.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TrainTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SumVariant {
    Signed,
    #[default]
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSet {
    /// Weight sum per hidden layer.
    pub sums: Vec<f64>,
    /// Sum over all hidden layers.
    pub total: f64,
    /// Sum of the last hidden layer.
    pub last: f64,
    pub alpha: Vec<Option<f64>>,
    pub beta: Vec<Option<f64>>,
}

impl RatioSet {
    fn new(sums: Vec<f64>) -> Self {
        let total: f64 = sums.iter().sum();
        let last = *sums.last().expect("at least one hidden layer");
        let div = |d: f64| move |s: &f64| (d != 0.0).then(|| s / d);
        Self {
            alpha: sums.iter().map(div(total)).collect(),
            beta: sums.iter().map(div(last)).collect(),
            sums,
            total,
            last,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.total != 0.0 && self.last != 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub signed: RatioSet,
    pub l1: RatioSet,
}

impl EpochStats {
    pub fn variant(&self, v: SumVariant) -> &RatioSet {
        match v {
            SumVariant::Signed => &self.signed,
            SumVariant::L1 => &self.l1,
        }
    }
}

/// Ratio statistics of one trained model across its epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    /// 1-based edge model id.
    pub model_id: usize,
    /// Dense indices of the hidden layers, in order.
    pub hidden_layers: Vec<usize>,
    pub epochs: Vec<EpochStats>,
    /// Epochs at which some signed ratio is undefined.
    pub signed_undefined_epochs: Vec<usize>,
    /// Epochs at which some L1 ratio is undefined (all hidden weights zero).
    pub l1_undefined_epochs: Vec<usize>,
}

/// One row per (epoch, hidden layer), ready for tabular export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub epoch: usize,
    pub layer: usize,
    pub signed_sum: f64,
    pub l1_sum: f64,
    pub alpha_signed: Option<f64>,
    pub alpha_l1: Option<f64>,
    pub beta_signed: Option<f64>,
    pub beta_l1: Option<f64>,
}

impl LayerStats {
    pub fn rows(&self) -> Vec<StatsRow> {
        let mut out = Vec::with_capacity(self.epochs.len() * self.hidden_layers.len());
        for e in &self.epochs {
            for (h, &layer) in self.hidden_layers.iter().enumerate() {
                out.push(StatsRow {
                    epoch: e.epoch,
                    layer,
                    signed_sum: e.signed.sums[h],
                    l1_sum: e.l1.sums[h],
                    alpha_signed: e.signed.alpha[h],
                    alpha_l1: e.l1.alpha[h],
                    beta_signed: e.signed.beta[h],
                    beta_l1: e.l1.beta[h],
                });
            }
        }
        out
    }
}

pub fn compute_layer_stats(model_id: usize, trace: &TrainTrace) -> Result<LayerStats> {
    let first = trace.records.first().ok_or(Error::EmptyDataset)?;
    let depth = first.layer_sums.len();
    if depth < 2 {
        return Err(Error::Config(format!(
            "layer analysis needs at least one hidden layer, trace has {depth} dense layers"
        )));
    }
    let hidden_layers: Vec<usize> = (0..depth - 1).collect();
    let mut stats = LayerStats {
        model_id,
        hidden_layers: hidden_layers.clone(),
        epochs: Vec::with_capacity(trace.len()),
        signed_undefined_epochs: Vec::new(),
        l1_undefined_epochs: Vec::new(),
    };
    for rec in &trace.records {
        if rec.layer_sums.len() != depth {
            return Err(crate::error::shape_err(
                format!("layer sums at epoch {}", rec.epoch),
                depth,
                rec.layer_sums.len(),
            ));
        }
        let pick = |f: fn(&crate::nn::LayerSums) -> f64| {
            hidden_layers.iter().map(|&i| f(&rec.layer_sums[i])).collect::<Vec<_>>()
        };
        let signed = RatioSet::new(pick(|s| s.signed));
        let l1 = RatioSet::new(pick(|s| s.l1));
        if !signed.is_defined() {
            stats.signed_undefined_epochs.push(rec.epoch);
        }
        if !l1.is_defined() {
            stats.l1_undefined_epochs.push(rec.epoch);
        }
        stats.epochs.push(EpochStats {
            epoch: rec.epoch,
            signed,
            l1,
        });
    }
    Ok(stats)
}

/// Per-hidden-layer contribution scores of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionScores {
    pub model_id: usize,
    pub variant: SumVariant,
    /// Dense indices, parallel to `scores`.
    pub layers: Vec<usize>,
    pub scores: Vec<f64>,
    /// Epochs actually used as endpoints.
    pub from_epoch: usize,
    pub to_epoch: usize,
    /// Set when an endpoint ratio was undefined and a nearer epoch was used.
    pub fallback: bool,
}

impl ContributionScores {
    pub fn score_of(&self, layer: usize) -> Option<f64> {
        self.layers.iter().position(|&l| l == layer).map(|i| self.scores[i])
    }
}

/// `score_l = |alpha_l(last epoch) - alpha_l(first epoch)|`. When an endpoint
/// has undefined ratios the nearest inward epoch with defined ratios is used.
pub fn contribution_score(stats: &LayerStats, variant: SumVariant) -> Result<ContributionScores> {
    if stats.epochs.len() < 2 {
        return Err(Error::Selection(format!(
            "contribution score needs at least 2 epochs, model {} has {}",
            stats.model_id,
            stats.epochs.len()
        )));
    }
    let defined = |e: &EpochStats| e.variant(variant).alpha.iter().all(Option::is_some);
    let lo = stats.epochs.iter().position(defined);
    let hi = stats.epochs.iter().rposition(defined);
    let (lo, hi) = match (lo, hi) {
        (Some(a), Some(b)) if a < b => (a, b),
        _ => {
            return Err(Error::Selection(format!(
                "model {}: fewer than two epochs with defined {:?} ratios",
                stats.model_id, variant
            )))
        }
    };
    let a = &stats.epochs[lo].variant(variant).alpha;
    let b = &stats.epochs[hi].variant(variant).alpha;
    let scores = a
        .iter()
        .zip(b)
        .map(|(x, y)| (y.unwrap() - x.unwrap()).abs())
        .collect();
    Ok(ContributionScores {
        model_id: stats.model_id,
        variant,
        layers: stats.hidden_layers.clone(),
        scores,
        from_epoch: stats.epochs[lo].epoch,
        to_epoch: stats.epochs[hi].epoch,
        fallback: lo != 0 || hi != stats.epochs.len() - 1,
    })
}

/// `(model, layer)`: 1-based edge model id and dense layer index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LayerRef {
    pub model: usize,
    pub layer: usize,
}

impl LayerRef {
    pub const fn new(model: usize, layer: usize) -> Self {
        Self { model, layer }
    }
}

impl core::fmt::Display for LayerRef {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "E{}.L{}", self.model, self.layer)
    }
}

/// Parses the `E{model}.L{layer}` form produced by `Display`.
impl core::str::FromStr for LayerRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Selection(format!("`{s}` is not of the form E<model>.L<layer>"));
        let (m, l) = s.trim().split_once('.').ok_or_else(bad)?;
        let model = m.strip_prefix('E').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let layer = l.strip_prefix('L').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if model == 0 {
            return Err(bad());
        }
        Ok(Self { model, layer })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum SelectionPolicy {
    TopKPerModel { k: usize },
    TopKGlobal { k: usize },
    /// Every layer scoring at least `tau`.
    Threshold { tau: f64 },
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringRecord {
    pub policy: SelectionPolicy,
    pub variant: SumVariant,
    /// Per model, scores over its hidden layers.
    pub scores: Vec<Vec<f64>>,
}

/// `S[k][i]`: whether dense layer `i` of edge model `k + 1` is selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    entries: Vec<Vec<bool>>,
    pub scoring: Option<ScoringRecord>,
}

impl SelectionMask {
    /// Builds a mask from explicit refs against models with the given dense depths.
    pub fn from_refs(depths: &[usize], refs: &[LayerRef]) -> Result<Self> {
        let mut entries: Vec<Vec<bool>> = depths.iter().map(|&d| vec![false; d]).collect();
        for r in refs {
            let row = r
                .model
                .checked_sub(1)
                .and_then(|k| entries.get_mut(k))
                .ok_or_else(|| Error::Selection(format!("{r}: no such edge model")))?;
            let cell = row
                .get_mut(r.layer)
                .ok_or_else(|| Error::Selection(format!("{r}: no such layer")))?;
            *cell = true;
        }
        let m = Self {
            entries,
            scoring: None,
        };
        if m.count() == 0 {
            return Err(Error::Selection("mask selects no layers".into()));
        }
        Ok(m)
    }

    pub fn models(&self) -> usize {
        self.entries.len()
    }

    pub fn depth_of(&self, model: usize) -> Option<usize> {
        self.entries.get(model.wrapping_sub(1)).map(Vec::len)
    }

    pub fn is_selected(&self, r: LayerRef) -> bool {
        r.model >= 1
            && self
                .entries
                .get(r.model - 1)
                .and_then(|row| row.get(r.layer))
                .copied()
                .unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.entries.iter().flatten().filter(|&&b| b).count()
    }

    /// Selected refs in (model, layer) order.
    pub fn selected(&self) -> Vec<LayerRef> {
        let mut out = Vec::new();
        for (k, row) in self.entries.iter().enumerate() {
            for (i, &s) in row.iter().enumerate() {
                if s {
                    out.push(LayerRef::new(k + 1, i));
                }
            }
        }
        out
    }

    pub fn selected_in(&self, model: usize) -> Vec<usize> {
        self.entries
            .get(model.wrapping_sub(1))
            .map(|row| (0..row.len()).filter(|&i| row[i]).collect())
            .unwrap_or_default()
    }

    /// Raw rows, one per model, over all dense layers.
    pub fn entries(&self) -> &[Vec<bool>] {
        &self.entries
    }
}

/// Applies `policy` to per-model scores. `depths[k]` is the dense depth of
/// model `k + 1`; `scores[k]` must belong to that model. Ties rank the lower
/// model id first, then the lower layer index.
pub fn select_layers(
    scores: &[ContributionScores],
    depths: &[usize],
    policy: SelectionPolicy,
) -> Result<SelectionMask> {
    if scores.len() != depths.len() {
        return Err(crate::error::shape_err("score sets", depths.len(), scores.len()));
    }
    let mut cands: Vec<(f64, LayerRef)> = Vec::new();
    for (k, s) in scores.iter().enumerate() {
        if s.model_id != k + 1 {
            return Err(Error::Selection(format!(
                "score set {} belongs to model {}",
                k + 1,
                s.model_id
            )));
        }
        for (&layer, &v) in s.layers.iter().zip(&s.scores) {
            if v.is_nan() {
                return Err(Error::Selection(format!("score of E{}.L{layer} is NaN", k + 1)));
            }
            if layer >= depths[k] {
                return Err(Error::Selection(format!("E{}.L{layer}: no such layer", k + 1)));
            }
            cands.push((v, LayerRef::new(k + 1, layer)));
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let chosen: Vec<LayerRef> = match policy {
        SelectionPolicy::All => cands.iter().map(|c| c.1).collect(),
        SelectionPolicy::TopKGlobal { k } => cands.iter().take(k).map(|c| c.1).collect(),
        SelectionPolicy::TopKPerModel { k } => (1..=scores.len())
            .flat_map(|m| cands.iter().filter(move |c| c.1.model == m).take(k))
            .map(|c| c.1)
            .collect(),
        SelectionPolicy::Threshold { tau } => {
            cands.iter().filter(|c| c.0 >= tau).map(|c| c.1).collect()
        }
    };
    if chosen.is_empty() {
        return Err(Error::Selection(format!("policy {policy:?} selects no layers")));
    }
    let mut mask = SelectionMask::from_refs(depths, &chosen)?;
    mask.scoring = Some(ScoringRecord {
        policy,
        variant: scores[0].variant,
        scores: scores.iter().map(|s| s.scores.clone()).collect(),
    });
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{EpochRecord, LayerSums};

    fn trace(epochs: &[&[(f64, f64)]]) -> TrainTrace {
        TrainTrace {
            records: epochs
                .iter()
                .enumerate()
                .map(|(e, sums)| EpochRecord {
                    epoch: e + 1,
                    train_rmse: 1.0,
                    val_rmse: Some(1.0),
                    layer_sums: sums
                        .iter()
                        .map(|&(signed, l1)| LayerSums { signed, l1 })
                        .collect(),
                })
                .collect(),
        }
    }

    fn scores(model_id: usize, v: &[f64]) -> ContributionScores {
        ContributionScores {
            model_id,
            variant: SumVariant::L1,
            layers: (0..v.len()).collect(),
            scores: v.to_vec(),
            from_epoch: 1,
            to_epoch: 2,
            fallback: false,
        }
    }

    #[test]
    fn equal_layers_split_alpha_evenly() {
        let t = trace(&[&[(4.0, 4.0), (4.0, 4.0), (9.0, 9.0)]]);
        let s = compute_layer_stats(1, &t).unwrap();
        assert_eq!(s.hidden_layers, vec![0, 1]);
        assert_eq!(s.epochs[0].l1.alpha, vec![Some(0.5), Some(0.5)]);
        assert_eq!(s.epochs[0].l1.beta, vec![Some(1.0), Some(1.0)]);
    }

    #[test]
    fn beta_against_last_hidden() {
        let t = trace(&[&[(2.0, 2.0), (4.0, 4.0), (0.0, 0.0)]]);
        let s = compute_layer_stats(1, &t).unwrap();
        assert_eq!(s.epochs[0].signed.beta, vec![Some(0.5), Some(1.0)]);
    }

    #[test]
    fn zero_signed_denominator_is_flagged_not_dropped() {
        let t = trace(&[
            &[(2.0, 3.0), (-2.0, 3.0), (0.0, 1.0)],
            &[(1.0, 3.0), (2.0, 3.0), (0.0, 1.0)],
        ]);
        let s = compute_layer_stats(1, &t).unwrap();
        assert_eq!(s.epochs.len(), 2);
        assert_eq!(s.signed_undefined_epochs, vec![1]);
        assert_eq!(s.epochs[0].signed.alpha, vec![None, None]);
        assert!(s.l1_undefined_epochs.is_empty());
    }

    #[test]
    fn endpoint_delta_score() {
        // alpha trajectories 0.40 -> 0.25 and 0.30 -> 0.28 (third layer absorbs the rest)
        let t = trace(&[
            &[(0.40, 0.40), (0.30, 0.30), (0.30, 0.30), (0.0, 0.0)],
            &[(0.33, 0.33), (0.30, 0.30), (0.37, 0.37), (0.0, 0.0)],
            &[(0.25, 0.25), (0.28, 0.28), (0.47, 0.47), (0.0, 0.0)],
        ]);
        let s = contribution_score(&compute_layer_stats(1, &t).unwrap(), SumVariant::L1).unwrap();
        assert!((s.scores[0] - 0.15).abs() < 1e-12);
        assert!((s.scores[1] - 0.02).abs() < 1e-12);
        assert!(!s.fallback);
    }

    #[test]
    fn flat_trajectory_scores_zero() {
        let e: &[(f64, f64)] = &[(3.0, 3.0), (5.0, 5.0), (1.0, 1.0)];
        let s = contribution_score(&compute_layer_stats(1, &trace(&[e, e, e])).unwrap(), SumVariant::L1)
            .unwrap();
        assert_eq!(s.scores, vec![0.0, 0.0]);
    }

    #[test]
    fn undefined_endpoint_falls_back_inward() {
        let t = trace(&[
            &[(1.0, 1.0), (-1.0, 1.0), (0.0, 1.0)],
            &[(1.0, 1.0), (1.0, 1.0), (0.0, 1.0)],
            &[(3.0, 1.0), (1.0, 1.0), (0.0, 1.0)],
        ]);
        let s = contribution_score(&compute_layer_stats(1, &t).unwrap(), SumVariant::Signed).unwrap();
        assert_eq!((s.from_epoch, s.to_epoch), (2, 3));
        assert!(s.fallback);
        assert!((s.scores[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_epoch_cannot_be_scored() {
        let e: &[(f64, f64)] = &[(1.0, 1.0), (1.0, 1.0)];
        assert!(contribution_score(&compute_layer_stats(1, &trace(&[e])).unwrap(), SumVariant::L1).is_err());
    }

    #[test]
    fn top_k_per_model() {
        let m = select_layers(&[scores(1, &[0.5, 0.3, 0.1, 0.05])], &[5], SelectionPolicy::TopKPerModel { k: 2 })
            .unwrap();
        assert_eq!(m.selected(), vec![LayerRef::new(1, 0), LayerRef::new(1, 1)]);
    }

    #[test]
    fn all_on_two_edges() {
        let s = [scores(1, &[0.1; 4]), scores(2, &[0.2; 4])];
        let m = select_layers(&s, &[5, 5], SelectionPolicy::All).unwrap();
        assert_eq!(m.count(), 8);
        assert!(m.is_selected(LayerRef::new(1, 0)));
        assert!(!m.is_selected(LayerRef::new(1, 4)));
        assert!(!m.is_selected(LayerRef::new(2, 4)));
    }

    #[test]
    fn global_ties_prefer_lower_model_then_layer() {
        let s = [scores(1, &[0.3; 4]), scores(2, &[0.3; 4])];
        let m = select_layers(&s, &[5, 5], SelectionPolicy::TopKGlobal { k: 3 }).unwrap();
        assert_eq!(
            m.selected(),
            vec![LayerRef::new(1, 0), LayerRef::new(1, 1), LayerRef::new(1, 2)]
        );
    }

    #[test]
    fn threshold_and_empty_selection() {
        let s = [scores(1, &[0.5, 0.1]), scores(2, &[0.2, 0.4])];
        let m = select_layers(&s, &[3, 3], SelectionPolicy::Threshold { tau: 0.4 }).unwrap();
        assert_eq!(m.selected(), vec![LayerRef::new(1, 0), LayerRef::new(2, 1)]);
        assert!(select_layers(&s, &[3, 3], SelectionPolicy::Threshold { tau: 0.9 }).is_err());
        assert!(select_layers(&s, &[3, 3], SelectionPolicy::TopKGlobal { k: 0 }).is_err());
    }

    #[test]
    fn layer_ref_text_round_trip() {
        let r = LayerRef::new(2, 10);
        assert_eq!(format!("{r}").parse::<LayerRef>().unwrap(), r);
        for bad in ["E0.L1", "E1L1", "1.2", "E1.Lx", ""] {
            assert!(bad.parse::<LayerRef>().is_err(), "{bad}");
        }
    }

    #[test]
    fn from_refs_rejects_missing_layers() {
        assert!(SelectionMask::from_refs(&[4], &[LayerRef::new(1, 4)]).is_err());
        assert!(SelectionMask::from_refs(&[4], &[LayerRef::new(2, 1)]).is_err());
        assert!(SelectionMask::from_refs(&[4], &[]).is_err());
    }
}
