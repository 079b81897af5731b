//! Reconstruction-error intrusion detection.
//!
//! An instance is flagged as an attack when its reconstruction RMSE is
//! strictly greater than the calibrated threshold; ties count as normal, so a
//! `max_normal` threshold has no false positives on its own calibration set.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{row_rmse, Network};

/// Per-row reconstruction RMSE.
pub fn score(model: &Network, instances: &Matrix) -> Result<Vec<f64>> {
    let out = model.predict(instances)?;
    row_rmse(&out, instances)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum ThresholdMethod {
    /// Nearest-rank: the `ceil(p * n)`-th smallest score.
    Percentile { p: f64 },
    MaxNormal,
    /// Maximizes Youden's J = TPR - FPR over the observed scores.
    RocOpt,
}

impl Default for ThresholdMethod {
    fn default() -> Self {
        ThresholdMethod::Percentile { p: 0.99 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub method: ThresholdMethod,
    pub calibration_size: usize,
}

/// Minimum calibration size for percentile thresholds.
pub const MIN_PERCENTILE_SCORES: usize = 20;

/// Calibrates a threshold. Percentile and max-normal methods expect scores of
/// normal instances only; `RocOpt` needs `labels`.
pub fn calibrate(scores: &[f64], labels: Option<&[u8]>, method: ThresholdMethod) -> Result<Threshold> {
    if scores.is_empty() {
        return Err(Error::Calibration("no scores to calibrate on".into()));
    }
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Calibration("scores must be finite and non-negative".into()));
    }
    let value = match method {
        ThresholdMethod::Percentile { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Calibration(format!("percentile must be in (0,1], got {p}")));
            }
            if scores.len() < MIN_PERCENTILE_SCORES {
                return Err(Error::Calibration(format!(
                    "percentile calibration needs at least {MIN_PERCENTILE_SCORES} scores, got {}",
                    scores.len()
                )));
            }
            let mut s = scores.to_vec();
            s.sort_by(f64::total_cmp);
            // nearest rank, guarded against p*n landing a hair above an integer
            let rank = libm::ceil(p * s.len() as f64 - 1e-9).max(1.0) as usize;
            s[rank.min(s.len()) - 1]
        }
        ThresholdMethod::MaxNormal => scores.iter().copied().fold(0.0, f64::max),
        ThresholdMethod::RocOpt => {
            let labels = labels.ok_or_else(|| {
                Error::Calibration("roc_opt calibration requires labels".into())
            })?;
            if labels.len() != scores.len() {
                return Err(shape_err("calibration labels", scores.len(), labels.len()));
            }
            youden_threshold(scores, labels)?
        }
    };
    Ok(Threshold {
        value,
        method,
        calibration_size: scores.len(),
    })
}

/// Candidate thresholds are the observed scores (attack iff score > theta).
/// The smallest theta reaching the best J wins.
fn youden_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Calibration("roc_opt needs both normal and attack scores".into()));
    }
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sweeping theta upward through the sorted scores; at theta = s[i] every
    // row with score <= s[i] is normal
    let mut best = (f64::NEG_INFINITY, pairs[0].0);
    let (mut fn_, mut tn) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        let theta = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == theta {
            if pairs[i].1 == 1 {
                fn_ += 1;
            } else {
                tn += 1;
            }
            i += 1;
        }
        let tpr = (pos - fn_) as f64 / pos as f64;
        let fpr = (neg - tn) as f64 / neg as f64;
        let j = tpr - fpr;
        if j > best.0 {
            best = (j, theta);
        }
    }
    Ok(best.1)
}

/// Confusion counts and derived rates, with attacks as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Absent when nothing was flagged.
    pub precision: Option<f64>,
    /// Absent when there are no attacks.
    pub tpr: Option<f64>,
    /// Absent when there are no normal instances.
    pub fpr: Option<f64>,
    pub threshold: Option<Threshold>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl DetectionReport {
    pub fn from_counts(tp: usize, fn_: usize, fp: usize, tn: usize) -> Self {
        let total = tp + fn_ + fp + tn;
        Self {
            tp,
            fn_,
            fp,
            tn,
            total,
            accuracy: ratio(tp + tn, total).unwrap_or(0.0),
            precision: ratio(tp, tp + fp),
            tpr: ratio(tp, tp + fn_),
            fpr: ratio(fp, fp + tn),
            threshold: None,
        }
    }

    /// Pools the counts of several reports.
    pub fn micro_average(reports: &[DetectionReport]) -> Self {
        let sum = |f: fn(&DetectionReport) -> usize| reports.iter().map(f).sum();
        Self::from_counts(sum(|r| r.tp), sum(|r| r.fn_), sum(|r| r.fp), sum(|r| r.tn))
    }

    pub fn accuracy_percent(&self) -> f64 {
        100.0 * self.accuracy
    }

    /// Columns: TP, FN, FP, TN, total, accuracy (%) with two decimals.
    pub fn csv_row(&self) -> alloc::string::String {
        format!(
            "{},{},{},{},{},{:.2}",
            self.tp,
            self.fn_,
            self.fp,
            self.tn,
            self.total,
            self.accuracy_percent()
        )
    }

    pub const CSV_HEADER: &'static str = "attack_as_attack_tp,attack_as_normal_fn,normal_as_attack_fp,normal_as_normal_tn,total,accuracy_percent";
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classification {
    Report(DetectionReport),
    /// Predicted labels when ground truth is unavailable.
    Labels(Vec<u8>),
}

/// 1 iff `score > theta`.
pub fn predict_labels(scores: &[f64], theta: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s > theta)).collect()
}

pub fn classify(scores: &[f64], threshold: &Threshold, labels: Option<&[u8]>) -> Result<Classification> {
    let theta = threshold.value;
    if theta.is_nan() {
        return Err(Error::Calibration("threshold is NaN".into()));
    }
    let pred = predict_labels(scores, theta);
    let Some(labels) = labels else {
        return Ok(Classification::Labels(pred));
    };
    if labels.len() != scores.len() {
        return Err(shape_err("classification labels", scores.len(), labels.len()));
    }
    let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
    for (&p, &l) in pred.iter().zip(labels) {
        match (l, p) {
            (1, 1) => tp += 1,
            (1, _) => fn_ += 1,
            (_, 1) => fp += 1,
            _ => tn += 1,
        }
    }
    let mut r = DetectionReport::from_counts(tp, fn_, fp, tn);
    r.threshold = Some(*threshold);
    Ok(Classification::Report(r))
}

/// Scores, classifies and returns the report; labels are required.
pub fn evaluate(model: &Network, instances: &Matrix, labels: &[u8], threshold: &Threshold) -> Result<DetectionReport> {
    let s = score(model, instances)?;
    match classify(&s, threshold, Some(labels))? {
        Classification::Report(r) => Ok(r),
        Classification::Labels(_) => unreachable!("labels were supplied"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn fixed(value: f64) -> Threshold {
        Threshold {
            value,
            method: ThresholdMethod::MaxNormal,
            calibration_size: 0,
        }
    }

    fn report(scores: &[f64], labels: &[u8], theta: f64) -> DetectionReport {
        match classify(scores, &fixed(theta), Some(labels)).unwrap() {
            Classification::Report(r) => r,
            _ => unreachable!(),
        }
    }

    #[test]
    fn nearest_rank_percentile() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = calibrate(&s, None, ThresholdMethod::Percentile { p: 0.99 }).unwrap();
        assert_eq!(t.value, 99.0);
        assert_eq!(t.calibration_size, 100);
    }

    #[test]
    fn percentile_needs_twenty_scores() {
        let s = vec![1.0; 19];
        assert!(calibrate(&s, None, ThresholdMethod::Percentile { p: 0.5 }).is_err());
    }

    #[test]
    fn max_normal() {
        let t = calibrate(&[1.0, 5.0, 3.0], None, ThresholdMethod::MaxNormal).unwrap();
        assert_eq!(t.value, 5.0);
        // ties are normal: no false positives on the calibration set
        let r = report(&[1.0, 5.0, 3.0], &[0, 0, 0], t.value);
        assert_eq!(r.fp, 0);
    }

    #[test]
    fn roc_opt_requires_labels() {
        assert!(calibrate(&[1.0, 2.0], None, ThresholdMethod::RocOpt).is_err());
    }

    #[test]
    fn roc_opt_separates_separable_scores() {
        let scores = [0.1, 0.3, 0.2, 0.9, 1.2, 0.8];
        let labels = [0, 0, 0, 1, 1, 1];
        let t = calibrate(&scores, Some(&labels), ThresholdMethod::RocOpt).unwrap();
        assert!(t.value >= 0.3 && t.value < 0.8);
        let r = report(&scores, &labels, t.value);
        assert_eq!(r.tpr.unwrap() - r.fpr.unwrap(), 1.0);
    }

    #[test]
    fn published_rows_reproduce_accuracy() {
        let r = DetectionReport::from_counts(200, 0, 19, 355);
        assert_eq!(r.total, 574);
        assert_eq!(alloc::format!("{:.2}", r.accuracy_percent()), "96.69");
        let r = DetectionReport::from_counts(188, 0, 0, 511);
        assert_eq!(alloc::format!("{:.2}", r.accuracy_percent()), "100.00");
        assert_eq!(r.precision, Some(1.0));
        assert_eq!(r.csv_row(), "188,0,0,511,699,100.00");
    }

    #[test]
    fn infinite_threshold_flags_nothing() {
        let r = report(&[0.5, 9.0, 1e300], &[1, 1, 0], f64::INFINITY);
        assert_eq!((r.tp, r.fp), (0, 0));
        assert_eq!(r.precision, None);
    }

    #[test]
    fn unlabeled_classification_returns_labels() {
        match classify(&[0.1, 0.5, 0.7], &fixed(0.5), None).unwrap() {
            Classification::Labels(l) => assert_eq!(l, vec![0, 0, 1]),
            _ => panic!(),
        }
    }

    fn check_identities(r: &DetectionReport) {
        assert_eq!(r.tp + r.fn_ + r.fp + r.tn, r.total);
        assert_eq!(r.accuracy, (r.tp + r.tn) as f64 / r.total as f64);
        assert_eq!(r.precision, ratio(r.tp, r.tp + r.fp));
        assert_eq!(r.tpr, ratio(r.tp, r.tp + r.fn_));
        assert_eq!(r.fpr, ratio(r.fp, r.fp + r.tn));
    }

    proptest! {
        #[test]
        fn raising_threshold_is_monotone(
            data in proptest::collection::vec((0.0f64..10.0, 0u8..2), 1..60),
            a in 0.0f64..10.0, b in 0.0f64..10.0,
        ) {
            let (s, l): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let rl = report(&s, &l, lo);
            let rh = report(&s, &l, hi);
            prop_assert!(rh.fp <= rl.fp);
            prop_assert!(rh.fn_ >= rl.fn_);
            check_identities(&rl);
            check_identities(&rh);
        }

        #[test]
        fn invariant_under_increasing_transform(
            data in proptest::collection::vec((0.0f64..5.0, 0u8..2), 1..40),
            theta in 0.0f64..5.0,
        ) {
            let (s, l): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
            let t: Vec<f64> = s.iter().map(|v| libm::exp(*v) * 3.0 + 1.0).collect();
            let a = report(&s, &l, theta);
            let b = report(&t, &l, libm::exp(theta) * 3.0 + 1.0);
            prop_assert_eq!((a.tp, a.fn_, a.fp, a.tn), (b.tp, b.fn_, b.fp, b.tn));
        }
    }
}
