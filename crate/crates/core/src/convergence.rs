//! Epochs-to-converge on a validation-loss curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceCriterion {
    /// Allowed relative excess over the run minimum.
    pub delta: f64,
    /// Number of consecutive epochs that must stay within the band.
    pub patience: usize,
}

impl Default for ConvergenceCriterion {
    fn default() -> Self {
        Self {
            delta: 0.05,
            patience: 3,
        }
    }
}

impl ConvergenceCriterion {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config("convergence delta must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("convergence patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// Smallest 1-based epoch `e` such that every loss in `[e, e + patience - 1]`
/// is at most `(1 + delta) * min(losses)`. The window must lie inside the
/// curve; `None` means not converged.
pub fn epochs_to_converge(val_losses: &[f64], criterion: &ConvergenceCriterion) -> Option<usize> {
    let min = val_losses.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let band = (1.0 + criterion.delta) * min;
    let p = criterion.patience.max(1);
    let mut run = 0usize;
    for (i, &l) in val_losses.iter().enumerate() {
        if l <= band {
            run += 1;
            if run == p {
                return Some(i + 2 - p);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let l = [10.0, 5.0, 2.0, 1.01, 1.0, 1.0, 1.0];
        assert_eq!(epochs_to_converge(&l, &ConvergenceCriterion::default()), Some(4));
    }

    #[test]
    fn flat_curve_converges_at_once() {
        assert_eq!(
            epochs_to_converge(&[1.0; 4], &ConvergenceCriterion::default()),
            Some(1)
        );
    }

    #[test]
    fn late_drop_does_not_converge() {
        // strictly decreasing; only the last epoch is within 5% of the minimum
        let l = [10.0, 9.0, 8.0, 7.0, 6.0, 1.0];
        assert_eq!(epochs_to_converge(&l, &ConvergenceCriterion::default()), None);
        // hand sweep: epoch 6 is the only candidate and its window [6, 8] leaves the curve
        let band = 1.05;
        let candidates: Vec<usize> = (0..l.len()).filter(|&i| l[i] <= band).map(|i| i + 1).collect();
        assert_eq!(candidates, [6]);
    }

    #[test]
    fn rejects_bad_criterion() {
        assert!(ConvergenceCriterion { delta: 0.0, patience: 3 }.validate().is_err());
        assert!(ConvergenceCriterion { delta: 0.1, patience: 0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn larger_delta_never_converges_later(
            l in proptest::collection::vec(0.01f64..10.0, 1..40),
            d1 in 0.001f64..0.5, extra in 0.0f64..0.5, p in 1usize..5,
        ) {
            let a = epochs_to_converge(&l, &ConvergenceCriterion { delta: d1, patience: p });
            let b = epochs_to_converge(&l, &ConvergenceCriterion { delta: d1 + extra, patience: p });
            match (a, b) {
                (Some(x), Some(y)) => prop_assert!(y <= x),
                (Some(_), None) => prop_assert!(false, "wider band lost convergence"),
                _ => {}
            }
        }
    }
}
