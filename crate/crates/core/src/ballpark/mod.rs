//! Label-count-adaptive classifiers.
//!
//! A class moves through regimes as labels accumulate:
//!
//! | labels   | regime            | model                         |
//! |----------|-------------------|-------------------------------|
//! | 0        | `ZeroLabel`       | none; borrow a style's models |
//! | 1        | `OneNN`           | stored exemplars              |
//! | 2..=19   | `NearestCentroid` | mean + shrunk diagonal variance |
//! | 20..=100 | `Svm`             | linear one-vs-rest SVM        |
//! | 101..    | `DeepEligible`    | pluggable slot, SVM by default |

mod augment;
mod capacity;
mod classify;
mod model;
mod split;
mod svm;
mod train;

pub use augment::{Augmenter, MorphAugmenter};
pub use capacity::{capacity_estimate, CapacityQuery};
pub use classify::{classify, select_by_likelihood, select_model, Hypothesis, StyleCandidate, StyleDensity};
pub use model::{normalize_label, ClassId, ClassModel, Exemplar, ModelPayload, PoolStats, Provenance, Sample};
pub use split::{split_class_experiment, SplitReport};
pub use svm::{train_linear_svm, LinearSvm, SvmParams};
pub use train::{train_class, TrainConfig, TrainContext};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    ZeroLabel,
    OneNN,
    NearestCentroid,
    Svm,
    DeepEligible,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::ZeroLabel,
        Regime::OneNN,
        Regime::NearestCentroid,
        Regime::Svm,
        Regime::DeepEligible,
    ];

    /// Inclusive label-count interval; `None` as upper bound means unbounded.
    pub fn bounds(self) -> (usize, Option<usize>) {
        match self {
            Regime::ZeroLabel => (0, Some(0)),
            Regime::OneNN => (1, Some(1)),
            Regime::NearestCentroid => (2, Some(19)),
            Regime::Svm => (20, Some(100)),
            Regime::DeepEligible => (101, None),
        }
    }

    pub fn contains(self, n: usize) -> bool {
        let (lo, hi) = self.bounds();
        n >= lo && hi.is_none_or(|h| n <= h)
    }
}

pub fn select_ballpark(n_labels: usize) -> Regime {
    match n_labels {
        0 => Regime::ZeroLabel,
        1 => Regime::OneNN,
        2..=19 => Regime::NearestCentroid,
        20..=100 => Regime::Svm,
        _ => Regime::DeepEligible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_table() {
        let got: Vec<Regime> = [0, 1, 2, 3, 5, 19, 20, 50, 100, 101, 250]
            .iter()
            .map(|&n| select_ballpark(n))
            .collect();
        use Regime::*;
        assert_eq!(
            got,
            vec![
                ZeroLabel,
                OneNN,
                NearestCentroid,
                NearestCentroid,
                NearestCentroid,
                NearestCentroid,
                Svm,
                Svm,
                Svm,
                DeepEligible,
                DeepEligible
            ]
        );
    }

    #[test]
    fn intervals_tile_and_are_monotone() {
        let mut prev = Regime::ZeroLabel;
        for n in 0..=1000 {
            let r = select_ballpark(n);
            let hits = Regime::ALL.iter().filter(|g| g.contains(n)).count();
            assert_eq!(hits, 1, "n = {n}");
            assert!(r.contains(n));
            assert!(r >= prev);
            prev = r;
        }
    }
}
