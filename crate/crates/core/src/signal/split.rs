use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    /// Share of the train segment held out for validation, taken from its end.
    pub val_fraction_of_train: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.70,
            val_fraction_of_train: 0.08,
        }
    }
}

/// Batch index ranges of a chronological split.
///
/// `fit` and `validation` together form the train segment; `fit`,
/// `validation` and `test` are disjoint and cover every batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub fit: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    pub fn train_len(&self) -> usize {
        self.fit.len() + self.validation.len()
    }

    pub fn train(&self) -> Range<usize> {
        self.fit.start..self.validation.end
    }
}

// guards floor/ceil against representation error such as 0.7 * 10 = 6.999…
const EPS: f64 = 1e-9;

/// First `floor(train_fraction · N)` batches form the train segment, whose
/// last `ceil(val_fraction · |train|)` batches become validation; the rest
/// is test. Nothing is shuffled.
pub fn chronological_split(n_batches: usize, spec: &SplitSpec) -> Result<Split, DataError> {
    if n_batches < 3 {
        return Err(DataError::Invalid(format!(
            "need at least 3 batches to split, got {n_batches}"
        )));
    }
    let frac_ok = |f: f64| f > 0.0 && f < 1.0;
    if !frac_ok(spec.train_fraction) || !frac_ok(spec.val_fraction_of_train) {
        return Err(DataError::Invalid("split fractions must lie in (0, 1)".into()));
    }
    let train = ((spec.train_fraction * n_batches as f64) + EPS).floor() as usize;
    let train = train.clamp(2, n_batches - 1);
    let val = ((spec.val_fraction_of_train * train as f64) - EPS).ceil() as usize;
    let val = val.clamp(1, train - 1);
    Ok(Split {
        fit: 0..train - val,
        validation: train - val..train,
        test: train..n_batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ims_set2_counts() {
        let s = chronological_split(984, &SplitSpec::default()).unwrap();
        assert_eq!(s.train_len(), 688);
        assert_eq!(s.validation.len(), 56);
        assert_eq!(s.test.len(), 296);
        assert_eq!(s.fit, 0..632);
    }

    #[test]
    fn ten_batches() {
        let s = chronological_split(10, &SplitSpec::default()).unwrap();
        assert_eq!((s.train_len(), s.validation.len(), s.test.len()), (7, 1, 3));
    }

    #[test]
    fn too_few_batches() {
        assert!(chronological_split(2, &SplitSpec::default()).is_err());
        assert!(chronological_split(3, &SplitSpec::default()).is_ok());
    }

    proptest! {
        #[test]
        fn fractions_and_coverage(n in 3usize..5000) {
            let s = chronological_split(n, &SplitSpec::default()).unwrap();
            let frac = s.train_len() as f64 / n as f64;
            prop_assert!(frac <= 0.70 + 1e-12 && frac >= 0.70 - 1.0 / n as f64);
            prop_assert_eq!(s.fit.start, 0);
            prop_assert_eq!(s.fit.end, s.validation.start);
            prop_assert_eq!(s.validation.end, s.test.start);
            prop_assert_eq!(s.test.end, n);
            prop_assert!(!s.fit.is_empty() && !s.validation.is_empty() && !s.test.is_empty());
        }
    }
}
