//! Precision, recall and F1 with anomalous as the positive class.

use serde::{Deserialize, Serialize};

use super::{AnomalyVerdict, ModelError};
use crate::signal::Label;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any ratio had a zero denominator and was reported as 0.
    pub undefined: bool,
}

impl DetectionMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let mut undefined = false;
        let mut ratio = |num: f64, den: f64| {
            if den == 0.0 {
                undefined = true;
                0.0
            } else {
                num / den
            }
        };
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
            precision,
            recall,
            f1,
            undefined,
        }
    }
}

pub fn evaluate_detection(verdicts: &[AnomalyVerdict], labels: &[Label]) -> Result<DetectionMetrics, ModelError> {
    if verdicts.len() != labels.len() {
        return Err(ModelError::Invalid(format!(
            "{} verdicts but {} labels",
            verdicts.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (v, &truth) in verdicts.iter().zip(labels) {
        match (v.label, truth) {
            (Label::Anomalous, Label::Anomalous) => tp += 1,
            (Label::Anomalous, Label::Normal) => fp += 1,
            (Label::Normal, Label::Anomalous) => fn_ += 1,
            (Label::Normal, Label::Normal) => tn += 1,
        }
    }
    Ok(DetectionMetrics::from_counts(tp, fp, fn_, tn))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdicts(labels: &[Label]) -> Vec<AnomalyVerdict> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| AnomalyVerdict { batch_index: i, score: 0.0, threshold: 0.0, label })
            .collect()
    }

    #[test]
    fn perfect() {
        let truth = [Label::Normal, Label::Anomalous, Label::Normal];
        let m = evaluate_detection(&verdicts(&truth), &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.undefined), (1.0, 1.0, 1.0, false));
    }

    #[test]
    fn all_normal_predictions() {
        let truth = [Label::Normal, Label::Anomalous];
        let m = evaluate_detection(&verdicts(&[Label::Normal, Label::Normal]), &truth).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!(m.undefined);
    }

    #[test]
    fn reported_shape() {
        let m = DetectionMetrics::from_counts(33, 2, 0, 100);
        assert!((m.precision - 0.943).abs() < 5e-4);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 0.971).abs() < 5e-4);
    }

    #[test]
    fn length_mismatch() {
        assert!(evaluate_detection(&verdicts(&[Label::Normal]), &[]).is_err());
    }
}
