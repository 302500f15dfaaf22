//! Loss and evaluation metrics: softmax cross-entropy with its gradient,
//! accuracy, and support-weighted F1.

use crate::real::Real;
use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("prediction and label lists differ in length ({preds} vs {labels})")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("metrics need at least one sample")]
    Empty,
}

/// Softmax cross-entropy of one sample: returns the loss and its gradient
/// with respect to the logits (`softmax - onehot`). Uses the log-sum-exp
/// shift for stability.
pub fn cross_entropy<F: Real>(
    logits: ArrayView1<F>,
    label: usize,
) -> Result<(F, Array1<F>), MetricError> {
    let classes = logits.len();
    if label >= classes {
        return Err(MetricError::LabelOutOfRange { label, classes });
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let sum_exp: F = logits.iter().map(|&x| (x - max).exp()).sum();
    let log_sum_exp = max + sum_exp.ln();
    let loss = log_sum_exp - logits[label];
    let mut grad = logits.mapv(|x| (x - max).exp() / sum_exp);
    grad[label] = grad[label] - F::one();
    Ok((loss, grad))
}

/// Fraction of positions where prediction equals label.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, MetricError> {
    check_paired(preds, labels)?;
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Confusion counts: `matrix[true][predicted]`.
pub fn confusion_matrix(
    preds: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<Array2<u64>, MetricError> {
    check_paired(preds, labels)?;
    let mut matrix = Array2::zeros((num_classes, num_classes));
    for (&p, &l) in preds.iter().zip(labels) {
        if l >= num_classes {
            return Err(MetricError::LabelOutOfRange {
                label: l,
                classes: num_classes,
            });
        }
        if p >= num_classes {
            return Err(MetricError::LabelOutOfRange {
                label: p,
                classes: num_classes,
            });
        }
        matrix[(l, p)] += 1;
    }
    Ok(matrix)
}

/// Support-weighted F1: per-class `2 tp / (2 tp + fp + fn)` (zero when that
/// denominator is zero), averaged with weights proportional to each class's
/// true-label count.
pub fn weighted_f1(
    preds: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<f64, MetricError> {
    let matrix = confusion_matrix(preds, labels, num_classes)?;
    let total = labels.len() as f64;
    let mut score = 0.0;
    for c in 0..num_classes {
        let tp = matrix[(c, c)] as f64;
        let support: f64 = (0..num_classes).map(|p| matrix[(c, p)] as f64).sum();
        let predicted: f64 = (0..num_classes).map(|l| matrix[(l, c)] as f64).sum();
        let false_neg = support - tp;
        let false_pos = predicted - tp;
        let denom = 2.0 * tp + false_pos + false_neg;
        let f1 = if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
        score += support / total * f1;
    }
    Ok(score)
}

fn check_paired(preds: &[usize], labels: &[usize]) -> Result<(), MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Seed, StreamId};
    use ndarray::{arr1, Array1};
    use rand::RngExt;

    #[test]
    fn uniform_two_class_loss_is_ln_two() {
        let (loss, grad) = cross_entropy(arr1(&[0.0_f64, 0.0]).view(), 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((grad[0] + 0.5).abs() < 1e-15);
        assert!((grad[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn loss_is_shift_invariant_and_stable_for_large_logits() {
        let base = arr1(&[1.0_f64, -0.5, 2.0]);
        let shifted = base.mapv(|x| x + 1000.0);
        let (l1, g1) = cross_entropy(base.view(), 2).unwrap();
        let (l2, g2) = cross_entropy(shifted.view(), 2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for c in 0..3 {
            assert!((g1[c] - g2[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Seed(40).stream(StreamId::Scratch(0));
        for case in 0..50 {
            let classes = 2 + case % 4;
            let label = case % classes;
            let logits =
                Array1::from_shape_simple_fn(classes, || rng.random_range(-3.0_f64..3.0));
            let (_, grad) = cross_entropy(logits.view(), label).unwrap();
            let eps = 1e-6;
            for c in 0..classes {
                let mut plus = logits.clone();
                plus[c] += eps;
                let mut minus = logits.clone();
                minus[c] -= eps;
                let (lp, _) = cross_entropy(plus.view(), label).unwrap();
                let (lm, _) = cross_entropy(minus.view(), label).unwrap();
                let fd = (lp - lm) / (2.0 * eps);
                let rel = (grad[c] - fd).abs() / grad[c].abs().max(1e-3);
                assert!(rel < 1e-6, "case {case} class {c}: {} vs {fd}", grad[c]);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_label() {
        assert!(matches!(
            cross_entropy(arr1(&[0.0_f64, 0.0]).view(), 2),
            Err(MetricError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn all_zero_predictions_give_one_third_weighted_f1() {
        // Class 0: tp=2, fp=2 -> f1 = 2/3; class 1: tp=0 -> f1 = 0.
        // Weights 1/2 each -> 1/3.
        let score = weighted_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((score - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let labels = [0, 1, 2, 1, 0];
        assert!((weighted_f1(&labels, &labels, 3).unwrap() - 1.0).abs() < 1e-12);
        assert!((accuracy(&labels, &labels).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_f1_matches_independent_per_class_tally() {
        let mut rng = Seed(41).stream(StreamId::Scratch(1));
        for _ in 0..30 {
            let n = 5 + (rng.random_range(0..40u64) as usize);
            let classes = 2 + (rng.random_range(0..3u64) as usize);
            let labels: Vec<usize> =
                (0..n).map(|_| rng.random_range(0..classes as u64) as usize).collect();
            let preds: Vec<usize> =
                (0..n).map(|_| rng.random_range(0..classes as u64) as usize).collect();
            let fast = weighted_f1(&preds, &labels, classes).unwrap();

            // Independent tally: count tp/fp/fn per class with raw loops.
            let mut expected = 0.0;
            for c in 0..classes {
                let tp = labels
                    .iter()
                    .zip(&preds)
                    .filter(|(&l, &p)| l == c && p == c)
                    .count() as f64;
                let false_pos = labels
                    .iter()
                    .zip(&preds)
                    .filter(|(&l, &p)| l != c && p == c)
                    .count() as f64;
                let false_neg = labels
                    .iter()
                    .zip(&preds)
                    .filter(|(&l, &p)| l == c && p != c)
                    .count() as f64;
                let support = labels.iter().filter(|&&l| l == c).count() as f64;
                let denom = 2.0 * tp + false_pos + false_neg;
                let f1 = if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
                expected += support / n as f64 * f1;
            }
            assert!((fast - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(accuracy(&[0, 1], &[0]).is_err());
        assert!(weighted_f1(&[], &[], 2).is_err());
    }

    #[test]
    fn accuracy_counts_hits() {
        assert!((accuracy(&[0, 1, 1, 2], &[0, 1, 2, 2]).unwrap() - 0.75).abs() < 1e-12);
    }
}
