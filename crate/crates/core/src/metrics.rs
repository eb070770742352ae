//! Evaluation metrics: unit accuracy and micro token F1.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::Result;

fn check_aligned(predictions: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<()> {
    if predictions.len() != gold.len() {
        return Err(CoreError::invalid("prediction/gold example counts differ"));
    }
    for (p, g) in predictions.iter().zip(gold.iter()) {
        if p.len() != g.len() {
            return Err(CoreError::invalid("prediction/gold unit counts differ"));
        }
    }
    Ok(())
}

/// Fraction of prediction units that exactly match the gold label.
pub fn accuracy(predictions: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<f64> {
    check_aligned(predictions, gold)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, g) in predictions.iter().zip(gold.iter()) {
        for (a, b) in p.iter().zip(g.iter()) {
            correct += usize::from(a == b);
            total += 1;
        }
    }
    if total == 0 {
        return Err(CoreError::invalid("no prediction units"));
    }
    Ok(correct as f64 / total as f64)
}

/// Micro-averaged token F1 over the non-outside classes: precision and
/// recall are computed over tokens predicted/annotated with any tag other
/// than `outside`. With `outside = None` every class counts, which makes F1
/// coincide with token accuracy.
pub fn token_f1(
    predictions: &[Vec<usize>],
    gold: &[Vec<usize>],
    outside: Option<usize>,
) -> Result<f64> {
    check_aligned(predictions, gold)?;
    let is_tagged = |label: usize| Some(label) != outside;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (p, g) in predictions.iter().zip(gold.iter()) {
        for (&pred, &gold) in p.iter().zip(g.iter()) {
            match (is_tagged(pred), is_tagged(gold)) {
                (true, true) => {
                    if pred == gold {
                        tp += 1;
                    } else {
                        // Wrong tag: counts against precision and recall.
                        fp += 1;
                        fn_ += 1;
                    }
                }
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        // No tagged tokens anywhere and no mistakes: vacuously perfect.
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_predictions_score_one() {
        let gold = vec![vec![1, 2, 0], vec![0, 1]];
        assert_eq!(accuracy(&gold, &gold).unwrap(), 1.0);
        assert_eq!(token_f1(&gold, &gold, Some(0)).unwrap(), 1.0);
    }

    #[test]
    fn all_outside_predictions_give_zero_f1() {
        let preds = vec![vec![0, 0, 0]];
        let gold = vec![vec![0, 1, 2]];
        assert_eq!(token_f1(&preds, &gold, Some(0)).unwrap(), 0.0);
        // Accuracy still credits the outside match.
        assert!((accuracy(&preds, &gold).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f1_fixture_three_tp_one_fp_two_fn() {
        // gold:  1 1 1 2 2 0
        // pred:  1 1 1 0 0 2   -> TP=3 (three 1s), FN=2 (missed 2s),
        //                         FP=1 (spurious 2 on an O token)
        let gold = vec![vec![1, 1, 1, 2, 2, 0]];
        let preds = vec![vec![1, 1, 1, 0, 0, 2]];
        let f1 = token_f1(&preds, &gold, Some(0)).unwrap();
        assert!((f1 - 2.0 * 3.0 / (2.0 * 3.0 + 1.0 + 2.0)).abs() < 1e-12);
        assert!((f1 - 0.6667).abs() < 1e-4);
    }

    #[test]
    fn without_outside_f1_is_accuracy() {
        let preds = vec![vec![0, 1, 1, 2]];
        let gold = vec![vec![0, 1, 2, 2]];
        let f1 = token_f1(&preds, &gold, None).unwrap();
        let acc = accuracy(&preds, &gold).unwrap();
        assert!((f1 - acc).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_rejected() {
        let preds = vec![vec![0, 1]];
        let gold = vec![vec![0, 1, 2]];
        assert!(accuracy(&preds, &gold).is_err());
        assert!(token_f1(&preds, &gold, Some(0)).is_err());
        assert!(accuracy(&preds, &[]).is_err());
    }
}
