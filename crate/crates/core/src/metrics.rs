//! Classification metrics for binary labels.

use crate::error::{Error, Result};

fn check(preds: &[u8], labels: &[u8]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::dim("metric", &[preds.len()], &[labels.len()]));
    }
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    Ok(())
}

pub fn accuracy(preds: &[u8], labels: &[u8]) -> Result<f64> {
    check(preds, labels)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// F1 of one class. A class absent from both predictions and labels counts
/// as perfectly handled.
pub fn class_f1(preds: &[u8], labels: &[u8], class: u8) -> Result<f64> {
    check(preds, labels)?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p == class, l == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fneg == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}

/// Macro-averaged F1 over classes 0 and 1.
pub fn f_score(preds: &[u8], labels: &[u8]) -> Result<f64> {
    Ok((class_f1(preds, labels, 0)? + class_f1(preds, labels, 1)?) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let l = [1, 0, 1, 1, 0];
        assert_eq!(accuracy(&l, &l).unwrap(), 1.0);
        assert_eq!(f_score(&l, &l).unwrap(), 1.0);
        let ones = [1, 1, 1];
        assert_eq!(f_score(&ones, &ones).unwrap(), 1.0);
    }

    #[test]
    fn all_wrong_balanced() {
        assert_eq!(accuracy(&[1, 0, 1, 0], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert_eq!(f_score(&[1, 0, 1, 0], &[0, 1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn one_of_each_cell() {
        // TP, FP, FN, TN for class 1
        let preds = [1, 1, 0, 0];
        let labels = [1, 0, 1, 0];
        assert_eq!(class_f1(&preds, &labels, 1).unwrap(), 0.5);
        assert_eq!(class_f1(&preds, &labels, 0).unwrap(), 0.5);
        assert_eq!(f_score(&preds, &labels).unwrap(), 0.5);
        assert_eq!(accuracy(&preds, &labels).unwrap(), 0.5);
    }

    #[test]
    fn length_mismatch() {
        assert!(accuracy(&[1], &[1, 0]).is_err());
        assert!(f_score(&[], &[]).is_err());
    }
}
