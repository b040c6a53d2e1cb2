//! Binary cross-entropy on logits.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean sigmoid binary cross-entropy over a `batch×1` logit column.
///
/// Computed in the log-sum-exp form `max(z,0) − z·y + ln(1 + e^{−|z|})`,
/// which never overflows for finite logits. Returns the scalar loss and
/// `∂loss/∂logits` (already divided by the batch size).
pub fn bce_loss(logits: &Tensor, labels: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 || logits.cols() != 1 {
        return Err(Error::Dimension(format!(
            "logits must be batch×1, got {:?}",
            logits.shape()
        )));
    }
    if labels.shape() != logits.shape() {
        return Err(Error::Dimension(format!(
            "labels shape {:?} does not match logits {:?}",
            labels.shape(),
            logits.shape()
        )));
    }
    for (i, &y) in labels.data().iter().enumerate() {
        if y != 0.0 && y != 1.0 {
            return Err(Error::Data(format!(
                "label at row {i} is {y}, expected 0 or 1"
            )));
        }
    }
    let batch = logits.rows() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.data().iter().zip(labels.data()) {
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - y) / batch);
    }
    let loss = total / batch;
    if !loss.is_finite() {
        return Err(Error::NonFinite("binary cross-entropy loss".into()));
    }
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(vals: &[f64]) -> Tensor {
        Tensor::new(vec![vals.len(), 1], vals.to_vec()).unwrap()
    }

    #[test]
    fn saturated_correct_prediction_is_near_zero() {
        let (loss, _) = bce_loss(&col(&[40.0]), &col(&[1.0])).unwrap();
        assert!(loss <= 1e-12, "loss {loss}");
    }

    #[test]
    fn zero_logit_is_ln2() {
        let (loss, grad) = bce_loss(&col(&[0.0]), &col(&[1.0])).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((grad.data()[0] - (0.5 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair_means_ln2() {
        let (loss, _) = bce_loss(&col(&[0.0, 0.0]), &col(&[0.0, 1.0])).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_binary_labels() {
        let err = bce_loss(&col(&[0.0]), &col(&[0.5])).unwrap_err();
        assert!(matches!(err, crate::error::Error::Data(_)));
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let (loss, grad) = bce_loss(&col(&[1000.0, -1000.0]), &col(&[0.0, 1.0])).unwrap();
        assert!(loss.is_finite());
        assert!((loss - 1000.0).abs() < 1e-9);
        assert!(grad.data().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let logits = [0.3, -1.2, 2.0, 0.0, -0.4];
        let labels = [1.0, 0.0, 1.0, 0.0, 1.0];
        let (_, grad) = bce_loss(&col(&logits), &col(&labels)).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut plus = logits.to_vec();
            let mut minus = logits.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let (lp, _) = bce_loss(&col(&plus), &col(&labels)).unwrap();
            let (lm, _) = bce_loss(&col(&minus), &col(&labels)).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grad.data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
            assert!(rel <= 1e-7, "coordinate {i}: rel error {rel}");
        }
    }
}
