//! Softmax cross-entropy, mean-reduced over the batch.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Returns `(loss, dlogits)` where `loss` is the mean negative
/// log-likelihood and `dlogits = (softmax - onehot) / batch`.
pub fn loss_softmax_xent(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let b = logits.rows();
    let c = logits.cols();
    if labels.len() != b {
        return Err(Error::dim(format!(
            "{} labels for batch of {b}",
            labels.len()
        )));
    }
    for &l in labels {
        if l >= c {
            return Err(Error::LabelOutOfRange { label: l, classes: c });
        }
    }
    let mut dlogits = Matrix::zeros(b, c);
    if b == 0 {
        return Ok((0.0, dlogits));
    }
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    for i in 0..b {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        loss += -(row[labels[i]] - max - log_denom);
        let drow = dlogits.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            let p = (v - max).exp() / denom;
            drow[j] = (p - if j == labels[i] { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    Ok((loss * inv_b, dlogits))
}

/// Row-wise softmax, used by tests and diagnostics.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Matrix::zeros(4, 10);
        let labels = vec![0, 3, 7, 9];
        let (loss, _) = loss_softmax_xent(&logits, &labels).unwrap();
        assert!((loss - (10f64).ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 80.0] {
            let logits = Matrix::from_fn(2, 3, |i, j| if j == i { margin } else { 0.0 });
            let (loss, _) = loss_softmax_xent(&logits, &[0, 1]).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = Matrix::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0));
        let labels = vec![0, 2, 1, 1, 0];
        let (_, grad) = loss_softmax_xent(&logits, &labels).unwrap();
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..3 {
                let mut plus = logits.clone();
                plus.set(i, j, plus.get(i, j) + h);
                let mut minus = logits.clone();
                minus.set(i, j, minus.get(i, j) - h);
                let (lp, _) = loss_softmax_xent(&plus, &labels).unwrap();
                let (lm, _) = loss_softmax_xent(&minus, &labels).unwrap();
                let numeric = (lp - lm) / (2.0 * h);
                assert!(
                    (grad.get(i, j) - numeric).abs() < 1e-7,
                    "({i},{j}): {} vs {numeric}",
                    grad.get(i, j)
                );
            }
        }
    }

    #[test]
    fn label_out_of_range_rejected() {
        let logits = Matrix::zeros(1, 3);
        assert!(matches!(
            loss_softmax_xent(&logits, &[3]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_loss_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = Matrix::from_fn(6, 4, |_, _| rng.random_range(-5.0..5.0));
        let p = softmax(&logits);
        for i in 0..6 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let (loss, _) = loss_softmax_xent(&logits, &[0, 1, 2, 3, 0, 1]).unwrap();
        assert!(loss >= 0.0);
    }

    #[test]
    fn empty_batch_is_vacuous() {
        let logits = Matrix::zeros(0, 4);
        let (loss, d) = loss_softmax_xent(&logits, &[]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(d.rows(), 0);
    }
}
