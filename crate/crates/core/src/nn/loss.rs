use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Lower clamp applied to predicted probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-12;

/// Tolerance on row sums when validating probability rows.
const PROB_SUM_TOL: f64 = 1e-6;

/// Scalar loss and its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Matrix,
}

/// Mean of squared differences over every entry.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<LossGrad> {
    pred.check_same_shape(target, "mse prediction vs target")?;
    let count = pred.as_slice().len();
    if count == 0 {
        return Err(Error::invalid("mse over an empty batch"));
    }
    let scale = 1.0 / count as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut sum = 0.0;
    for ((g, &p), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let d = p - t;
        sum += d * d;
        *g = 2.0 * d * scale;
    }
    Ok(LossGrad {
        value: sum * scale,
        grad,
    })
}

/// Checks that every row is a probability vector.
pub fn check_probability_rows(m: &Matrix, what: &str) -> Result<()> {
    for (i, row) in m.iter_rows().enumerate() {
        if row.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::invalid(format!(
                "{what}: row {i} has a negative or non-finite entry"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!("{what}: row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// `-(1/n) Σ_rows Σ_k target_k · ln(max(pred_k, ε))` with gradient w.r.t. `pred`.
///
/// `target` may hold hard one-hot labels or another model's soft predictions.
pub fn cross_entropy(pred: &Matrix, target: &Matrix) -> Result<LossGrad> {
    pred.check_same_shape(target, "cross-entropy prediction vs target")?;
    if pred.rows() == 0 {
        return Err(Error::invalid("cross-entropy over an empty batch"));
    }
    check_probability_rows(pred, "cross-entropy prediction")?;
    check_probability_rows(target, "cross-entropy target")?;
    let scale = 1.0 / pred.rows() as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut sum = 0.0;
    for ((g, &p), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        if t == 0.0 {
            continue;
        }
        if p >= LOG_EPS {
            sum -= t * p.ln();
            *g = -t * scale / p;
        } else {
            // clamped: constant in p, so no gradient flows
            sum -= t * LOG_EPS.ln();
        }
    }
    Ok(LossGrad {
        value: sum * scale,
        grad,
    })
}

/// One-hot rows for binary labels: label 1 → (0, 1), label 0 → (1, 0).
pub fn one_hot(labels: &[u8]) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), 2);
    for (i, &l) in labels.iter().enumerate() {
        m.set(i, usize::from(l == 1), 1.0);
    }
    m
}

/// Argmax of a probability pair; ties go to label 1.
#[inline]
pub fn predicted_label(p: &[f64]) -> u8 {
    u8::from(p[1] >= p[0])
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(probs: &Matrix, labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = probs
        .iter_rows()
        .zip(labels)
        .filter(|(p, &l)| predicted_label(p) == l)
        .count();
    hits as f64 / labels.len() as f64
}
