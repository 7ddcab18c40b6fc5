use super::batch::{Matrix, Targets};
use crate::error::{Error, Result};

/// Smoothing constant of the soft Dice loss.
pub const DICE_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax over the output logits, mean negative log-likelihood.
    CrossEntropy,
    /// `1 - (2 sum p t + eps) / (sum p + sum t + eps)` per sample, averaged.
    SoftDice,
}

fn check_shapes(kind: LossKind, predictions: &Matrix, targets: &Targets) -> Result<()> {
    if predictions.rows() == 0 {
        return Err(Error::config("empty batch"));
    }
    match (kind, targets) {
        (LossKind::CrossEntropy, Targets::Classes(c)) => {
            if c.len() != predictions.rows() {
                return Err(Error::config("target count differs from batch size"));
            }
            if let Some(&bad) = c.iter().find(|&&c| c >= predictions.cols()) {
                return Err(Error::config(format!(
                    "class index {bad} out of range for {} outputs",
                    predictions.cols()
                )));
            }
        }
        (LossKind::SoftDice, Targets::Masks(m)) => {
            if m.rows() != predictions.rows() || m.cols() != predictions.cols() {
                return Err(Error::config("mask shape differs from prediction shape"));
            }
        }
        (kind, _) => {
            return Err(Error::config(format!("targets do not fit loss {kind:?}")));
        }
    }
    if predictions.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite predictions"));
    }
    Ok(())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn dice_terms(p: &[f64], t: &[f64]) -> (f64, f64) {
    let inter: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
    let total: f64 = p.iter().sum::<f64>() + t.iter().sum::<f64>();
    (inter, total)
}

/// Mean loss over the batch.
pub fn loss(kind: LossKind, predictions: &Matrix, targets: &Targets) -> Result<f64> {
    check_shapes(kind, predictions, targets)?;
    let n = predictions.rows() as f64;
    let total: f64 = match targets {
        Targets::Classes(c) => (0..predictions.rows())
            .map(|i| {
                let row = predictions.row(i);
                log_sum_exp(row) - row[c[i]]
            })
            .sum(),
        Targets::Masks(m) => (0..predictions.rows())
            .map(|i| {
                let (inter, sum) = dice_terms(predictions.row(i), m.row(i));
                1.0 - (2.0 * inter + DICE_EPS) / (sum + DICE_EPS)
            })
            .sum(),
    };
    Ok(total / n)
}

/// Loss together with its gradient with respect to the predictions.
pub fn loss_and_grad(
    kind: LossKind,
    predictions: &Matrix,
    targets: &Targets,
) -> Result<(f64, Matrix)> {
    check_shapes(kind, predictions, targets)?;
    let n = predictions.rows() as f64;
    let mut grad = Matrix::zeros(predictions.rows(), predictions.cols());
    let mut total = 0.0;
    match targets {
        Targets::Classes(c) => {
            for i in 0..predictions.rows() {
                let row = predictions.row(i);
                let lse = log_sum_exp(row);
                total += lse - row[c[i]];
                let g = grad.row_mut(i);
                for (j, (gj, zj)) in g.iter_mut().zip(row).enumerate() {
                    let p = (zj - lse).exp();
                    *gj = (p - if j == c[i] { 1.0 } else { 0.0 }) / n;
                }
            }
        }
        Targets::Masks(m) => {
            for i in 0..predictions.rows() {
                let p = predictions.row(i);
                let t = m.row(i);
                let (inter, sum) = dice_terms(p, t);
                let num = 2.0 * inter + DICE_EPS;
                let den = sum + DICE_EPS;
                total += 1.0 - num / den;
                // d/dp_j of -num/den = -(2 t_j den - num) / den^2
                for (gj, tj) in grad.row_mut(i).iter_mut().zip(t) {
                    *gj = -(2.0 * tj * den - num) / (den * den) / n;
                }
            }
        }
    }
    Ok((total / n, grad))
}
