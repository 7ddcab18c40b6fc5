use super::weights::{AggWeights, Concentration, Granularity, KpMatrix, Parameterization};
use crate::error::{Error, Result};

fn granularity_for(groups: usize) -> Granularity {
    if groups == 1 {
        Granularity::Network
    } else {
        Granularity::Layer
    }
}

/// Column-wise softmax, computed with the column maximum subtracted.
pub fn softmax_map(c: &Concentration) -> Result<AggWeights> {
    if c.parameterization() != Parameterization::Softmax {
        return Err(Error::config("softmax_map needs a softmax concentration"));
    }
    let mut out = KpMatrix::zeros(c.clients(), c.groups());
    for p in 0..c.groups() {
        softmax_into(c.column(p), out.column_mut(p));
    }
    AggWeights::new(out, granularity_for(c.groups()))
}

pub(crate) fn softmax_into(beta: &[f64], out: &mut [f64]) {
    let max = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, b) in out.iter_mut().zip(beta) {
        *o = (b - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Pulls `dL/dalpha` back through the softmax:
/// `dL/dbeta_k = alpha_k (dL/dalpha_k - sum_i alpha_i dL/dalpha_i)` per column.
pub fn softmax_backward(d_alpha: &KpMatrix, a: &AggWeights) -> Result<KpMatrix> {
    if !d_alpha.same_shape(a.values()) {
        return Err(Error::config("gradient shape differs from weight shape"));
    }
    let mut out = KpMatrix::zeros(a.clients(), a.groups());
    for p in 0..a.groups() {
        let alpha = a.column(p);
        let g = d_alpha.column(p);
        let inner: f64 = alpha.iter().zip(g).map(|(x, y)| x * y).sum();
        for (o, (x, y)) in out.column_mut(p).iter_mut().zip(alpha.iter().zip(g)) {
            *o = x * (y - inner);
        }
    }
    Ok(out)
}
