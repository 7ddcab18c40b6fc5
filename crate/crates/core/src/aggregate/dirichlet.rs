use rand::Rng;
use rand_distr::StandardNormal;

use super::special::{gamma_p, gamma_pdf, ln_gamma};
use super::weights::{AggWeights, Concentration, Granularity, KpMatrix, Parameterization};
use crate::error::{Error, Result};

/// `ln Dir(alpha | beta)`.
pub fn dirichlet_logpdf(alpha: &[f64], beta: &[f64]) -> Result<f64> {
    if alpha.len() != beta.len() || alpha.is_empty() {
        return Err(Error::config("alpha and beta lengths differ"));
    }
    if beta.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::domain("concentrations must be positive"));
    }
    if alpha
        .iter()
        .any(|&a| !(a > 0.0 && a < 1.0) && alpha.len() > 1)
    {
        return Err(Error::domain(
            "alpha must lie in the interior of the simplex",
        ));
    }
    let ln_b: f64 = beta.iter().map(|&b| ln_gamma(b)).sum::<f64>() - ln_gamma(beta.iter().sum());
    let kernel: f64 = alpha
        .iter()
        .zip(beta)
        .map(|(a, b)| (b - 1.0) * a.ln())
        .sum();
    Ok(kernel - ln_b)
}

/// Mode `(beta_k - 1) / (sum beta - K)`; requires every `beta_k > 1`.
pub fn dirichlet_mode(beta: &[f64]) -> Result<Vec<f64>> {
    if beta.is_empty() {
        return Err(Error::config("empty concentration"));
    }
    if let Some(b) = beta.iter().find(|&&b| !(b > 1.0)) {
        return Err(Error::domain(format!(
            "Dirichlet mode needs every concentration above 1, got {b}"
        )));
    }
    let denom = beta.iter().sum::<f64>() - beta.len() as f64;
    Ok(beta.iter().map(|b| (b - 1.0) / denom).collect())
}

/// Mode of every column, as aggregation weights.
pub fn mode_weights(c: &Concentration) -> Result<AggWeights> {
    if c.parameterization() != Parameterization::Dirichlet {
        return Err(Error::config(
            "mode_weights needs a Dirichlet concentration",
        ));
    }
    let cols = (0..c.groups())
        .map(|p| dirichlet_mode(c.column(p)))
        .collect::<Result<Vec<_>>>()?;
    AggWeights::new(KpMatrix::from_columns(&cols)?, granularity_for(c.groups()))
}

fn granularity_for(groups: usize) -> Granularity {
    if groups == 1 {
        Granularity::Network
    } else {
        Granularity::Layer
    }
}

/// Unit-scale Gamma draw by Marsaglia and Tsang's squeeze method; shapes below
/// one use `Gamma(shape + 1) * U^(1/shape)`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u: f64 = rng.gen();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.gen();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// A Dirichlet sample with the Gamma draws it was normalized from.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletDraw {
    pub alpha: Vec<f64>,
    pub gammas: Vec<f64>,
}

pub fn dirichlet_sample<R: Rng + ?Sized>(beta: &[f64], rng: &mut R) -> DirichletDraw {
    let gammas: Vec<f64> = beta.iter().map(|&b| sample_gamma(b, rng)).collect();
    let sum: f64 = gammas.iter().sum();
    DirichletDraw {
        alpha: gammas.iter().map(|z| z / sum).collect(),
        gammas,
    }
}

/// Samples every column of `c`; also returns the per-column Gamma draws.
pub fn sample_weights<R: Rng + ?Sized>(
    c: &Concentration,
    rng: &mut R,
) -> Result<(AggWeights, Vec<Vec<f64>>)> {
    if c.parameterization() != Parameterization::Dirichlet {
        return Err(Error::config(
            "sample_weights needs a Dirichlet concentration",
        ));
    }
    let draws: Vec<DirichletDraw> = (0..c.groups())
        .map(|p| dirichlet_sample(c.column(p), rng))
        .collect();
    let cols: Vec<Vec<f64>> = draws.iter().map(|d| d.alpha.clone()).collect();
    let weights = AggWeights::new(KpMatrix::from_columns(&cols)?, granularity_for(c.groups()))?;
    Ok((weights, draws.into_iter().map(|d| d.gammas).collect()))
}

/// Implicit reparameterization gradient of a unit-scale Gamma draw:
/// `dz/dshape = -(dF/dshape)(z) / f(z)`.
///
/// `dF/dshape` is a central difference of the regularized incomplete gamma
/// with step `1e-4 * max(1, shape)` (capped at `shape / 2`).
pub fn gamma_sample_grad(z: f64, shape: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::domain(format!(
            "gamma draw must be positive, got {z}"
        )));
    }
    if !(shape > 0.0) {
        return Err(Error::domain("gamma shape must be positive"));
    }
    let h = (1e-4 * shape.max(1.0)).min(0.5 * shape);
    let dcdf = (gamma_p(shape + h, z) - gamma_p(shape - h, z)) / (2.0 * h);
    let pdf = gamma_pdf(shape, z);
    if pdf <= 0.0 {
        return Err(Error::numerical(format!(
            "gamma density underflow at z = {z}"
        )));
    }
    Ok(-dcdf / pdf)
}

/// Jacobian `J[i][j] = d alpha_i / d beta_j` of `alpha = z / sum z` where
/// `z_j ~ Gamma(beta_j)` are the given draws.
pub fn dirichlet_sample_grad(beta: &[f64], gammas: &[f64]) -> Result<Vec<Vec<f64>>> {
    if beta.len() != gammas.len() {
        return Err(Error::config("one gamma draw per concentration expected"));
    }
    let dz = beta
        .iter()
        .zip(gammas)
        .map(|(&b, &z)| gamma_sample_grad(z, b))
        .collect::<Result<Vec<_>>>()?;
    let sum: f64 = gammas.iter().sum();
    let k = beta.len();
    let mut jac = vec![vec![0.0; k]; k];
    for (i, row) in jac.iter_mut().enumerate() {
        let alpha_i = gammas[i] / sum;
        for (j, entry) in row.iter_mut().enumerate() {
            let delta = if i == j { 1.0 } else { 0.0 };
            *entry = (delta - alpha_i) / sum * dz[j];
        }
    }
    Ok(jac)
}

/// Pulls `dL/dalpha` back to `dL/dbeta` through the sampled weights.
pub fn dirichlet_backward(
    d_alpha: &KpMatrix,
    c: &Concentration,
    gammas: &[Vec<f64>],
) -> Result<KpMatrix> {
    if !d_alpha.same_shape(c.values()) || gammas.len() != c.groups() {
        return Err(Error::config(
            "gradient shape differs from concentration shape",
        ));
    }
    let mut out = KpMatrix::zeros(c.clients(), c.groups());
    for (p, z) in gammas.iter().enumerate() {
        let jac = dirichlet_sample_grad(c.column(p), z)?;
        let g = d_alpha.column(p);
        for (j, o) in out.column_mut(p).iter_mut().enumerate() {
            *o = (0..c.clients()).map(|i| g[i] * jac[i][j]).sum();
        }
    }
    Ok(out)
}
