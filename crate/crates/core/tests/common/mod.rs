#![allow(dead_code)]

use rand::Rng;

use fedagg::nn::{Batch, LossKind, Matrix, ModelSpec, ParamVector, Targets};

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|got - want| / max(|got|, |want|, 1e-8)` in the Euclidean norm.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let diff: Vec<f64> = got.iter().zip(want).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(got).max(norm(want)).max(1e-8)
}

/// Fourth-order central difference of `f` at 0.
pub fn central_diff(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

pub fn numeric_grad(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> Vec<f64> {
    (0..w.len())
        .map(|i| {
            central_diff(
                |t| {
                    let mut p = w.clone();
                    p.values_mut()[i] += t;
                    spec.loss(&p, batch).unwrap()
                },
                1e-3,
            )
        })
        .collect()
}

pub fn random_batch<R: Rng>(
    r: &mut R,
    rows: usize,
    input: usize,
    output: usize,
    loss: LossKind,
) -> Batch {
    let x: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..input).map(|_| r.gen_range(-2.0..2.0)).collect())
        .collect();
    let targets = match loss {
        LossKind::CrossEntropy => {
            Targets::Classes((0..rows).map(|_| r.gen_range(0..output)).collect())
        }
        LossKind::SoftDice => {
            let m: Vec<Vec<f64>> = (0..rows)
                .map(|_| {
                    (0..output)
                        .map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect();
            Targets::Masks(Matrix::from_rows(&m).unwrap())
        }
    };
    Batch::new(Matrix::from_rows(&x).unwrap(), targets).unwrap()
}

/// Random small MLP, parameters and batch.
pub fn random_case<R: Rng>(r: &mut R) -> (ModelSpec, ParamVector, Batch) {
    let input = r.gen_range(2..6);
    let hidden: Vec<usize> = (0..r.gen_range(0..3)).map(|_| r.gen_range(2..6)).collect();
    let output = r.gen_range(2..5);
    let loss = if r.gen_bool(0.5) {
        LossKind::CrossEntropy
    } else {
        LossKind::SoftDice
    };
    let spec = ModelSpec::mlp(input, &hidden, output, loss).unwrap();
    let w = spec.init_params(r);
    let rows = r.gen_range(1..6);
    let batch = random_batch(r, rows, input, output, loss);
    (spec, w, batch)
}
