//! Quick self-checks of the numerical core, run by `fedagg check`.

use rand::Rng;

use crate::aggregate::{
    dirichlet_mode, dirichlet_sample, dirichlet_sample_grad, softmax_map, Concentration,
    Granularity, KpMatrix, Parameterization,
};
use crate::datagen::{generate, DatasetSpec};
use crate::error::Result;
use crate::fedsim::{extra_comm_ratio, ledger_ratio, run_federated, AlphaInit, FlConfig, Strategy};
use crate::nn::{Batch, LossKind, Matrix, ModelSpec, Targets};
use crate::rng::{derive_seed, SimRng};
use rand::SeedableRng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail,
    }
}

fn gradient_check(seed: u64) -> Result<CheckResult> {
    let mut rng = SimRng::seed_from_u64(derive_seed(&[seed, 1]));
    let spec = ModelSpec::mlp(4, &[5], 3, LossKind::CrossEntropy)?;
    let w = spec.init_params(&mut rng);
    let rows: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let labels = (0..6).map(|_| rng.gen_range(0..3)).collect();
    let batch = Batch::new(Matrix::from_rows(&rows)?, Targets::Classes(labels))?;
    let (_, g) = spec.loss_and_grad(&w, &batch)?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..w.len() {
        let mut plus = w.clone();
        plus.values_mut()[i] += h;
        let mut minus = w.clone();
        minus.values_mut()[i] -= h;
        let fd = (spec.loss(&plus, &batch)? - spec.loss(&minus, &batch)?) / (2.0 * h);
        let rel = (fd - g.values()[i]).abs() / fd.abs().max(g.values()[i].abs()).max(1e-4);
        worst = worst.max(rel);
    }
    Ok(result(
        "backprop matches finite differences",
        worst < 1e-5,
        format!("max rel err {worst:.2e}"),
    ))
}

fn simplex_check() -> Result<CheckResult> {
    let c = Concentration::new(
        KpMatrix::from_columns(&[vec![3.0, -1.0, 0.5], vec![-40.0, 40.0, 0.0]])?,
        Parameterization::Softmax,
    )?;
    let a = softmax_map(&c)?;
    let mode = dirichlet_mode(&[6.0, 6.0, 6.0])?;
    let mode_err = mode
        .iter()
        .map(|m| (m - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);
    let err = a.simplex_error().max(mode_err);
    Ok(result(
        "simplex maps stay on the simplex",
        err < 1e-12,
        format!("max err {err:.2e}"),
    ))
}

fn implicit_grad_check(seed: u64) -> Result<CheckResult> {
    let mut rng = SimRng::seed_from_u64(derive_seed(&[seed, 2]));
    let beta = [2.0, 3.5, 5.0];
    let draw = dirichlet_sample(&beta, &mut rng);
    let jac = dirichlet_sample_grad(&beta, &draw.gammas)?;
    let col_sum = (0..beta.len())
        .map(|j| jac.iter().map(|row| row[j]).sum::<f64>().abs())
        .fold(0.0, f64::max);
    Ok(result(
        "reparameterized Jacobian preserves the simplex",
        col_sum < 1e-9,
        format!("max column sum {col_sum:.2e}"),
    ))
}

fn protocol_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let data = DatasetSpec::classification(3, 3, 4, seed);
    let shards = generate(&data)?;
    let spec = ModelSpec::mlp(4, &[6], 3, LossKind::CrossEntropy)?;
    let base = FlConfig {
        rounds: 4,
        interval: 2,
        weight_steps: 3,
        local_iters: 3,
        seed,
        ..FlConfig::default()
    };
    let auto = Strategy::Autofedavg {
        parameterization: Parameterization::Dirichlet,
        granularity: Granularity::Network,
    };
    let run = run_federated(
        &spec,
        &FlConfig {
            strategy: auto,
            ..base.clone()
        },
        &shards,
    )?;
    let (got, want) = (ledger_ratio(&run.ledger), extra_comm_ratio(3, 2));
    let ledger = result(
        "peer-model traffic matches (K-1)/(2 t0)",
        (got - want).abs() < 1e-12,
        format!("{got} vs {want}"),
    );

    let sized = run_federated(
        &spec,
        &FlConfig {
            strategy: Strategy::FedavgSized,
            ..base.clone()
        },
        &shards,
    )?;
    let frozen = run_federated(
        &spec,
        &FlConfig {
            strategy: auto,
            learn_weights: false,
            alpha_init: AlphaInit::Sized,
            ..base.clone()
        },
        &shards,
    )?;
    let same = sized.final_global == frozen.final_global;
    let equiv = result(
        "frozen sized weights reproduce FedAvg",
        same,
        format!("bit-identical: {same}"),
    );

    let again = run_federated(
        &spec,
        &FlConfig {
            strategy: auto,
            ..base
        },
        &shards,
    )?;
    let det = run.final_global == again.final_global && run.history == again.history;
    let repro = result("runs are deterministic", det, format!("identical: {det}"));
    Ok(vec![ledger, equiv, repro])
}

/// Runs every check; errors inside a check propagate.
pub fn run_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = vec![
        gradient_check(seed)?,
        simplex_check()?,
        implicit_grad_check(seed)?,
    ];
    out.extend(protocol_checks(seed)?);
    Ok(out)
}
