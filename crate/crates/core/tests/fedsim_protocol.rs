use fedagg::aggregate::{AggWeights, Concentration, Granularity, Parameterization};
use fedagg::datagen::{generate, ClientShard, DatasetSpec};
use fedagg::fedsim::{
    learn_agg_weights, ledger_ratio, local_train, proximal_term, run_federated,
    select_and_evaluate, CommLedger, FlConfig, RunOutput, Strategy,
};
use fedagg::nn::{LossKind, ModelSpec, OptimizerConfig, ParamVector};
use fedagg::rng::{stream, Phase};
use fedagg::Error;

fn setup(k: usize, seed: u64) -> (ModelSpec, Vec<ClientShard>) {
    let mut spec = DatasetSpec::classification(k, 3, 4, seed);
    spec.samples_per_client = 90;
    let model = ModelSpec::mlp(4, &[6], 3, LossKind::CrossEntropy).unwrap();
    (model, generate(&spec).unwrap())
}

fn quick(strategy: Strategy) -> FlConfig {
    FlConfig {
        rounds: 4,
        interval: 2,
        weight_steps: 5,
        local_iters: 5,
        strategy,
        seed: 3,
        ..FlConfig::default()
    }
}

fn autofed(parameterization: Parameterization) -> Strategy {
    Strategy::Autofedavg {
        parameterization,
        granularity: Granularity::Network,
    }
}

fn trained_models(model: &ModelSpec, shards: &[ClientShard], cfg: &FlConfig) -> Vec<ParamVector> {
    let w0 = model.init_params(&mut stream(cfg.seed, 0, 0, Phase::ModelInit));
    shards
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let mut rng = stream(cfg.seed, 1, c as u64, Phase::LocalTrain);
            local_train(s, &w0, model, cfg, 10, &mut rng)
                .unwrap()
                .params
        })
        .collect()
}

fn alpha_rows(run: &RunOutput) -> Vec<Vec<f64>> {
    run.history
        .iter()
        .map(|r| r.alpha.as_ref().unwrap().values().as_slice().to_vec())
        .collect()
}

#[test]
fn zero_local_iterations_return_the_start() {
    let (model, shards) = setup(2, 1);
    let w0 = model.init_params(&mut stream(0, 0, 0, Phase::ModelInit));
    let out = local_train(
        &shards[0],
        &w0,
        &model,
        &FlConfig::default(),
        0,
        &mut stream(0, 1, 0, Phase::LocalTrain),
    )
    .unwrap();
    assert_eq!(out.params, w0);
}

#[test]
fn proximal_term_keeps_local_models_closer() {
    let (model, shards) = setup(2, 2);
    let w0 = model.init_params(&mut stream(0, 0, 0, Phase::ModelInit));
    let drift = |mu: f64| {
        let cfg = FlConfig {
            strategy: Strategy::Fedprox { mu },
            ..FlConfig::default()
        };
        let out = local_train(
            &shards[0],
            &w0,
            &model,
            &cfg,
            50,
            &mut stream(0, 1, 0, Phase::LocalTrain),
        )
        .unwrap();
        out.params.sq_distance(&w0).unwrap().sqrt()
    };
    let (free, prox) = (drift(0.0), drift(0.001));
    assert!(prox < free, "fedprox drift {prox} vs plain {free}");
}

#[test]
fn proximal_gradient_matches_finite_differences() {
    let (model, _) = setup(2, 3);
    let anchor = model.init_params(&mut stream(1, 0, 0, Phase::ModelInit));
    let w = model.init_params(&mut stream(2, 0, 0, Phase::ModelInit));
    let mu = 0.37;
    let (_, grad) = proximal_term(&w, &anchor, mu).unwrap();
    let h = 1e-5;
    let mut num = vec![0.0; w.len()];
    for (i, slot) in num.iter_mut().enumerate() {
        let shifted = |d: f64| {
            let mut v = w.clone();
            v.values_mut()[i] += d;
            proximal_term(&v, &anchor, mu).unwrap().0
        };
        *slot = (shifted(h) - shifted(-h)) / (2.0 * h);
    }
    let diff: f64 = grad
        .values()
        .iter()
        .zip(&num)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = grad.values().iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff / scale < 1e-6, "relative error {}", diff / scale);
}

#[test]
fn zero_learning_rate_session_returns_start() {
    let (model, shards) = setup(3, 4);
    for parameterization in [Parameterization::Softmax, Parameterization::Dirichlet] {
        let cfg = FlConfig {
            beta_optimizer: OptimizerConfig::sgd(0.0),
            ..quick(autofed(parameterization))
        };
        let models = trained_models(&model, &shards, &cfg);
        let c0 = Concentration::symmetric(
            3,
            1,
            cfg.beta_init_value(parameterization),
            parameterization,
        )
        .unwrap();
        let mut ledger = CommLedger::new();
        let out = learn_agg_weights(
            &models,
            &c0,
            &shards,
            &model,
            &cfg,
            Granularity::Network,
            2,
            &mut ledger,
        )
        .unwrap();
        assert!(out.aborted.is_none());
        assert_eq!(out.concentration, c0);
    }
}

#[test]
fn identical_clients_keep_identical_concentrations() {
    let (model, shards) = setup(2, 5);
    let twins = vec![shards[0].clone(), shards[0].clone(), shards[0].clone()];
    let cfg = FlConfig {
        weight_batch_size: 10_000,
        beta_optimizer: OptimizerConfig::sgd(0.5),
        ..quick(autofed(Parameterization::Softmax))
    };
    let w = trained_models(&model, &shards[..1], &cfg).remove(0);
    let models = vec![w.clone(), w.clone(), w];
    let c0 = Concentration::symmetric(3, 1, 0.0, Parameterization::Softmax).unwrap();
    let out = learn_agg_weights(
        &models,
        &c0,
        &twins,
        &model,
        &cfg,
        Granularity::Network,
        2,
        &mut CommLedger::new(),
    )
    .unwrap();
    assert!(out.client_betas.windows(2).all(|p| p[0] == p[1]));
    assert_eq!(out.concentration, out.client_betas[0]);
}

#[test]
fn single_client_weight_is_one() {
    let (model, shards) = setup(2, 6);
    let cfg = quick(autofed(Parameterization::Dirichlet));
    let run = run_federated(&model, &cfg, &shards[..1]).unwrap();
    for row in alpha_rows(&run) {
        assert_eq!(row, vec![1.0]);
    }
    let global = run.final_global.unwrap();
    assert_eq!(global, run.final_local[0]);
    let models = vec![global.clone()];
    let c0 = Concentration::symmetric(1, 1, 6.0, Parameterization::Dirichlet).unwrap();
    let full = FlConfig {
        weight_batch_size: 10_000,
        ..cfg
    };
    let out = learn_agg_weights(
        &models,
        &c0,
        &shards[..1],
        &model,
        &full,
        Granularity::Network,
        4,
        &mut CommLedger::new(),
    )
    .unwrap();
    let local = model.loss(&global, &shards[0].train).unwrap();
    assert!(
        (out.mean_loss - local).abs() < 1e-12,
        "{} vs {local}",
        out.mean_loss
    );
}

#[test]
fn fedavg_sized_uses_train_fractions_every_round() {
    let (model, mut shards) = setup(3, 7);
    for (shard, n) in shards.iter_mut().zip([671, 88, 186]) {
        let idx: Vec<usize> = (0..n).map(|i| i % shard.train.len()).collect();
        shard.train = shard.train.select(&idx);
    }
    let run = run_federated(&model, &quick(Strategy::FedavgSized), &shards).unwrap();
    let expected = AggWeights::proportional(&[671, 88, 186], 1, Granularity::Network).unwrap();
    for row in alpha_rows(&run) {
        assert_eq!(row, expected.values().as_slice());
        for (a, b) in row.iter().zip([0.71005, 0.09312, 0.19683]) {
            assert!((a - b).abs() < 5e-6);
        }
    }
}

#[test]
fn fedavg_even_uses_uniform_weights_every_round() {
    let (model, shards) = setup(4, 8);
    let run = run_federated(&model, &quick(Strategy::FedavgEven), &shards).unwrap();
    for row in alpha_rows(&run) {
        assert_eq!(row, vec![0.25; 4]);
    }
}

#[test]
fn frozen_symmetric_learning_reproduces_fedavg_even() {
    let (model, shards) = setup(3, 9);
    let even = run_federated(&model, &quick(Strategy::FedavgEven), &shards).unwrap();
    for parameterization in [Parameterization::Softmax, Parameterization::Dirichlet] {
        let cfg = FlConfig {
            beta_optimizer: OptimizerConfig::sgd(0.0),
            ..quick(autofed(parameterization))
        };
        let learned = run_federated(&model, &cfg, &shards).unwrap();
        assert_eq!(alpha_rows(&learned), alpha_rows(&even));
        assert_eq!(learned.final_global, even.final_global);
        assert_eq!(learned.final_local, even.final_local);
    }
}

#[test]
fn no_sessions_means_no_extra_traffic() {
    let (model, shards) = setup(3, 10);
    let cfg = FlConfig {
        learn_weights: false,
        ..quick(autofed(Parameterization::Dirichlet))
    };
    let run = run_federated(&model, &cfg, &shards).unwrap();
    assert_eq!(ledger_ratio(&run.ledger), 0.0);
    assert_eq!(run.ledger.total().beta_bytes, 0);
    let plain = run_federated(&model, &quick(Strategy::FedavgSized), &shards).unwrap();
    assert_eq!(ledger_ratio(&plain.ledger), 0.0);
}

#[test]
fn weight_learning_leaves_models_untouched() {
    let (model, shards) = setup(3, 11);
    let cfg = quick(autofed(Parameterization::Dirichlet));
    let models = trained_models(&model, &shards, &cfg);
    let before: Vec<Vec<u8>> = models.iter().map(ParamVector::to_bytes).collect();
    let c0 = Concentration::symmetric(3, 1, 6.0, Parameterization::Dirichlet).unwrap();
    learn_agg_weights(
        &models,
        &c0,
        &shards,
        &model,
        &cfg,
        Granularity::Network,
        2,
        &mut CommLedger::new(),
    )
    .unwrap();
    let after: Vec<Vec<u8>> = models.iter().map(ParamVector::to_bytes).collect();
    assert_eq!(before, after);
}

#[test]
fn concentration_carries_over_between_sessions() {
    let (model, shards) = setup(3, 12);
    let base = FlConfig {
        rounds: 6,
        interval: 3,
        beta_optimizer: OptimizerConfig::adam(0.1),
        ..quick(autofed(Parameterization::Dirichlet))
    };
    let run = run_federated(&model, &base, &shards).unwrap();
    let betas: Vec<_> = run
        .history
        .iter()
        .map(|r| r.beta.clone().unwrap())
        .collect();
    let init = Concentration::symmetric(3, 1, 6.0, Parameterization::Dirichlet).unwrap();
    assert_eq!(betas[0], *init.values());
    assert_eq!(betas[1], *init.values());
    assert_ne!(betas[2], *init.values());
    assert_eq!(betas[3], betas[2]);
    assert_eq!(betas[4], betas[2]);
    assert!(run
        .history
        .iter()
        .map(|r| r.phases.learn)
        .eq([false, false, true, false, false, true]));

    let reinit = run_federated(
        &model,
        &FlConfig {
            reinit_each_session: true,
            ..base
        },
        &shards,
    )
    .unwrap();
    let rb = reinit.history[5].beta.clone().unwrap();
    assert_eq!(reinit.history[2].beta, run.history[2].beta);
    assert_ne!(rb, betas[5]);
}

#[test]
fn thread_count_does_not_change_results() {
    let (model, shards) = setup(4, 13);
    let cfg = quick(autofed(Parameterization::Dirichlet));
    let run_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| run_federated(&model, &cfg, &shards).unwrap())
    };
    let (a, b) = (run_with(1), run_with(4));
    assert_eq!(a.final_global, b.final_global);
    assert_eq!(a.final_local, b.final_local);
    assert_eq!(a.history, b.history);
}

#[test]
fn numerical_failures_name_the_round() {
    let (model, mut shards) = setup(3, 14);
    shards[1].train.inputs.data_mut().fill(f64::NAN);
    let err = run_federated(&model, &quick(Strategy::FedavgSized), &shards).unwrap_err();
    assert!(matches!(err, Error::InRound { .. }), "{err:?}");
    assert!(matches!(err.root(), Error::Numerical(_)), "{err:?}");
    assert!(err.to_string().starts_with("round 1, client 1"), "{err}");
}

#[test]
fn selection_on_empty_history_is_a_config_error() {
    let (model, shards) = setup(3, 15);
    let mut run = run_federated(&model, &quick(Strategy::FedavgEven), &shards).unwrap();
    run.history.clear();
    assert!(matches!(
        select_and_evaluate(&run, &model, &shards),
        Err(Error::Config(_))
    ));
}
