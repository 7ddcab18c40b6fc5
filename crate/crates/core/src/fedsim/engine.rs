use rand::seq::index;
use rayon::prelude::*;

use super::config::{AlphaInit, FlConfig, Strategy};
use super::ledger::CommLedger;
use super::log::{Phases, RoundLog};
use crate::aggregate::{
    alpha_grad, clamp_dirichlet, dirichlet_backward, mix_models, mode_weights, sample_weights,
    softmax_backward, softmax_map, AggWeights, Concentration, Granularity, KpMatrix,
    Parameterization,
};
use crate::datagen::{client_sizes, ClientShard};
use crate::error::{Error, Result};
use crate::nn::{Batch, ModelSpec, OptState, ParamVector};
use crate::rng::{stream, Phase, SimRng};

/// Mini-batch drawn without replacement; the whole split when it is smaller
/// than `size`.
pub fn sample_batch(data: &Batch, size: usize, rng: &mut SimRng) -> Batch {
    if size >= data.len() {
        return data.clone();
    }
    let idx = index::sample(rng, data.len(), size).into_vec();
    data.select(&idx)
}

/// `mu/2 |w - anchor|^2` and its gradient `mu (w - anchor)`.
pub fn proximal_term(w: &ParamVector, anchor: &ParamVector, mu: f64) -> Result<(f64, ParamVector)> {
    let value = 0.5 * mu * w.sq_distance(anchor)?;
    let mut grad = w.clone();
    grad.axpy(-1.0, anchor)?;
    grad.scale(mu);
    Ok((value, grad))
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub params: ParamVector,
    /// Mean mini-batch loss over the local steps (full training loss at the
    /// starting point when no step is taken).
    pub mean_loss: f64,
}

/// `iters` optimizer steps on the shard's training split starting at `w_init`.
/// Under FedProx the proximal term is anchored at `w_init`.
pub fn local_train(
    shard: &ClientShard,
    w_init: &ParamVector,
    spec: &ModelSpec,
    cfg: &FlConfig,
    iters: usize,
    rng: &mut SimRng,
) -> Result<LocalOutcome> {
    if iters == 0 {
        return Ok(LocalOutcome {
            params: w_init.clone(),
            mean_loss: spec.loss(w_init, &shard.train)?,
        });
    }
    let mu = match cfg.strategy {
        Strategy::Fedprox { mu } => mu,
        _ => 0.0,
    };
    let mut w = w_init.clone();
    let mut opt = OptState::new(cfg.local_optimizer, w.len());
    let mut total = 0.0;
    for step in 0..iters {
        let batch = sample_batch(&shard.train, cfg.batch_size, rng);
        let (mut loss, mut grad) = spec
            .loss_and_grad(&w, &batch)
            .map_err(|e| Error::numerical(format!("local step {step}: {e}")))?;
        if mu > 0.0 {
            let (penalty, pg) = proximal_term(&w, w_init, mu)?;
            loss += penalty;
            grad.axpy(1.0, &pg)?;
        }
        if !loss.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite loss at local step {step}"
            )));
        }
        total += loss;
        opt.apply(w.values_mut(), grad.values())
            .map_err(|e| Error::numerical(format!("local step {step}: {e}")))?;
    }
    Ok(LocalOutcome {
        params: w,
        mean_loss: total / iters as f64,
    })
}

/// `gamma(beta)`: softmax, or the Dirichlet mode.
pub fn weights_from_concentration(c: &Concentration) -> Result<AggWeights> {
    match c.parameterization() {
        Parameterization::Softmax => softmax_map(c),
        Parameterization::Dirichlet => mode_weights(c),
    }
}

/// A concentration whose image under `gamma` is `alpha` (up to rounding).
fn concentration_for(
    alpha: &AggWeights,
    parameterization: Parameterization,
    beta_init: f64,
) -> Result<Concentration> {
    let k = alpha.clients() as f64;
    let mut values = alpha.values().clone();
    match parameterization {
        Parameterization::Softmax => values.as_mut_slice().iter_mut().for_each(|a| *a = a.ln()),
        Parameterization::Dirichlet => {
            let mass = k * (beta_init - 1.0);
            values
                .as_mut_slice()
                .iter_mut()
                .for_each(|a| *a = 1.0 + mass * *a);
            clamp_dirichlet(values.as_mut_slice());
        }
    }
    Concentration::new(values, parameterization)
}

/// Result of one weight-learning session.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub concentration: Concentration,
    /// Per-client copies from the final completed step.
    pub client_betas: Vec<Concentration>,
    /// Mean weight-learning loss over all steps and clients.
    pub mean_loss: f64,
    /// Set when a client produced a non-finite update; `concentration` is
    /// then the session's starting value.
    pub aborted: Option<String>,
}

/// Gradient of one client's mini-batch loss with respect to the concentration.
fn concentration_grad(
    models: &[ParamVector],
    beta: &Concentration,
    batch: &Batch,
    spec: &ModelSpec,
    granularity: Granularity,
    rng: &mut SimRng,
) -> Result<(f64, KpMatrix)> {
    let (alpha, gammas) = match beta.parameterization() {
        Parameterization::Softmax => (softmax_map(beta)?, None),
        Parameterization::Dirichlet => {
            let (a, z) = sample_weights(beta, rng)?;
            (a, Some(z))
        }
    };
    let mixed = mix_models(models, &alpha)?;
    let (loss, d_w) = spec.loss_and_grad(&mixed, batch)?;
    let d_alpha = alpha_grad(&d_w, models, granularity)?;
    let d_beta = match gammas {
        None => softmax_backward(&d_alpha, &alpha)?,
        Some(z) => dirichlet_backward(&d_alpha, beta, &z)?,
    };
    Ok((loss, d_beta))
}

/// Learns the concentration with the client models held fixed.
///
/// Each of the `S` steps broadcasts `beta`, lets every client take one
/// optimizer step on a mini-batch of its own training data, and averages the
/// returned copies. `round` keys the random streams.
#[allow(clippy::too_many_arguments)]
pub fn learn_agg_weights(
    models: &[ParamVector],
    c0: &Concentration,
    shards: &[ClientShard],
    spec: &ModelSpec,
    cfg: &FlConfig,
    granularity: Granularity,
    round: usize,
    ledger: &mut CommLedger,
) -> Result<SessionOutcome> {
    let k = models.len();
    if shards.len() != k || c0.clients() != k {
        return Err(Error::config(
            "one shard and one concentration row per model required",
        ));
    }
    let model_bytes = models[0].serialized_len() as u64;
    ledger.send_peer_models((k * (k - 1)) as u64, model_bytes);

    let mut rngs: Vec<SimRng> = (0..k)
        .map(|c| stream(cfg.seed, round as u64, c as u64, Phase::LearnWeights))
        .collect();
    let mut opts: Vec<OptState> = (0..k)
        .map(|_| OptState::new(cfg.beta_optimizer, c0.values().as_slice().len()))
        .collect();
    let mut beta = c0.clone();
    let mut client_betas = vec![c0.clone(); k];
    let mut loss_sum = 0.0;

    for step in 0..cfg.weight_steps {
        ledger.exchange_beta(k as u64, k as u64, beta.payload_bytes() as u64);
        let updates: Vec<Result<(f64, Concentration)>> = rngs
            .par_iter_mut()
            .zip(opts.par_iter_mut())
            .zip(shards.par_iter())
            .map(|((rng, opt), shard)| {
                let batch = sample_batch(&shard.train, cfg.weight_batch_size, rng);
                let (loss, grad) =
                    concentration_grad(models, &beta, &batch, spec, granularity, rng)?;
                let mut next = beta.values().clone();
                opt.apply(next.as_mut_slice(), grad.as_slice())?;
                Ok((loss, beta.with_values(next)?))
            })
            .collect();
        let mut fresh = Vec::with_capacity(k);
        for (client, u) in updates.into_iter().enumerate() {
            match u {
                Ok((loss, b)) if loss.is_finite() => {
                    loss_sum += loss;
                    fresh.push(b);
                }
                other => {
                    let reason = match other {
                        Err(e) => e.to_string(),
                        Ok(_) => "non-finite loss".into(),
                    };
                    return Ok(SessionOutcome {
                        concentration: c0.clone(),
                        client_betas,
                        mean_loss: f64::NAN,
                        aborted: Some(format!("client {client}, step {step}: {reason}")),
                    });
                }
            }
        }
        // beta + mean of the client deltas; exact when no client moved
        let mut next = beta.values().clone();
        for b in &fresh {
            for ((n, new), old) in next
                .as_mut_slice()
                .iter_mut()
                .zip(b.values().as_slice())
                .zip(beta.values().as_slice())
            {
                *n += (new - old) / k as f64;
            }
        }
        beta = beta.with_values(next)?;
        client_betas = fresh;
    }
    Ok(SessionOutcome {
        concentration: beta,
        client_betas,
        mean_loss: loss_sum / (cfg.weight_steps * k) as f64,
        aborted: None,
    })
}

/// Best-so-far model kept for selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub round: usize,
    pub params: ParamVector,
    pub val_score: f64,
    pub alpha: Option<AggWeights>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Highest mean validation score across clients (federated strategies).
    pub best_global: Option<Checkpoint>,
    /// Highest own-validation score per client.
    pub best_local: Vec<Checkpoint>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub strategy: Strategy,
    pub history: Vec<RoundLog>,
    /// `w^T`; `None` for local-only runs.
    pub final_global: Option<ParamVector>,
    pub final_local: Vec<ParamVector>,
    pub ledger: CommLedger,
    pub selection: Selection,
    /// Final concentration of a learned-aggregation run.
    pub concentration: Option<Concentration>,
}

struct Learned {
    granularity: Granularity,
    beta_init: Concentration,
    beta: Concentration,
}

fn update_best(
    slot: &mut Option<Checkpoint>,
    round: usize,
    params: &ParamVector,
    score: f64,
    alpha: Option<&AggWeights>,
) {
    if slot.as_ref().is_none_or(|c| score > c.val_score) {
        *slot = Some(Checkpoint {
            round,
            params: params.clone(),
            val_score: score,
            alpha: alpha.cloned(),
        });
    }
}

/// Runs `T` federated rounds.
///
/// Per round: every client trains from the current global model; for learned
/// aggregation a weight-learning session runs whenever `t mod t0 = 0`; the
/// server mixes the local models with `alpha^t`. Validation scores of the
/// global and local models are recorded each round.
pub fn run_federated(
    spec: &ModelSpec,
    cfg: &FlConfig,
    shards: &[ClientShard],
) -> Result<RunOutput> {
    let k = shards.len();
    if k == 0 {
        return Err(Error::config("no clients"));
    }
    cfg.validate(k)?;
    let (sizes, _) = client_sizes(shards);
    let layers = spec.num_param_layers();

    let mut learned = None;
    let mut alpha: Option<AggWeights> = match cfg.strategy {
        Strategy::LocalOnly => None,
        Strategy::FedavgSized | Strategy::Fedprox { .. } => {
            Some(AggWeights::proportional(&sizes, 1, Granularity::Network)?)
        }
        Strategy::FedavgEven => Some(AggWeights::uniform(k, 1, Granularity::Network)?),
        Strategy::Autofedavg {
            parameterization,
            granularity,
        } => {
            let groups = match granularity {
                Granularity::Network => 1,
                Granularity::Layer => layers,
            };
            let init_value = cfg.beta_init_value(parameterization);
            let beta_init = Concentration::symmetric(k, groups, init_value, parameterization)?;
            let (alpha0, beta0) = match cfg.alpha_init {
                AlphaInit::Concentration => {
                    (weights_from_concentration(&beta_init)?, beta_init.clone())
                }
                AlphaInit::Sized | AlphaInit::Even => {
                    let a = if cfg.alpha_init == AlphaInit::Sized {
                        AggWeights::proportional(&sizes, groups, granularity)?
                    } else {
                        AggWeights::uniform(k, groups, granularity)?
                    };
                    let b = concentration_for(&a, parameterization, init_value)?;
                    (a, b)
                }
            };
            learned = Some(Learned {
                granularity,
                beta_init,
                beta: beta0,
            });
            Some(alpha0)
        }
    };

    let w0 = spec.init_params(&mut stream(cfg.seed, 0, 0, Phase::ModelInit));
    let model_bytes = w0.serialized_len() as u64;
    let mut global = w0.clone();
    let mut locals = vec![w0; k];
    let mut ledger = CommLedger::new();
    let mut history = Vec::with_capacity(cfg.rounds);
    let mut best_global = None;
    let mut best_local: Vec<Option<Checkpoint>> = vec![None; k];
    let federated = cfg.strategy.is_federated();

    for t in 1..=cfg.rounds {
        ledger.begin_round();
        if federated {
            ledger.broadcast_models(k as u64, model_bytes);
        }
        let starts: Vec<&ParamVector> = if federated {
            vec![&global; k]
        } else {
            locals.iter().collect()
        };
        let outcomes: Vec<LocalOutcome> = shards
            .par_iter()
            .zip(starts.par_iter())
            .enumerate()
            .map(|(c, (shard, start))| {
                let mut rng = stream(cfg.seed, t as u64, c as u64, Phase::LocalTrain);
                local_train(shard, start, spec, cfg, cfg.local_iters_for(c), &mut rng)
                    .map_err(|e| e.in_round(t, Some(c)))
            })
            .collect::<Result<_>>()?;
        let train_loss: Vec<f64> = outcomes.iter().map(|o| o.mean_loss).collect();
        locals = outcomes.into_iter().map(|o| o.params).collect();

        let mut phases = Phases {
            local: true,
            ..Phases::default()
        };
        let mut session_event = None;
        if federated {
            ledger.upload_models(k as u64, model_bytes);
            if let Some(l) = learned.as_mut() {
                if cfg.learn_weights && t % cfg.interval == 0 {
                    phases.learn = true;
                    let start = if cfg.reinit_each_session {
                        &l.beta_init
                    } else {
                        &l.beta
                    };
                    let outcome = learn_agg_weights(
                        &locals,
                        start,
                        shards,
                        spec,
                        cfg,
                        l.granularity,
                        t,
                        &mut ledger,
                    )
                    .map_err(|e| e.in_round(t, None))?;
                    match outcome.aborted {
                        Some(reason) => session_event = Some(reason),
                        None => {
                            l.beta = outcome.concentration;
                            alpha = Some(
                                weights_from_concentration(&l.beta)
                                    .map_err(|e| e.in_round(t, None))?,
                            );
                        }
                    }
                }
            }
            let a = alpha.as_ref().expect("federated strategies carry weights");
            global = mix_models(&locals, a).map_err(|e| e.in_round(t, None))?;
            phases.aggregate = true;
        }

        let local_val: Vec<f64> = shards
            .par_iter()
            .zip(locals.par_iter())
            .map(|(s, w)| spec.score(w, &s.val))
            .collect::<Result<_>>()
            .map_err(|e| e.in_round(t, None))?;
        for (c, score) in local_val.iter().enumerate() {
            update_best(&mut best_local[c], t, &locals[c], *score, alpha.as_ref());
        }
        let (global_val, global_val_avg) = if federated {
            let scores: Vec<f64> = shards
                .par_iter()
                .map(|s| spec.score(&global, &s.val))
                .collect::<Result<_>>()
                .map_err(|e| e.in_round(t, None))?;
            let avg = scores.iter().sum::<f64>() / k as f64;
            update_best(&mut best_global, t, &global, avg, alpha.as_ref());
            (Some(scores), Some(avg))
        } else {
            (None, None)
        };

        let traffic = ledger.total();
        history.push(RoundLog {
            round: t,
            phases,
            alpha: alpha.clone(),
            beta: learned.as_ref().map(|l| l.beta.values().clone()),
            train_loss,
            local_val,
            global_val,
            global_val_avg,
            cumulative_model_bytes: traffic.model_bytes,
            cumulative_beta_bytes: traffic.beta_bytes,
            session_event,
        });
    }

    Ok(RunOutput {
        strategy: cfg.strategy,
        history,
        final_global: federated.then_some(global),
        final_local: locals,
        ledger,
        selection: Selection {
            best_global,
            best_local: best_local
                .into_iter()
                .map(|c| c.expect("at least one round"))
                .collect(),
        },
        concentration: learned.map(|l| l.beta),
    })
}
