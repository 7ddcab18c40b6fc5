//! Run descriptor: a strict TOML schema. Unknown keys anywhere are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::{Granularity, Parameterization};
use crate::datagen::{AffineShift, DatasetSpec, SplitFractions, Task};
use crate::error::{Error, Result};
use crate::fedsim::{AlphaInit, FlConfig, Strategy};
use crate::nn::{LossKind, ModelSpec, OptimizerConfig, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSection {
    /// Log-normal spread of per-feature scales.
    #[serde(default)]
    pub scale_std: f64,
    #[serde(default)]
    pub offset_std: f64,
    /// Explicit per-client shifts; overrides the random ones.
    #[serde(default)]
    pub clients: Option<Vec<AffineShift>>,
}

impl Default for ShiftSection {
    fn default() -> Self {
        ShiftSection {
            scale_std: 0.0,
            offset_std: 0.0,
            clients: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub task: Task,
    pub clients: usize,
    pub classes: usize,
    pub features: usize,
    pub samples_per_client: usize,
    pub client_weights: Option<Vec<f64>>,
    pub skew: f64,
    pub split: SplitFractions,
    pub class_separation: f64,
    pub noise: f64,
    /// Fixed dataset seed; by default each run seed also seeds the data.
    pub seed: Option<u64>,
    pub shift: ShiftSection,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            task: Task::Classification,
            clients: 3,
            classes: 4,
            features: 8,
            samples_per_client: 150,
            client_weights: None,
            skew: 1.0,
            split: SplitFractions::default(),
            class_separation: 2.0,
            noise: 1.0,
            seed: None,
            shift: ShiftSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    /// Defaults to cross_entropy for classification, soft_dice for segmentation.
    pub loss: Option<LossKind>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: vec![16],
            loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
}

impl OptimizerSection {
    fn resolve(&self, default_lr: f64) -> OptimizerConfig {
        let base = match self.kind {
            OptimizerKind::Sgd => OptimizerConfig::sgd(default_lr),
            OptimizerKind::Adam => OptimizerConfig::adam(default_lr),
        };
        OptimizerConfig {
            kind: self.kind,
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            eps: self.eps.unwrap_or(base.eps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederatedSection {
    pub rounds: usize,
    pub interval: usize,
    pub weight_steps: usize,
    pub local_iters: usize,
    pub local_iters_per_client: Option<Vec<usize>>,
    pub batch_size: usize,
    pub weight_batch_size: usize,
    pub local_optimizer: OptimizerSection,
    pub beta_optimizer: OptimizerSection,
    pub beta_init: Option<f64>,
    pub reinit_each_session: bool,
    pub learn_weights: bool,
    pub alpha_init: AlphaInit,
}

impl Default for FederatedSection {
    fn default() -> Self {
        let d = FlConfig::default();
        FederatedSection {
            rounds: d.rounds,
            interval: d.interval,
            weight_steps: d.weight_steps,
            local_iters: d.local_iters,
            local_iters_per_client: None,
            batch_size: d.batch_size,
            weight_batch_size: d.weight_batch_size,
            local_optimizer: OptimizerSection {
                kind: OptimizerKind::Adam,
                learning_rate: None,
                beta1: None,
                beta2: None,
                eps: None,
            },
            beta_optimizer: OptimizerSection {
                kind: OptimizerKind::Sgd,
                learning_rate: None,
                beta1: None,
                beta2: None,
                eps: None,
            },
            beta_init: None,
            reinit_each_session: false,
            learn_weights: true,
            alpha_init: AlphaInit::Concentration,
        }
    }
}

/// Keys a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKey {
    #[serde(alias = "t0")]
    Interval,
    Rounds,
    WeightSteps,
    LocalIters,
    BetaLr,
    Mu,
    Skew,
}

impl SweepKey {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "interval" | "t0" => SweepKey::Interval,
            "rounds" => SweepKey::Rounds,
            "weight_steps" => SweepKey::WeightSteps,
            "local_iters" => SweepKey::LocalIters,
            "beta_lr" => SweepKey::BetaLr,
            "mu" => SweepKey::Mu,
            "skew" => SweepKey::Skew,
            other => return Err(Error::config(format!("unknown sweep key {other:?}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepKey::Interval => "interval",
            SweepKey::Rounds => "rounds",
            SweepKey::WeightSteps => "weight_steps",
            SweepKey::LocalIters => "local_iters",
            SweepKey::BetaLr => "beta_lr",
            SweepKey::Mu => "mu",
            SweepKey::Skew => "skew",
        }
    }

    fn is_integer(&self) -> bool {
        matches!(
            self,
            SweepKey::Interval | SweepKey::Rounds | SweepKey::WeightSteps | SweepKey::LocalIters
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub key: SweepKey,
    pub values: Vec<f64>,
}

/// One `[[strategy]]` table. Keys that do not belong to `name` are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategySection {
    name: String,
    mu: Option<f64>,
    parameterization: Option<Parameterization>,
    granularity: Option<Granularity>,
}

impl StrategySection {
    fn resolve(&self, index: usize) -> Result<Strategy> {
        let at = |msg: String| Error::config(format!("strategy[{index}] ({}): {msg}", self.name));
        let strategy = match self.name.as_str() {
            "local_only" => Strategy::LocalOnly,
            "fedavg_sized" => Strategy::FedavgSized,
            "fedavg_even" => Strategy::FedavgEven,
            "fedprox" => Strategy::Fedprox {
                mu: self.mu.ok_or_else(|| at("missing key `mu`".into()))?,
            },
            "autofedavg" => Strategy::Autofedavg {
                parameterization: self
                    .parameterization
                    .ok_or_else(|| at("missing key `parameterization`".into()))?,
                granularity: self.granularity.ok_or_else(|| at("missing key `granularity`".into()))?,
            },
            other => {
                return Err(at(format!(
                    "unknown strategy {other:?}; expected local_only, fedavg_sized, fedavg_even, fedprox or autofedavg"
                )))
            }
        };
        let allowed: &[&str] = match strategy {
            Strategy::Fedprox { .. } => &["mu"],
            Strategy::Autofedavg { .. } => &["parameterization", "granularity"],
            _ => &[],
        };
        let present = [
            ("mu", self.mu.is_some()),
            ("parameterization", self.parameterization.is_some()),
            ("granularity", self.granularity.is_some()),
        ];
        if let Some((key, _)) = present
            .iter()
            .find(|(key, set)| *set && !allowed.contains(key))
        {
            return Err(at(format!("key `{key}` does not apply")));
        }
        Ok(strategy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDescriptor {
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    repeat: Option<usize>,
    #[serde(default)]
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    dataset: DatasetSection,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    federated: FederatedSection,
    #[serde(default)]
    strategy: Vec<StrategySection>,
    #[serde(default)]
    sweep: Option<SweepSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDescriptor {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub federated: FederatedSection,
    pub strategies: Vec<Strategy>,
    pub sweep: Option<SweepSection>,
}

impl RunDescriptor {
    pub fn dataset_spec(&self, run_seed: u64) -> Result<DatasetSpec> {
        let d = &self.dataset;
        let seed = d.seed.unwrap_or(run_seed);
        let shifts = match &d.shift.clients {
            Some(explicit) => explicit.clone(),
            None => AffineShift::random(
                d.clients,
                d.features,
                d.shift.scale_std,
                d.shift.offset_std,
                seed,
            ),
        };
        let spec = DatasetSpec {
            task: d.task,
            num_classes: d.classes,
            feature_dim: d.features,
            samples_per_client: d.samples_per_client,
            client_weights: d.client_weights.clone(),
            num_clients: d.clients,
            skew: d.skew,
            shifts,
            split: d.split,
            class_separation: d.class_separation,
            noise: d.noise,
            seed,
        };
        spec.validate()
            .map_err(|e| Error::config(format!("[dataset] {e}")))?;
        Ok(spec)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let (out, default_loss) = match self.dataset.task {
            Task::Classification => (self.dataset.classes, LossKind::CrossEntropy),
            Task::ToySegmentation => (self.dataset.features, LossKind::SoftDice),
        };
        let loss = self.model.loss.unwrap_or(default_loss);
        ModelSpec::mlp(self.dataset.features, &self.model.hidden, out, loss)
            .map_err(|e| Error::config(format!("[model] {e}")))
    }

    pub fn fl_config(&self, strategy: Strategy, seed: u64) -> FlConfig {
        let f = &self.federated;
        FlConfig {
            rounds: f.rounds,
            interval: f.interval,
            weight_steps: f.weight_steps,
            local_iters: f.local_iters,
            local_iters_per_client: f.local_iters_per_client.clone(),
            batch_size: f.batch_size,
            weight_batch_size: f.weight_batch_size,
            local_optimizer: f.local_optimizer.resolve(0.01),
            beta_optimizer: f.beta_optimizer.resolve(0.01),
            strategy,
            beta_init: f.beta_init,
            reinit_each_session: f.reinit_each_session,
            learn_weights: f.learn_weights,
            alpha_init: f.alpha_init,
            seed,
        }
    }

    /// Copy with one key overridden; integer keys must receive integers.
    pub fn with_override(&self, key: SweepKey, value: f64) -> Result<RunDescriptor> {
        if key.is_integer() && (value.fract() != 0.0 || value < 0.0) {
            return Err(Error::config(format!(
                "sweep key {} needs non-negative integers",
                key.name()
            )));
        }
        let mut d = self.clone();
        match key {
            SweepKey::Interval => d.federated.interval = value as usize,
            SweepKey::Rounds => d.federated.rounds = value as usize,
            SweepKey::WeightSteps => d.federated.weight_steps = value as usize,
            SweepKey::LocalIters => d.federated.local_iters = value as usize,
            SweepKey::BetaLr => d.federated.beta_optimizer.learning_rate = Some(value),
            SweepKey::Skew => d.dataset.skew = value,
            SweepKey::Mu => {
                for s in &mut d.strategies {
                    if let Strategy::Fedprox { mu } = s {
                        *mu = value;
                    }
                }
            }
        }
        d.sweep = None;
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        let f = &self.federated;
        if f.interval > f.rounds {
            return Err(Error::config(format!(
                "federated.interval (t0 = {}) must not exceed federated.rounds (T = {})",
                f.interval, f.rounds
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.strategies.is_empty() {
            return Err(Error::config("at least one [[strategy]] is required"));
        }
        let mut labels: Vec<String> = self.strategies.iter().map(strategy_label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(format!("strategy {:?} listed twice", w[0])));
        }
        self.dataset_spec(self.seeds[0])?;
        self.model_spec()?;
        for s in &self.strategies {
            self.fl_config(*s, 0)
                .validate(self.dataset.clients)
                .map_err(|e| Error::config(format!("[federated] {e}")))?;
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(Error::config("sweep.values must not be empty"));
            }
        }
        Ok(())
    }
}

/// Output directory name of a strategy; FedProx includes its `mu`.
pub fn strategy_label(s: &Strategy) -> String {
    match s {
        Strategy::Fedprox { mu } => format!("fedprox_mu{mu}"),
        other => other.label(),
    }
}

pub fn parse_config_str(text: &str) -> Result<RunDescriptor> {
    let raw: RawDescriptor =
        toml::from_str(text).map_err(|e| Error::config(e.to_string().trim_end().to_string()))?;
    let seeds = match (raw.repeat, raw.seeds) {
        (Some(r), Some(s)) if r != s.len() => {
            return Err(Error::config(format!(
                "repeat = {r} but seeds lists {} values",
                s.len()
            )))
        }
        (_, Some(s)) => s,
        (Some(r), None) => (0..r as u64).collect(),
        (None, None) => vec![0],
    };
    let strategies = if raw.strategy.is_empty() {
        vec![Strategy::FedavgSized]
    } else {
        raw.strategy
            .iter()
            .enumerate()
            .map(|(i, s)| s.resolve(i))
            .collect::<Result<Vec<_>>>()?
    };
    let d = RunDescriptor {
        output_dir: raw.output_dir,
        seeds,
        dataset: raw.dataset,
        model: raw.model,
        federated: raw.federated,
        strategies,
        sweep: raw.sweep,
    };
    d.validate()?;
    Ok(d)
}

pub fn parse_config(path: &Path) -> Result<RunDescriptor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
