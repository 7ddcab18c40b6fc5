use serde::{Deserialize, Serialize};

use crate::aggregate::{Granularity, Parameterization};
use crate::error::{Error, Result};
use crate::nn::OptimizerConfig;

/// Server-side aggregation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// No communication; every client trains alone.
    LocalOnly,
    /// FedAvg with weights `n_k / n`.
    FedavgSized,
    /// FedAvg with weights `1 / K`.
    FedavgEven,
    /// FedAvg (sized weights) with a proximal term `mu/2 |w - w_global|^2`
    /// added to the local loss.
    Fedprox { mu: f64 },
    /// Aggregation weights learned on client data.
    Autofedavg {
        parameterization: Parameterization,
        granularity: Granularity,
    },
}

impl Strategy {
    /// Stable name used for output directories and summary rows.
    pub fn label(&self) -> String {
        match self {
            Strategy::LocalOnly => "local_only".into(),
            Strategy::FedavgSized => "fedavg_sized".into(),
            Strategy::FedavgEven => "fedavg_even".into(),
            Strategy::Fedprox { .. } => "fedprox".into(),
            Strategy::Autofedavg {
                parameterization,
                granularity,
            } => format!(
                "autofedavg_{}_{}",
                match granularity {
                    Granularity::Network => "n",
                    Granularity::Layer => "l",
                },
                match parameterization {
                    Parameterization::Softmax => "softmax",
                    Parameterization::Dirichlet => "dirichlet",
                }
            ),
        }
    }

    pub fn is_federated(&self) -> bool {
        !matches!(self, Strategy::LocalOnly)
    }
}

/// How `alpha^0` is chosen for learned aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaInit {
    /// `alpha^0 = gamma(beta^0)`.
    #[default]
    Concentration,
    /// `n_k / n`.
    Sized,
    /// `1 / K`.
    Even,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlConfig {
    /// `T`
    pub rounds: usize,
    /// `t0`: rounds between aggregation-weight learning sessions.
    pub interval: usize,
    /// `S`: synchronized steps per learning session.
    pub weight_steps: usize,
    /// `M_k`, shared by every client unless overridden per client.
    pub local_iters: usize,
    pub local_iters_per_client: Option<Vec<usize>>,
    pub batch_size: usize,
    pub weight_batch_size: usize,
    pub local_optimizer: OptimizerConfig,
    pub beta_optimizer: OptimizerConfig,
    pub strategy: Strategy,
    /// Symmetric initial concentration; 0 for softmax and 6 for Dirichlet
    /// when absent.
    pub beta_init: Option<f64>,
    pub reinit_each_session: bool,
    /// When false no learning sessions run and `alpha` stays at `alpha^0`.
    pub learn_weights: bool,
    pub alpha_init: AlphaInit,
    pub seed: u64,
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            rounds: 20,
            interval: 1,
            weight_steps: 50,
            local_iters: 20,
            local_iters_per_client: None,
            batch_size: 16,
            weight_batch_size: 16,
            local_optimizer: OptimizerConfig::adam(0.01),
            beta_optimizer: OptimizerConfig::sgd(0.01),
            strategy: Strategy::FedavgSized,
            beta_init: None,
            reinit_each_session: false,
            learn_weights: true,
            alpha_init: AlphaInit::Concentration,
            seed: 0,
        }
    }
}

impl FlConfig {
    pub fn validate(&self, clients: usize) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds (T) must be at least 1"));
        }
        if self.interval == 0 || self.interval > self.rounds {
            return Err(Error::config(format!(
                "interval (t0 = {}) must lie in 1..=rounds (T = {})",
                self.interval, self.rounds
            )));
        }
        if self.weight_steps == 0 {
            return Err(Error::config("weight_steps (S) must be at least 1"));
        }
        if self.batch_size == 0 || self.weight_batch_size == 0 {
            return Err(Error::config("batch sizes must be at least 1"));
        }
        if let Some(per) = &self.local_iters_per_client {
            if per.len() != clients {
                return Err(Error::config(format!(
                    "local_iters_per_client has {} entries for {clients} clients",
                    per.len()
                )));
            }
        }
        if let Strategy::Fedprox { mu } = self.strategy {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::config("fedprox mu must be finite and non-negative"));
            }
        }
        if let Some(b) = self.beta_init {
            if !b.is_finite() {
                return Err(Error::config("beta_init must be finite"));
            }
            if let Strategy::Autofedavg {
                parameterization: Parameterization::Dirichlet,
                ..
            } = self.strategy
            {
                if b <= 1.0 + crate::aggregate::DIRICHLET_MARGIN {
                    return Err(Error::config(format!(
                        "Dirichlet beta_init must exceed {}",
                        1.0 + crate::aggregate::DIRICHLET_MARGIN
                    )));
                }
            }
        }
        self.local_optimizer.validate()?;
        self.beta_optimizer.validate()?;
        Ok(())
    }

    pub fn local_iters_for(&self, client: usize) -> usize {
        self.local_iters_per_client
            .as_ref()
            .map_or(self.local_iters, |v| v[client])
    }

    pub fn beta_init_value(&self, parameterization: Parameterization) -> f64 {
        self.beta_init.unwrap_or(match parameterization {
            Parameterization::Softmax => 0.0,
            Parameterization::Dirichlet => 6.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_must_not_exceed_rounds() {
        let cfg = FlConfig {
            rounds: 5,
            interval: 6,
            ..FlConfig::default()
        };
        let err = cfg.validate(3).unwrap_err().to_string();
        assert!(err.contains("t0") && err.contains("T"));
    }

    #[test]
    fn negative_mu_rejected() {
        let cfg = FlConfig {
            strategy: Strategy::Fedprox { mu: -1.0 },
            ..FlConfig::default()
        };
        assert!(cfg.validate(3).is_err());
    }

    #[test]
    fn labels() {
        let s = Strategy::Autofedavg {
            parameterization: Parameterization::Dirichlet,
            granularity: Granularity::Network,
        };
        assert_eq!(s.label(), "autofedavg_n_dirichlet");
        assert_eq!(Strategy::FedavgSized.label(), "fedavg_sized");
    }
}
