use serde::{Deserialize, Serialize};

use super::param::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Adam with moment decays (0.5, 0.99).
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.5,
            beta2: 0.99,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning rate must be finite and non-negative",
            ));
        }
        if self.kind == OptimizerKind::Adam
            && !((0.0..1.0).contains(&self.beta1)
                && (0.0..1.0).contains(&self.beta2)
                && self.eps > 0.0)
        {
            return Err(Error::config(
                "adam needs beta1, beta2 in [0, 1) and eps > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Optimizer configuration plus the running state it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    config: OptimizerConfig,
    moments: Option<Moments>,
    step: u64,
}

impl OptState {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        let moments = (config.kind == OptimizerKind::Adam).then(|| Moments {
            first: vec![0.0; len],
            second: vec![0.0; len],
        });
        OptState {
            config,
            moments,
            step: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// In-place update of `w` given gradient `g`.
    pub fn apply(&mut self, w: &mut [f64], g: &[f64]) -> Result<()> {
        if w.len() != g.len() {
            return Err(Error::config("gradient and parameter lengths differ"));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite gradient passed to optimizer"));
        }
        self.step += 1;
        let lr = self.config.learning_rate;
        match &mut self.moments {
            None => {
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi -= lr * gi;
                }
            }
            Some(m) => {
                if m.first.len() != w.len() {
                    return Err(Error::config(
                        "optimizer state sized for a different vector",
                    ));
                }
                let OptimizerConfig {
                    beta1, beta2, eps, ..
                } = self.config;
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for i in 0..w.len() {
                    m.first[i] = beta1 * m.first[i] + (1.0 - beta1) * g[i];
                    m.second[i] = beta2 * m.second[i] + (1.0 - beta2) * g[i] * g[i];
                    let mhat = m.first[i] / c1;
                    let vhat = m.second[i] / c2;
                    w[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Pure form: consumes the state and returns the updated parameters and state.
pub fn opt_step(
    mut state: OptState,
    w: &ParamVector,
    g: &ParamVector,
) -> Result<(ParamVector, OptState)> {
    w.check_same_layout(g)?;
    let mut next = w.clone();
    state.apply(next.values_mut(), g.values())?;
    Ok((next, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::Layout;
    use approx::assert_relative_eq;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec(), Layout::from_lengths([("l", v.len())])).unwrap()
    }

    #[test]
    fn sgd_direct_formula() {
        let (w, s) = opt_step(
            OptState::new(OptimizerConfig::sgd(0.1), 2),
            &pv(&[1., 1.]),
            &pv(&[1., -1.]),
        )
        .unwrap();
        assert_relative_eq!(w.values()[0], 0.9);
        assert_relative_eq!(w.values()[1], 1.1);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        for cfg in [OptimizerConfig::sgd(0.3), OptimizerConfig::adam(0.3)] {
            let w0 = pv(&[0.25, -4.0]);
            let (w, _) = opt_step(OptState::new(cfg, 2), &w0, &pv(&[0., 0.])).unwrap();
            assert_eq!(w, w0);
        }
    }

    #[test]
    fn adam_first_step_closed_form() {
        // m1 = (1-b1) c, v1 = (1-b2) c^2, bias correction restores c and c^2,
        // so the step is lr * c / (c + eps).
        for c in [1e-3, 0.5, 7.0] {
            let lr = 0.01;
            let cfg = OptimizerConfig::adam(lr);
            let (w, s) = opt_step(OptState::new(cfg, 2), &pv(&[1., 2.]), &pv(&[c, c])).unwrap();
            let step = lr * c / (c + cfg.eps);
            assert_relative_eq!(w.values()[0], 1.0 - step, epsilon = 1e-15);
            assert_relative_eq!(w.values()[1], 2.0 - step, epsilon = 1e-15);
            assert_eq!(s.steps(), 1);
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let r = opt_step(
            OptState::new(OptimizerConfig::sgd(0.1), 1),
            &pv(&[1.]),
            &pv(&[f64::INFINITY]),
        );
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn moments_exist_only_for_adam() {
        assert!(OptState::new(OptimizerConfig::sgd(0.1), 3)
            .moments
            .is_none());
        assert!(OptState::new(OptimizerConfig::adam(0.1), 3)
            .moments
            .is_some());
    }

    #[test]
    fn sgd_descends_on_quadratic() {
        // f(w) = 0.5 * sum a_i w_i^2
        let a = [1.0, 3.0, 0.5];
        let f = |w: &[f64]| 0.5 * w.iter().zip(a).map(|(x, ai)| ai * x * x).sum::<f64>();
        let mut state = OptState::new(OptimizerConfig::sgd(0.05), 3);
        let mut w = vec![1.0, -2.0, 3.0];
        let mut prev = f(&w);
        for _ in 0..100 {
            let g: Vec<f64> = w.iter().zip(a).map(|(x, ai)| ai * x).collect();
            state.apply(&mut w, &g).unwrap();
            let cur = f(&w);
            assert!(cur < prev);
            prev = cur;
        }
    }
}
