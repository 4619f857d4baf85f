use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::SimError;

/// Computation-time model for solves, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModel {
    Deterministic {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// `exp(N(mu, sigma²))`.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    /// Consumed in order; the last entry repeats once exhausted.
    Trace {
        values: Vec<f64>,
    },
    /// Measured wall time of each solve. Wall-clock runs only.
    Measured,
}

impl DelayModel {
    /// Log-normal with the given median and log-space spread.
    pub fn log_normal_median(median: f64, sigma: f64) -> Self {
        DelayModel::LogNormal { mu: median.ln(), sigma }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            DelayModel::Deterministic { value } if !(*value >= 0.0 && value.is_finite()) => {
                Err(format!("deterministic delay must be finite and ≥ 0, got {value}"))
            }
            DelayModel::Uniform { low, high } if !(*low > 0.0 && high >= low && high.is_finite()) => {
                Err(format!("uniform delay needs 0 < low ≤ high, got [{low}, {high}]"))
            }
            DelayModel::LogNormal { mu, sigma } if !(mu.is_finite() && *sigma >= 0.0 && sigma.is_finite()) => Err(
                format!("log-normal delay needs finite mu and sigma ≥ 0, got ({mu}, {sigma})"),
            ),
            DelayModel::Trace { values } if values.is_empty() => Err("delay trace is empty".into()),
            DelayModel::Trace { values } if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) => {
                Err("delay trace entries must be finite and ≥ 0".into())
            }
            _ => Ok(()),
        }
    }
}

/// Draws computation times from one dedicated random stream.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    model: DelayModel,
    rng: ChaCha8Rng,
    cursor: usize,
    draws: u64,
}

impl DelaySampler {
    pub fn new(model: DelayModel, rng: ChaCha8Rng) -> Self {
        Self {
            model,
            rng,
            cursor: 0,
            draws: 0,
        }
    }

    pub fn model(&self) -> &DelayModel {
        &self.model
    }

    /// Random numbers consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Next computation time. `measured` is the wall time of the solve and is
    /// only used by [`DelayModel::Measured`].
    pub fn sample(&mut self, measured: Option<f64>) -> Result<f64, SimError> {
        Ok(match &self.model {
            DelayModel::Deterministic { value } => *value,
            DelayModel::Uniform { low, high } => {
                self.draws += 1;
                self.rng.random_range(*low..=*high)
            }
            DelayModel::LogNormal { mu, sigma } => {
                self.draws += 1;
                LogNormal::new(*mu, *sigma)
                    .map_err(|e| SimError::Config(e.to_string()))?
                    .sample(&mut self.rng)
            }
            DelayModel::Trace { values } => {
                let v = values[self.cursor.min(values.len() - 1)];
                self.cursor += 1;
                v
            }
            DelayModel::Measured => {
                measured.ok_or_else(|| SimError::Config("measured delays need wall-clock mode".into()))?
            }
        })
    }
}
