//! Noise schedule and the time-dependent contrastive weight.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("number of diffusion steps must be at least 1")]
    ZeroSteps,
    #[error("beta endpoints must satisfy 0 < beta_min <= beta_max < 1, got ({0}, {1})")]
    BadEndpoints(f64, f64),
    #[error("decay temperature tau_r must be positive, got {0}")]
    BadTemperature(f64),
    #[error("base contrastive weight must be non-negative, got {0}")]
    NegativeWeight(f64),
    #[error("timestep {t} outside 0..={steps}")]
    TimestepOutOfRange { t: usize, steps: usize },
}

/// Parameters that fully determine a linear schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleParams {
    /// The classic (1e-4, 0.02) endpoints at 1000 steps, rescaled by `1000 / steps`
    /// so that the terminal signal level stays near zero for short chains.
    pub fn scaled_default(steps: usize) -> Self {
        let scale = 1000.0 / steps.max(1) as f64;
        Self {
            steps,
            beta_min: (1e-4 * scale).min(0.5),
            beta_max: (0.02 * scale).min(0.999),
        }
    }
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self::scaled_default(100)
    }
}

/// Per-step variances and their cumulative signal levels.
///
/// Index `t` runs over `1..=steps`; `alpha_bar(0)` is 1 by convention.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self, ScheduleError> {
        if steps == 0 {
            return Err(ScheduleError::ZeroSteps);
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(ScheduleError::BadEndpoints(beta_min, beta_max));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else if i == steps - 1 {
                    beta_max
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alpha_bar = beta
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta, alpha_bar })
    }

    pub fn from_params(p: &ScheduleParams) -> Result<Self, ScheduleError> {
        Self::linear(p.steps, p.beta_min, p.beta_max)
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// β_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// α_t = 1 − β_t.
    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn check_timestep(&self, t: usize) -> Result<(), ScheduleError> {
        if t > self.steps() {
            Err(ScheduleError::TimestepOutOfRange { t, steps: self.steps() })
        } else {
            Ok(())
        }
    }
}

/// Base weight and decay temperature of λ(t).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveWeightConfig {
    pub w: f64,
    pub tau_r: f64,
}

impl Default for ContrastiveWeightConfig {
    fn default() -> Self {
        Self { w: 0.01, tau_r: 0.8 }
    }
}

impl ContrastiveWeightConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.tau_r > 0.0) {
            return Err(ScheduleError::BadTemperature(self.tau_r));
        }
        if !(self.w >= 0.0) {
            return Err(ScheduleError::NegativeWeight(self.w));
        }
        Ok(())
    }
}

/// λ(t) = w · exp((1 − t/T) / τ_r), defined for t in 0..=T.
pub fn contrastive_weight(
    cfg: &ContrastiveWeightConfig,
    t: usize,
    steps: usize,
) -> Result<f64, ScheduleError> {
    cfg.validate()?;
    if steps == 0 {
        return Err(ScheduleError::ZeroSteps);
    }
    if t > steps {
        return Err(ScheduleError::TimestepOutOfRange { t, steps });
    }
    if t == steps {
        return Ok(cfg.w);
    }
    let frac = 1.0 - t as f64 / steps as f64;
    Ok(cfg.w * (frac / cfg.tau_r).exp())
}
