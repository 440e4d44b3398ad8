//! Closed-form forward noising x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::rng::Rng;
use crate::schedules::{NoiseSchedule, ScheduleError};

/// A batch of noised samples together with the draws that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisedBatch {
    pub dim: usize,
    /// Row-major `[batch × dim]`.
    pub x_t: Vec<f64>,
    pub t: Vec<usize>,
    /// Row-major `[batch × dim]`.
    pub eps: Vec<f64>,
}

impl NoisedBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x_t[i * self.dim..(i + 1) * self.dim]
    }

    pub fn eps_row(&self, i: usize) -> &[f64] {
        &self.eps[i * self.dim..(i + 1) * self.dim]
    }
}

/// Writes √ᾱ_t·x0 + √(1−ᾱ_t)·eps into `out`.
pub fn q_sample_into(
    x0: &[f64],
    t: usize,
    eps: &[f64],
    schedule: &NoiseSchedule,
    out: &mut [f64],
) -> Result<(), ScheduleError> {
    schedule.check_timestep(t)?;
    assert_eq!(x0.len(), eps.len(), "x0 and eps dimensions differ");
    assert_eq!(x0.len(), out.len(), "output dimension differs");
    let ab = schedule.alpha_bar(t);
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    for ((o, x), e) in out.iter_mut().zip(x0).zip(eps) {
        *o = signal * x + noise * e;
    }
    Ok(())
}

pub fn q_sample(
    x0: &[f64],
    t: usize,
    eps: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>, ScheduleError> {
    let mut out = vec![0.0; x0.len()];
    q_sample_into(x0, t, eps, schedule, &mut out)?;
    Ok(out)
}

/// Uniform draws from {1..=steps}.
pub fn sample_timesteps(batch: usize, steps: usize, rng: &mut Rng) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(1..=steps)).collect()
}

pub fn standard_normal(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}
