//! Ancestral sampling with classifier-free guidance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::{DenoiserError, DenoiserModel, Label};
use crate::forward_process::standard_normal;
use crate::longtail_data::LabeledDataset;
use crate::rng::{stream, Purpose};
use crate::schedules::NoiseSchedule;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("non-finite sampler state at t = {t}")]
    NonFinite { t: usize },
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("guidance weight must be non-negative, got {0}")]
    BadOmega(f64),
    #[error(transparent)]
    Model(#[from] DenoiserError),
}

/// Fixed reverse-step variance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    /// σ_t² = β_t
    #[default]
    Beta,
    /// σ_t² = β_t·(1 − ᾱ_{t−1}) / (1 − ᾱ_t)
    Posterior,
}

impl SigmaRule {
    pub fn sigma(&self, schedule: &NoiseSchedule, t: usize) -> f64 {
        let beta = schedule.beta(t);
        match self {
            SigmaRule::Beta => beta.sqrt(),
            SigmaRule::Posterior => {
                let var = beta * (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - schedule.alpha_bar(t));
                var.sqrt()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub omega: f64,
    pub n_per_class: usize,
    pub sigma_rule: SigmaRule,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { omega: 0.6, n_per_class: 100, sigma_rule: SigmaRule::Beta, seed: 0 }
    }
}

/// (1 + ω)·ε_cond − ω·ε_uncond, evaluated as ε_cond + ω·(ε_cond − ε_uncond) so
/// that ω = 0 and ε_cond = ε_uncond both return ε_cond bit for bit.
pub fn cfg_epsilon(eps_cond: &[f64], eps_uncond: &[f64], omega: f64) -> Vec<f64> {
    assert_eq!(eps_cond.len(), eps_uncond.len(), "prediction shapes differ");
    eps_cond.iter().zip(eps_uncond).map(|(c, u)| c + omega * (c - u)).collect()
}

/// Runs one reverse chain from x_T ~ N(0, I) down to x_0.
///
/// The chain's randomness is keyed by `(seed, class, chain)`.
pub fn ddpm_chain(
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    class: usize,
    chain: usize,
    cfg: &SampleConfig,
) -> Result<Vec<f64>, SampleError> {
    let dim = model.arch.dim;
    let mut rng = stream(cfg.seed, Purpose::Sample, class as u64, chain as u64);
    let mut x = standard_normal(dim, &mut rng);
    for t in (1..=schedule.steps()).rev() {
        let cond = model.predict_eps(&x, t, Label::Class(class))?;
        let uncond = model.predict_eps(&x, t, Label::Null)?;
        let eps = cfg_epsilon(&cond, &uncond, cfg.omega);
        let alpha = schedule.alpha(t);
        let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        for (xi, ei) in x.iter_mut().zip(&eps) {
            *xi = inv_sqrt_alpha * (*xi - coef * ei);
        }
        if t > 1 {
            let sigma = cfg.sigma_rule.sigma(schedule, t);
            for (xi, zi) in x.iter_mut().zip(standard_normal(dim, &mut rng)) {
                *xi += sigma * zi;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SampleError::NonFinite { t });
        }
    }
    Ok(x)
}

/// `count` guided samples of class `class`, row-major.
pub fn ddpm_sample(
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    class: usize,
    count: usize,
    cfg: &SampleConfig,
) -> Result<Vec<f64>, SampleError> {
    if class >= model.arch.num_classes {
        return Err(SampleError::ClassOutOfRange { class, classes: model.arch.num_classes });
    }
    if !(cfg.omega >= 0.0) {
        return Err(SampleError::BadOmega(cfg.omega));
    }
    let mut out = Vec::with_capacity(count * model.arch.dim);
    for chain in 0..count {
        out.extend(ddpm_chain(model, schedule, class, chain, cfg)?);
    }
    Ok(out)
}

/// `cfg.n_per_class` samples for every class, labeled, classes in order.
pub fn sample_per_class(
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    cfg: &SampleConfig,
) -> Result<LabeledDataset, SampleError> {
    let classes = model.arch.num_classes;
    let mut samples = Vec::with_capacity(classes * cfg.n_per_class * model.arch.dim);
    let mut labels = Vec::with_capacity(classes * cfg.n_per_class);
    for class in 0..classes {
        let xs = ddpm_sample(model, schedule, class, cfg.n_per_class, cfg)?;
        samples.extend(xs.iter().map(|&v| v as f32));
        labels.extend(std::iter::repeat_n(class as u16, cfg.n_per_class));
    }
    Ok(LabeledDataset::new(model.arch.dim, classes, samples, labels).expect("sampler output is well-formed"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::ArchConfig;

    fn arch(dim: usize, classes: usize) -> ArchConfig {
        ArchConfig { dim, hidden: 6, bottleneck: 3, proj_dim: 2, time_embed_dim: 4, num_classes: classes }
    }

    #[test]
    fn guidance_identities() {
        let c = [0.3, -1.0, 2.5];
        let u = [1.0, 0.5, -0.25];
        assert_eq!(cfg_epsilon(&c, &u, 0.0), c.to_vec());
        assert_eq!(cfg_epsilon(&c, &c, 3.7), c.to_vec());
        assert!((cfg_epsilon(&[1.0], &[0.5], 0.6)[0] - 1.3).abs() < 1e-15);
    }

    #[test]
    fn guidance_is_affine_in_omega() {
        let c = [0.3, -1.0, 2.5];
        let u = [1.0, 0.5, -0.25];
        let (w1, w2, s) = (0.4, 2.2, 0.3);
        let mix = cfg_epsilon(&c, &u, s * w1 + (1.0 - s) * w2);
        let a = cfg_epsilon(&c, &u, w1);
        let b = cfg_epsilon(&c, &u, w2);
        for k in 0..3 {
            assert!((mix[k] - (s * a[k] + (1.0 - s) * b[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_zero_model() {
        let model = DenoiserModel::zeroed(arch(3, 2)).unwrap();
        let schedule = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
        let cfg = SampleConfig { seed: 9, ..SampleConfig::default() };
        let out = ddpm_sample(&model, &schedule, 1, 1, &cfg).unwrap();
        let x1 = standard_normal(3, &mut stream(9, Purpose::Sample, 1, 0));
        let expected: Vec<f64> = x1.iter().map(|v| v / (0.9f64).sqrt()).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn sampler_is_deterministic() {
        let model = DenoiserModel::init(arch(2, 3), &mut stream(1, Purpose::Init, 0, 0)).unwrap();
        let schedule = NoiseSchedule::linear(20, 1e-3, 0.2).unwrap();
        let cfg = SampleConfig { n_per_class: 4, seed: 5, ..SampleConfig::default() };
        let a = sample_per_class(&model, &schedule, &cfg).unwrap();
        let b = sample_per_class(&model, &schedule, &cfg).unwrap();
        assert_eq!(a.encode(), b.encode());
    }

    #[test]
    fn per_class_bookkeeping() {
        let model = DenoiserModel::init(arch(2, 3), &mut stream(1, Purpose::Init, 0, 0)).unwrap();
        let schedule = NoiseSchedule::linear(5, 1e-3, 0.2).unwrap();
        let cfg = SampleConfig { n_per_class: 10, ..SampleConfig::default() };
        let d = sample_per_class(&model, &schedule, &cfg).unwrap();
        assert_eq!(d.len(), 30);
        assert_eq!(d.class_counts(), &[10, 10, 10]);
        assert_eq!(LabeledDataset::decode(&d.encode()).unwrap(), d);

        let empty = sample_per_class(&model, &schedule, &SampleConfig { n_per_class: 0, ..cfg }).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn rejects_bad_class_and_omega() {
        let model = DenoiserModel::zeroed(arch(2, 2)).unwrap();
        let schedule = NoiseSchedule::linear(5, 1e-3, 0.2).unwrap();
        assert!(matches!(
            ddpm_sample(&model, &schedule, 2, 1, &SampleConfig::default()),
            Err(SampleError::ClassOutOfRange { .. })
        ));
        let cfg = SampleConfig { omega: -0.1, ..SampleConfig::default() };
        assert!(matches!(ddpm_sample(&model, &schedule, 0, 1, &cfg), Err(SampleError::BadOmega(_))));
    }

    #[test]
    fn blown_up_model_reports_timestep() {
        let mut model = DenoiserModel::zeroed(arch(2, 2)).unwrap();
        model.params.output.bias = vec![f64::MAX, f64::MAX];
        let schedule = NoiseSchedule::linear(5, 1e-3, 0.2).unwrap();
        let err = ddpm_sample(&model, &schedule, 0, 1, &SampleConfig::default()).unwrap_err();
        assert!(matches!(err, SampleError::NonFinite { t } if (1..5).contains(&t)), "{err:?}");
    }

    #[test]
    fn posterior_sigma_vanishes_at_first_step() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
        assert_eq!(SigmaRule::Posterior.sigma(&s, 1), 0.0);
        assert!(SigmaRule::Posterior.sigma(&s, 5) < SigmaRule::Beta.sigma(&s, 5));
    }
}
