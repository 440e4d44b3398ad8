//! Assembles the full [`EvalReport`].

use super::{
    classifier_score, extract_latents, frechet_between, improved_precision_recall, latent_separation,
    per_class_frechet, prd_f_scores, EvalError, EvalReport, FeatureMap, FeatureSet, LatentConditioning, Probe,
    ProbeConfig, RawFeatures,
};
use crate::denoiser::DenoiserModel;
use crate::longtail_data::LabeledDataset;
use crate::schedules::NoiseSchedule;

/// Space in which distribution metrics are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureSpace {
    #[default]
    Raw,
    /// Hidden layer of a probe classifier fit on the real set.
    Probe,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub knn_k: usize,
    /// `None` means 20 × number of classes.
    pub clusters: Option<usize>,
    pub purity_k: usize,
    /// `None` means ⌊0.05·T⌋.
    pub latent_t: Option<usize>,
    pub conditioning: LatentConditioning,
    pub features: FeatureSpace,
    pub probe: ProbeConfig,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            knn_k: 3,
            clusters: None,
            purity_k: 10,
            latent_t: None,
            conditioning: LatentConditioning::TrueLabel,
            features: FeatureSpace::Raw,
            probe: ProbeConfig::default(),
            seed: 0,
        }
    }
}

/// Compares `gen` against `real`. With a model, latent diagnostics of the
/// real set are added and the latent features are returned alongside.
pub fn evaluate(
    real: &LabeledDataset,
    gen: &LabeledDataset,
    opts: &EvalOptions,
    model: Option<(&DenoiserModel, &NoiseSchedule)>,
) -> Result<(EvalReport, Option<FeatureSet>), EvalError> {
    if real.dim() != gen.dim() {
        return Err(EvalError::DimensionMismatch { real: real.dim(), gen: gen.dim() });
    }
    let classes = real.num_classes().max(gen.num_classes());
    let probe = Probe::fit(real, &ProbeConfig { seed: opts.seed, ..opts.probe })?;
    let map: &dyn FeatureMap = match opts.features {
        FeatureSpace::Raw => &RawFeatures,
        FeatureSpace::Probe => &probe,
    };
    let real_fs = map.features(real)?;
    let gen_fs = map.features(gen)?;

    let frechet = frechet_between(&real_fs, &gen_fs)?;
    let per_class = per_class_frechet(real, gen, map)?;
    let clusters = opts.clusters.unwrap_or(20 * classes);
    let (f8, f_inv8) = prd_f_scores(&real_fs, &gen_fs, clusters, opts.seed)?;
    let (improved_precision, improved_recall) = improved_precision_recall(&real_fs, &gen_fs, opts.knn_k)?;
    let score = if gen.is_empty() || gen.num_classes() != probe.num_classes() {
        None
    } else {
        Some(classifier_score(&probe.posteriors(gen)?, probe.num_classes())?)
    };

    let (latent_knn_purity, silhouette, latents) = match model {
        Some((model, schedule)) => {
            let t = opts.latent_t.unwrap_or(super::latents::default_latent_t(schedule.steps()));
            let fs = extract_latents(model, real, t, schedule, opts.seed, opts.conditioning)?;
            let sep = latent_separation(&fs, opts.purity_k)?;
            (Some(sep.purity), sep.silhouette, Some(fs))
        }
        None => (None, None, None),
    };
    let report = EvalReport {
        frechet,
        per_class_frechet: per_class,
        classifier_score: score,
        f8,
        f_inv8,
        improved_precision,
        improved_recall,
        latent_knn_purity,
        silhouette,
    };
    Ok((report, latents))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::ArchConfig;
    use crate::longtail_data::{class_counts, make_ring_gaussians};
    use crate::rng::{stream, Purpose};

    fn ring(seed: u64) -> LabeledDataset {
        make_ring_gaussians(&class_counts(40, 0.25, 4).unwrap(), 1.0, 0.1, 2, &mut stream(seed, Purpose::Data, 0, 0))
            .unwrap()
    }

    #[test]
    fn self_comparison() {
        let real = ring(1);
        let opts = EvalOptions { probe: ProbeConfig { steps: 50, ..ProbeConfig::default() }, ..EvalOptions::default() };
        let (r, latents) = evaluate(&real, &real, &opts, None).unwrap();
        assert_eq!(r.frechet, 0.0);
        assert_eq!((r.f8, r.f_inv8), (1.0, 1.0));
        assert_eq!((r.improved_precision, r.improved_recall), (1.0, 1.0));
        assert!(r.per_class_frechet.iter().all(|v| *v == Some(0.0)));
        assert!(latents.is_none() && r.silhouette.is_none() && r.latent_knn_purity.is_none());
        let score = r.classifier_score.unwrap();
        assert!((1.0..=4.0).contains(&score));
    }

    #[test]
    fn with_model_and_probe_features() {
        let real = ring(2);
        let gen = ring(3);
        let arch = ArchConfig { dim: 2, hidden: 8, bottleneck: 3, proj_dim: 2, time_embed_dim: 4, num_classes: 4 };
        let model = DenoiserModel::init(arch, &mut stream(0, Purpose::Init, 0, 0)).unwrap();
        let schedule = NoiseSchedule::linear(40, 1e-3, 0.2).unwrap();
        let opts = EvalOptions {
            features: FeatureSpace::Probe,
            probe: ProbeConfig { steps: 30, hidden: 6, ..ProbeConfig::default() },
            clusters: Some(10),
            ..EvalOptions::default()
        };
        let (r, latents) = evaluate(&real, &gen, &opts, Some((&model, &schedule))).unwrap();
        let latents = latents.unwrap();
        assert_eq!((latents.len(), latents.dim()), (real.len(), 3));
        assert_eq!(r.latent_knn_purity.as_ref().unwrap().len(), 4);
        assert!(r.silhouette.is_some());
        assert!(r.frechet > 0.0);
        for v in [r.f8, r.f_inv8, r.improved_precision, r.improved_recall] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn cluster_count_is_checked() {
        let real = ring(1);
        let opts = EvalOptions { clusters: Some(10_000), ..EvalOptions::default() };
        assert!(matches!(evaluate(&real, &real, &opts, None), Err(EvalError::TooManyClusters { .. })));
    }
}
