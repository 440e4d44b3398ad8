//! Bottleneck latents of real data and how well they separate by class.

use super::{squared_distance, EvalError, FeatureSet};
use crate::denoiser::{DenoiserModel, Label};
use crate::forward_process::{q_sample, standard_normal};
use crate::longtail_data::LabeledDataset;
use crate::rng::{stream, Purpose};
use crate::schedules::NoiseSchedule;

/// Class input used when extracting latents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LatentConditioning {
    #[default]
    TrueLabel,
    Null,
}

/// Default extraction timestep, ⌊0.05·T⌋.
pub fn default_latent_t(steps: usize) -> usize {
    steps / 20
}

/// Noises every sample to level `t` (clean at `t = 0`) and collects h_bottleneck.
/// Sample `i` draws its noise from the `(seed, i)` latent stream.
pub fn extract_latents(
    model: &DenoiserModel,
    data: &LabeledDataset,
    t: usize,
    schedule: &NoiseSchedule,
    seed: u64,
    conditioning: LatentConditioning,
) -> Result<FeatureSet, EvalError> {
    if t > schedule.steps() {
        return Err(EvalError::Timestep { t, steps: schedule.steps() });
    }
    let mut features = Vec::with_capacity(data.len() * model.arch.bottleneck);
    for i in 0..data.len() {
        let x0 = data.sample_f64(i);
        let x_t = if t == 0 {
            x0
        } else {
            let eps = standard_normal(x0.len(), &mut stream(seed, Purpose::Latents, 0, i as u64));
            q_sample(&x0, t, &eps, schedule).expect("timestep checked above")
        };
        let y = match conditioning {
            LatentConditioning::TrueLabel => Label::Class(data.label(i)),
            LatentConditioning::Null => Label::Null,
        };
        features.extend(model.bottleneck(&x_t, t, y)?);
    }
    FeatureSet::new(
        model.arch.bottleneck,
        features,
        Some(data.labels().iter().map(|&l| l as usize).collect()),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct Separation {
    /// Per-class kNN purity; `None` for classes without samples.
    pub purity: Vec<Option<f64>>,
    /// Mean silhouette; `None` when fewer than two classes are present.
    pub silhouette: Option<f64>,
}

/// Per-class k-nearest-neighbor label purity (self excluded) and the mean
/// silhouette coefficient under Euclidean distance.
pub fn latent_separation(fs: &FeatureSet, k: usize) -> Result<Separation, EvalError> {
    let labels = fs.labels().ok_or(EvalError::Unlabeled)?;
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let n = fs.len();
    if n <= k {
        return Err(EvalError::TooFewPoints { needed: k + 1, got: n });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; classes];
    labels.iter().for_each(|&l| sizes[l] += 1);

    let mut purity_sum = vec![0.0; classes];
    let mut silhouette_sum = 0.0;
    let present = sizes.iter().filter(|&&s| s > 0).count();
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut class_dist = vec![0.0; classes];
    for i in 0..n {
        dists.clear();
        class_dist.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            if j != i {
                let d2 = squared_distance(fs.row(i), fs.row(j));
                dists.push((d2, j));
                class_dist[labels[j]] += d2.sqrt();
            }
        }
        dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let same = dists[..k].iter().filter(|(_, j)| labels[*j] == labels[i]).count();
        purity_sum[labels[i]] += same as f64 / k as f64;

        if present >= 2 {
            let own = labels[i];
            if sizes[own] > 1 {
                let a = class_dist[own] / (sizes[own] - 1) as f64;
                let b = (0..classes)
                    .filter(|&c| c != own && sizes[c] > 0)
                    .map(|c| class_dist[c] / sizes[c] as f64)
                    .fold(f64::INFINITY, f64::min);
                let denom = a.max(b);
                if denom > 0.0 {
                    silhouette_sum += (b - a) / denom;
                }
            }
        }
    }
    Ok(Separation {
        purity: (0..classes).map(|c| (sizes[c] > 0).then(|| purity_sum[c] / sizes[c] as f64)).collect(),
        silhouette: (present >= 2).then(|| silhouette_sum / n as f64),
    })
}
