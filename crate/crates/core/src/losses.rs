//! Diffusion, supervised contrastive, and combined objectives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("contrastive batch needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("row {row} of the embedding batch is not unit-norm (norm {norm})")]
    NotUnitNorm { row: usize, norm: f64 },
    #[error("embedding matrix has {got} values, expected {expected}")]
    Shape { expected: usize, got: usize },
}

/// How per-anchor SupCon terms are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Mean over anchors that have at least one positive.
    #[default]
    Mean,
    /// Plain sum over anchors.
    Sum,
}

/// Unit-norm embeddings with their (unmasked) class labels.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch<'a> {
    /// Row-major `[rows × width]`.
    pub z: &'a [f64],
    pub width: usize,
    pub labels: &'a [usize],
    pub tau_sc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupConOutput {
    pub loss: f64,
    /// Gradient of `loss` with respect to `z`, same layout.
    pub grad: Vec<f64>,
    /// Number of anchors that had at least one positive.
    pub anchors: usize,
    /// Set when no anchor had a positive; the loss is then 0.
    pub no_positive_pairs: bool,
}

/// Mean over the batch of ‖ε − ε̂‖².
pub fn diffusion_loss(eps: &[f64], eps_hat: &[f64], batch: usize) -> f64 {
    assert_eq!(eps.len(), eps_hat.len(), "eps and eps_hat shapes differ");
    if batch == 0 {
        return 0.0;
    }
    let sq: f64 = eps.iter().zip(eps_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    sq / batch as f64
}

const UNIT_TOL: f64 = 1e-6;

/// Supervised contrastive loss and its gradient with respect to the embeddings.
///
/// Anchors without a same-class partner in the batch are skipped. Each
/// anchor's log-sum-exp over the other rows is max-shifted before
/// exponentiation.
pub fn supcon_loss(batch: &ContrastiveBatch<'_>, reduction: Reduction) -> Result<SupConOutput, LossError> {
    let n = batch.labels.len();
    let p = batch.width;
    if n < 2 {
        return Err(LossError::BatchTooSmall(n));
    }
    if !(batch.tau_sc > 0.0) {
        return Err(LossError::BadTemperature(batch.tau_sc));
    }
    if batch.z.len() != n * p {
        return Err(LossError::Shape { expected: n * p, got: batch.z.len() });
    }
    let row = |i: usize| &batch.z[i * p..(i + 1) * p];
    for i in 0..n {
        let norm = row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= UNIT_TOL) {
            return Err(LossError::NotUnitNorm { row: i, norm });
        }
    }

    let inv_tau = 1.0 / batch.tau_sc;
    let mut logits = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                logits[i * n + j] = dot(row(i), row(j)) * inv_tau;
            }
        }
    }

    // dlogits[i][j] accumulates d(loss)/d(s_ij) before the final reduction scale.
    let mut dlogits = vec![0.0; n * n];
    let mut total = 0.0;
    let mut anchors = 0usize;
    let mut probs = vec![0.0; n];
    for i in 0..n {
        let positives = (0..n).filter(|&j| j != i && batch.labels[j] == batch.labels[i]).count();
        if positives == 0 {
            continue;
        }
        anchors += 1;
        let li = &logits[i * n..(i + 1) * n];
        let max = (0..n).filter(|&j| j != i).map(|j| li[j]).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..n {
            probs[j] = if j == i { 0.0 } else { (li[j] - max).exp() };
            denom += probs[j];
        }
        let log_denom = max + denom.ln();
        let inv_p = 1.0 / positives as f64;
        let mut term = 0.0;
        for j in 0..n {
            if j != i && batch.labels[j] == batch.labels[i] {
                term -= li[j] - log_denom;
            }
        }
        total += term * inv_p;
        for j in 0..n {
            if j == i {
                continue;
            }
            let pos = if batch.labels[j] == batch.labels[i] { inv_p } else { 0.0 };
            dlogits[i * n + j] = probs[j] / denom - pos;
        }
    }

    if anchors == 0 {
        return Ok(SupConOutput { loss: 0.0, grad: vec![0.0; n * p], anchors, no_positive_pairs: true });
    }
    let scale = match reduction {
        Reduction::Mean => 1.0 / anchors as f64,
        Reduction::Sum => 1.0,
    };
    let mut grad = vec![0.0; n * p];
    for i in 0..n {
        for j in 0..n {
            let g = (dlogits[i * n + j] + dlogits[j * n + i]) * inv_tau * scale;
            if g == 0.0 {
                continue;
            }
            let zj = row(j);
            for (gi, zjk) in grad[i * p..(i + 1) * p].iter_mut().zip(zj) {
                *gi += g * zjk;
            }
        }
    }
    Ok(SupConOutput { loss: total * scale, grad, anchors, no_positive_pairs: false })
}

/// diff + λ·con
pub fn coral_loss(diff: f64, con: f64, lambda_t: f64) -> f64 {
    diff + lambda_t * con
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn supcon(z: &[f64], width: usize, labels: &[usize], tau: f64) -> SupConOutput {
        supcon_loss(&ContrastiveBatch { z, width, labels, tau_sc: tau }, Reduction::Mean).unwrap()
    }

    #[test]
    fn diffusion_perfect_prediction() {
        let e = [0.1, -0.4, 2.0, 3.0];
        assert_eq!(diffusion_loss(&e, &e, 2), 0.0);
    }

    #[test]
    fn diffusion_three_four_five() {
        assert_eq!(diffusion_loss(&[0.0, 0.0], &[3.0, 4.0], 1), 25.0);
    }

    #[test]
    fn diffusion_matches_double_loop() {
        let (b, d) = (7, 5);
        let eps: Vec<f64> = (0..b * d).map(|k| ((k * 37 % 11) as f64 - 5.0) * 0.31).collect();
        let hat: Vec<f64> = (0..b * d).map(|k| ((k * 13 % 7) as f64 - 3.0) * 0.57).collect();
        let mut brute = 0.0;
        for i in 0..b {
            for j in 0..d {
                let diff = eps[i * d + j] - hat[i * d + j];
                brute += diff * diff;
            }
        }
        brute /= b as f64;
        assert!((diffusion_loss(&eps, &hat, b) - brute).abs() <= 1e-12);
    }

    #[test]
    fn two_class_four_points() {
        let z = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let out = supcon(&z, 2, &[0, 0, 1, 1], 1.0);
        // log(1 + 2/e) at 50 digits: 0.55144471393205108905547...
        assert!((out.loss - 0.551_444_713_932_051_1).abs() < 1e-12, "{}", out.loss);
        assert_eq!(out.anchors, 4);
    }

    #[test]
    fn identical_triplet_is_ln2() {
        let z = [0.6, 0.8, 0.6, 0.8, 0.6, 0.8];
        let out = supcon(&z, 2, &[3, 3, 3], 1.0);
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn distinct_labels_flagged() {
        let z = [1.0, 0.0, 0.0, 1.0, -1.0, 0.0];
        let out = supcon(&z, 2, &[0, 1, 2], 0.1);
        assert!(out.no_positive_pairs);
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn errors() {
        let z = [1.0, 0.0];
        let b = ContrastiveBatch { z: &z, width: 2, labels: &[0], tau_sc: 0.1 };
        assert_eq!(supcon_loss(&b, Reduction::Mean), Err(LossError::BatchTooSmall(1)));
        let z = [1.0, 0.0, 2.0, 0.0];
        let b = ContrastiveBatch { z: &z, width: 2, labels: &[0, 0], tau_sc: 0.1 };
        assert!(matches!(supcon_loss(&b, Reduction::Mean), Err(LossError::NotUnitNorm { row: 1, .. })));
        let z = [1.0, 0.0, 1.0, 0.0];
        let b = ContrastiveBatch { z: &z, width: 2, labels: &[0, 0], tau_sc: 0.0 };
        assert!(matches!(supcon_loss(&b, Reduction::Mean), Err(LossError::BadTemperature(_))));
    }

    #[test]
    fn sum_reduction_scales_by_anchor_count() {
        let z = [1.0, 0.0, 0.8, 0.6, 0.0, 1.0, 0.6, -0.8, -1.0, 0.0];
        let labels = [0, 0, 1, 1, 2];
        let b = ContrastiveBatch { z: &z, width: 2, labels: &labels, tau_sc: 0.5 };
        let mean = supcon_loss(&b, Reduction::Mean).unwrap();
        let sum = supcon_loss(&b, Reduction::Sum).unwrap();
        assert_eq!(mean.anchors, 4);
        assert!((sum.loss - 4.0 * mean.loss).abs() < 1e-12);
    }

    #[test]
    fn coral_combination() {
        assert_eq!(coral_loss(0.7, 123.0, 0.0), 0.7);
        assert_eq!(coral_loss(0.7, 0.0, 0.3), 0.7);
        assert!((coral_loss(1.0, 0.5, 0.034_903_4) - 1.017_451_7).abs() < 1e-12);
    }

    fn unit_rows(raw: &[f64], width: usize) -> Vec<f64> {
        raw.chunks(width)
            .flat_map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(move |v| v / n).collect::<Vec<_>>()
            })
            .collect()
    }

    /// Loss evaluated straight from the definition, no shifts, no shortcuts.
    fn naive_supcon(z: &[f64], width: usize, labels: &[usize], tau: f64) -> f64 {
        let n = labels.len();
        let row = |i: usize| &z[i * width..(i + 1) * width];
        let mut total = 0.0;
        let mut anchors = 0;
        for i in 0..n {
            let pos: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
            if pos.is_empty() {
                continue;
            }
            anchors += 1;
            let denom: f64 = (0..n).filter(|&s| s != i).map(|s| (dot(row(i), row(s)) / tau).exp()).sum();
            let term: f64 = pos.iter().map(|&p| ((dot(row(i), row(p)) / tau).exp() / denom).ln()).sum();
            total -= term / pos.len() as f64;
        }
        total / anchors as f64
    }

    fn batch_strategy() -> impl Strategy<Value = (usize, Vec<f64>, Vec<usize>)> {
        (2usize..=8, 2usize..=16).prop_flat_map(|(width, n)| {
            (
                Just(width),
                prop::collection::vec(-1.0f64..1.0, n * width)
                    .prop_filter("nonzero rows", move |v| v.chunks(width).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-3)),
                prop::collection::vec(0usize..3, n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_naive_definition((width, raw, labels) in batch_strategy(), tau in 0.2f64..2.0) {
            let z = unit_rows(&raw, width);
            let out = supcon(&z, width, &labels, tau);
            if !out.no_positive_pairs {
                let reference = naive_supcon(&z, width, &labels, tau);
                prop_assert!((out.loss - reference).abs() <= 1e-10 * (1.0 + reference.abs()));
            }
        }

        #[test]
        fn gradient_matches_finite_differences((width, raw, labels) in batch_strategy(), tau in 0.1f64..1.0) {
            let z = unit_rows(&raw, width);
            let out = supcon(&z, width, &labels, tau);
            prop_assume!(!out.no_positive_pairs);
            // The loss is extended off the sphere by the same formula; the gradient is the ambient one.
            let f = |zz: &[f64]| naive_supcon(zz, width, &labels, tau);
            // Five-point stencil: truncation error O(h^4), so roundoff dominates at h = 1e-4.
            let h = 1e-4;
            let at = |k: usize, delta: f64| {
                let mut v = z.clone();
                v[k] += delta;
                f(&v)
            };
            for k in 0..z.len() {
                let fd = (-at(k, 2.0 * h) + 8.0 * at(k, h) - 8.0 * at(k, -h) + at(k, -2.0 * h)) / (12.0 * h);
                let a = out.grad[k];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
                prop_assert!(rel < 1e-6, "k={} analytic={} fd={} rel={}", k, a, fd, rel);
            }
        }

        #[test]
        fn rotation_invariant((width, raw, labels) in batch_strategy(), angle in 0.0f64..6.28, tau in 0.1f64..1.0) {
            let z = unit_rows(&raw, width);
            // Givens rotation in the (0, 1) plane composed with a coordinate reflection.
            let (c, s) = (angle.cos(), angle.sin());
            let rotated: Vec<f64> = z.chunks(width).flat_map(|r| {
                let mut out = r.to_vec();
                out[0] = c * r[0] - s * r[1];
                out[1] = s * r[0] + c * r[1];
                out[width - 1] = -out[width - 1];
                out
            }).collect();
            let a = supcon(&z, width, &labels, tau).loss;
            let b = supcon(&rotated, width, &labels, tau).loss;
            prop_assert!((a - b).abs() <= 1e-10);
        }

        #[test]
        fn permutation_invariant((width, raw, labels) in batch_strategy(), shift in 0usize..16, tau in 0.1f64..1.0) {
            let z = unit_rows(&raw, width);
            let n = labels.len();
            let perm: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
            let mut seen = perm.clone();
            seen.sort();
            seen.dedup();
            prop_assume!(seen.len() == n);
            let pz: Vec<f64> = perm.iter().flat_map(|&i| z[i * width..(i + 1) * width].to_vec()).collect();
            let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let a = supcon(&z, width, &labels, tau).loss;
            let b = supcon(&pz, width, &pl, tau).loss;
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn lower_temperature_gives_larger_gradients() {
        use crate::rng::{stream, Purpose};
        use rand_distr::{Distribution, StandardNormal};
        for seed in 0..10 {
            let mut rng = stream(seed, Purpose::Data, 0, 0);
            let width = 4;
            let n = 12;
            let raw: Vec<f64> = (0..n * width).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = unit_rows(&raw, width);
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let max_norm = |tau: f64| {
                supcon(&z, width, &labels, tau)
                    .grad
                    .chunks(width)
                    .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0, f64::max)
            };
            assert!(max_norm(0.05) > max_norm(0.5), "seed {seed}");
        }
    }
}
