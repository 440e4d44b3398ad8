//! Precision and recall for distributions, summarized as F₈ and F₁∕₈.

use std::f64::consts::FRAC_PI_2;

use super::{kmeans, EvalError, FeatureSet};
use crate::rng::{stream, Purpose};

/// Number of slope angles on the PRD curve.
pub const PRD_ANGLES: usize = 1001;
const NORMALIZATION_TOL: f64 = 1e-6;

fn check_distribution(p: &[f64], what: &str) -> Result<(), EvalError> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(EvalError::BadProbability(what.into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(EvalError::NotNormalized { what: what.into(), sum });
    }
    Ok(())
}

fn f_beta(alpha: f64, beta: f64, b: f64) -> f64 {
    if alpha <= 0.0 || beta <= 0.0 {
        return 0.0;
    }
    (1.0 + b * b) * alpha * beta / (b * b * alpha + beta)
}

/// Returns `(F₈, F₁∕₈)` of the PRD curve between reference histogram `p` and
/// model histogram `q`, discretized at `angles` slopes.
pub fn prd_from_histograms(p: &[f64], q: &[f64], angles: usize) -> Result<(f64, f64), EvalError> {
    if p.len() != q.len() || p.is_empty() {
        return Err(EvalError::Shape(format!("histograms of length {} and {}", p.len(), q.len())));
    }
    if angles == 0 {
        return Err(EvalError::Shape("at least one angle is required".into()));
    }
    check_distribution(p, "reference histogram")?;
    check_distribution(q, "model histogram")?;
    // Renormalize so that rounding in the bin sums cannot keep P = Q off (1, 1).
    let (sum_p, sum_q): (f64, f64) = (p.iter().sum(), q.iter().sum());
    let (mut f8, mut f_inv8) = (0.0f64, 0.0f64);
    for j in 1..=angles {
        // The middle angle is π/4; pin its slope so P = Q lands on (1, 1).
        let lambda = if 2 * j == angles + 1 { 1.0 } else { (j as f64 / (angles + 1) as f64 * FRAC_PI_2).tan() };
        let overlap: f64 = p.iter().zip(q).map(|(pi, qi)| (lambda * pi).min(*qi)).sum();
        let alpha = overlap / sum_q;
        let beta = overlap / lambda / sum_p;
        f8 = f8.max(f_beta(alpha, beta, 8.0));
        f_inv8 = f_inv8.max(f_beta(alpha, beta, 1.0 / 8.0));
    }
    Ok((f8.min(1.0), f_inv8.min(1.0)))
}

/// Clusters the union of both sets and compares cluster-membership histograms.
pub fn prd_f_scores(
    real: &FeatureSet,
    gen: &FeatureSet,
    num_clusters: usize,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    if real.is_empty() || gen.is_empty() {
        return Err(EvalError::TooFewPoints { needed: 1, got: 0 });
    }
    let union = real.concat(gen)?;
    if num_clusters == 0 || num_clusters > union.len() {
        return Err(EvalError::TooManyClusters { clusters: num_clusters, points: union.len() });
    }
    let fit = kmeans(&union, num_clusters, &mut stream(seed, Purpose::KMeans, 0, 0))?;
    let mut p = vec![0.0; num_clusters];
    let mut q = vec![0.0; num_clusters];
    for (i, &c) in fit.assignments.iter().enumerate() {
        if i < real.len() {
            p[c] += 1.0;
        } else {
            q[c] += 1.0;
        }
    }
    p.iter_mut().for_each(|v| *v /= real.len() as f64);
    q.iter_mut().for_each(|v| *v /= gen.len() as f64);
    prd_from_histograms(&p, &q, PRD_ANGLES)
}
