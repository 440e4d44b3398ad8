//! k-nearest-neighbor manifold estimates: improved precision and recall.

use super::{squared_distance, EvalError, FeatureSet};

/// Squared distance from each point to its k-th nearest neighbor in the same
/// set, the point itself excluded.
pub(crate) fn kth_neighbor_sq(fs: &FeatureSet, k: usize) -> Result<Vec<f64>, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let n = fs.len();
    if n <= k {
        return Err(EvalError::TooFewPoints { needed: k + 1, got: n });
    }
    let mut scratch = Vec::with_capacity(n - 1);
    Ok((0..n)
        .map(|i| {
            scratch.clear();
            scratch.extend((0..n).filter(|&j| j != i).map(|j| squared_distance(fs.row(i), fs.row(j))));
            *scratch.select_nth_unstable_by(k - 1, f64::total_cmp).1
        })
        .collect())
}

fn coverage(support: &FeatureSet, radii_sq: &[f64], queries: &FeatureSet) -> f64 {
    let covered = (0..queries.len())
        .filter(|&i| {
            let q = queries.row(i);
            (0..support.len()).any(|j| squared_distance(q, support.row(j)) <= radii_sq[j])
        })
        .count();
    covered as f64 / queries.len() as f64
}

/// Returns `(precision, recall)`: the fraction of generated points inside the
/// union of real k-NN balls, and vice versa.
pub fn improved_precision_recall(real: &FeatureSet, gen: &FeatureSet, k: usize) -> Result<(f64, f64), EvalError> {
    if real.dim() != gen.dim() {
        return Err(EvalError::DimensionMismatch { real: real.dim(), gen: gen.dim() });
    }
    let real_radii = kth_neighbor_sq(real, k)?;
    let gen_radii = kth_neighbor_sq(gen, k)?;
    Ok((coverage(real, &real_radii, gen), coverage(gen, &gen_radii, real)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand_distr::{Distribution, StandardNormal};

    fn line(xs: &[f64]) -> FeatureSet {
        FeatureSet::new(1, xs.to_vec(), None).unwrap()
    }

    #[test]
    fn self_comparison() {
        let r = line(&[0.0, 0.5, 3.0, 7.0, 7.2]);
        assert_eq!(improved_precision_recall(&r, &r, 3).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn separated_sets() {
        let a = line(&[0.0, 0.1, 0.2, 0.3, 0.4]);
        let b = line(&[100.0, 100.1, 100.2, 100.3, 100.4]);
        assert_eq!(improved_precision_recall(&a, &b, 3).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn hand_checked_line() {
        let real = line(&[0.0, 1.0, 2.0, 3.0]);
        let gen = line(&[0.1, 10.0]);
        let (p, _) = improved_precision_recall(&real, &gen, 1).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn set_size_must_exceed_k() {
        let a = line(&[0.0, 1.0, 2.0]);
        assert!(matches!(improved_precision_recall(&a, &a, 3), Err(EvalError::TooFewPoints { .. })));
        assert!(matches!(improved_precision_recall(&a, &a, 0), Err(EvalError::ZeroK)));
    }

    #[test]
    fn monotone_in_k() {
        let mut rng = stream(3, Purpose::Data, 0, 0);
        let mut cloud = |shift: f64| {
            let v: Vec<f64> = (0..120).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
            FeatureSet::new(2, v.iter().enumerate().map(|(i, x)| x + if i % 2 == 0 { shift } else { 0.0 }).collect(), None).unwrap()
        };
        let (a, b) = (cloud(0.0), cloud(1.5));
        let mut prev = (0.0, 0.0);
        for k in 1..10 {
            let (p, r) = improved_precision_recall(&a, &b, k).unwrap();
            assert!(p >= prev.0 && r >= prev.1, "k = {k}");
            prev = (p, r);
        }
        assert!(prev.0 < 1.0 || prev.1 < 1.0);
    }
}
