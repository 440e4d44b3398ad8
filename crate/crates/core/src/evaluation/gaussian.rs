//! Gaussian fits and the Fréchet distance between them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{EvalError, FeatureMap, FeatureSet};
use crate::longtail_data::LabeledDataset;

/// Symmetry tolerance, relative to the largest entry.
const SYMMETRY_TOL: f64 = 1e-8;

/// Sample mean and unbiased sample covariance.
pub fn fit_gaussian(fs: &FeatureSet) -> Result<(DVector<f64>, DMatrix<f64>), EvalError> {
    let n = fs.len();
    if n < 2 {
        return Err(EvalError::TooFewPoints { needed: 2, got: n });
    }
    let d = fs.dim();
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(fs.row(i)) {
            *m += x;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let r = fs.row(i);
        for a in 0..d {
            let da = r[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok((mean, cov))
}

fn symmetrized(s: &DMatrix<f64>) -> Result<DMatrix<f64>, EvalError> {
    if !s.is_square() {
        return Err(EvalError::Shape(format!("covariance is {}x{}", s.nrows(), s.ncols())));
    }
    let scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let asym = (s - s.transpose()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(asym <= SYMMETRY_TOL * scale) {
        return Err(EvalError::NotSymmetric(asym));
    }
    Ok((s + s.transpose()) * 0.5)
}

fn clamped_eigen(s: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(s);
    (eig.eigenvalues.map(|v| v.max(0.0)), eig.eigenvectors)
}

fn psd_sqrt(s: DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = clamped_eigen(s);
    let root = DMatrix::from_diagonal(&vals.map(f64::sqrt));
    &vecs * root * vecs.transpose()
}

/// ‖m1 − m2‖² + tr(S1 + S2 − 2·(S1^½ S2 S1^½)^½), square roots taken through
/// symmetric eigendecompositions.
pub fn frechet_distance(
    m1: &DVector<f64>,
    s1: &DMatrix<f64>,
    m2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> Result<f64, EvalError> {
    let d = m1.len();
    if m2.len() != d || s1.shape() != (d, d) || s2.shape() != (d, d) {
        return Err(EvalError::Shape(format!(
            "means {} and {}, covariances {:?} and {:?}",
            d,
            m2.len(),
            s1.shape(),
            s2.shape()
        )));
    }
    let s1 = symmetrized(s1)?;
    let s2 = symmetrized(s2)?;
    if m1 == m2 && s1 == s2 {
        return Ok(0.0);
    }
    let mean_term = (m1 - m2).norm_squared();
    let r1 = psd_sqrt(s1.clone());
    let inner = &r1 * &s2 * &r1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let (vals, _) = clamped_eigen(inner);
    let cross: f64 = vals.iter().map(|v| v.sqrt()).sum();
    Ok((mean_term + s1.trace() + s2.trace() - 2.0 * cross).max(0.0))
}

/// Fréchet distance between the fitted Gaussians of two feature sets.
pub fn frechet_between(a: &FeatureSet, b: &FeatureSet) -> Result<f64, EvalError> {
    if a.dim() != b.dim() {
        return Err(EvalError::DimensionMismatch { real: a.dim(), gen: b.dim() });
    }
    let (m1, s1) = fit_gaussian(a)?;
    let (m2, s2) = fit_gaussian(b)?;
    frechet_distance(&m1, &s1, &m2, &s2)
}

/// Per-class Fréchet distance in the given feature space. Classes with fewer
/// than two samples on either side are `None`.
pub fn per_class_frechet(
    real: &LabeledDataset,
    gen: &LabeledDataset,
    map: &dyn FeatureMap,
) -> Result<Vec<Option<f64>>, EvalError> {
    if real.dim() != gen.dim() {
        return Err(EvalError::DimensionMismatch { real: real.dim(), gen: gen.dim() });
    }
    let classes = real.num_classes().max(gen.num_classes());
    let mut out = Vec::with_capacity(classes);
    for c in 0..classes {
        let r = real.select(&real.indices_of(c));
        let g = gen.select(&gen.indices_of(c));
        if r.len() < 2 || g.len() < 2 {
            out.push(None);
            continue;
        }
        out.push(Some(frechet_between(&map.features(&r)?, &map.features(&g)?)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::RawFeatures;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn fs(rows: &[&[f64]]) -> FeatureSet {
        FeatureSet::new(rows[0].len(), rows.iter().flat_map(|r| r.iter().copied()).collect(), None).unwrap()
    }

    /// Closed form for 2×2: tr √(S1 S2) = √(tr(S1 S2) + 2·√det(S1 S2)).
    fn frechet_2d(m1: [f64; 2], s1: [[f64; 2]; 2], m2: [f64; 2], s2: [[f64; 2]; 2]) -> f64 {
        let p = [
            [s1[0][0] * s2[0][0] + s1[0][1] * s2[1][0], s1[0][0] * s2[0][1] + s1[0][1] * s2[1][1]],
            [s1[1][0] * s2[0][0] + s1[1][1] * s2[1][0], s1[1][0] * s2[0][1] + s1[1][1] * s2[1][1]],
        ];
        let tr = p[0][0] + p[1][1];
        let det = (p[0][0] * p[1][1] - p[0][1] * p[1][0]).max(0.0);
        let cross = (tr + 2.0 * det.sqrt()).max(0.0).sqrt();
        let dm = (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2);
        dm + s1[0][0] + s1[1][1] + s2[0][0] + s2[1][1] - 2.0 * cross
    }

    fn mat(s: [[f64; 2]; 2]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[s[0][0], s[0][1], s[1][0], s[1][1]])
    }

    #[test]
    fn identical_points_zero_covariance() {
        let (m, s) = fit_gaussian(&fs(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]])).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 2.0]);
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_points_unbiased() {
        let (m, s) = fit_gaussian(&fs(&[&[0.0], &[2.0]])).unwrap();
        assert_eq!(m[0], 1.0);
        assert_eq!(s[(0, 0)], 2.0);
    }

    #[test]
    fn fit_needs_two_points() {
        assert!(matches!(fit_gaussian(&fs(&[&[0.0]])), Err(EvalError::TooFewPoints { .. })));
    }

    #[test]
    fn fit_matches_two_pass() {
        let mut rng = stream(1, Purpose::Data, 0, 0);
        let n = 50;
        let d = 3;
        let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let set = FeatureSet::new(d, data.clone(), None).unwrap();
        let (m, s) = fit_gaussian(&set).unwrap();
        for a in 0..d {
            let mean: f64 = (0..n).map(|i| data[i * d + a]).sum::<f64>() / n as f64;
            assert!((m[a] - mean).abs() <= 1e-12);
            for b in 0..d {
                let mb: f64 = (0..n).map(|i| data[i * d + b]).sum::<f64>() / n as f64;
                let c: f64 = (0..n).map(|i| (data[i * d + a] - mean) * (data[i * d + b] - mb)).sum::<f64>() / (n - 1) as f64;
                assert!((s[(a, b)] - c).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn identical_gaussians() {
        let m = DVector::from_vec(vec![0.5, -1.0]);
        let s = mat([[2.0, 0.3], [0.3, 1.0]]);
        assert_eq!(frechet_distance(&m, &s, &m, &s).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_unit_shift() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let d = frechet_distance(&DVector::from_element(1, 0.0), &one, &DVector::from_element(1, 1.0), &one).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn diagonal_swap() {
        let z = DVector::zeros(2);
        let d = frechet_distance(&z, &mat([[1.0, 0.0], [0.0, 4.0]]), &z, &mat([[4.0, 0.0], [0.0, 1.0]])).unwrap();
        assert!((d - 2.0).abs() < 1e-12, "{d}");
        assert!((frechet_2d([0.0; 2], [[1.0, 0.0], [0.0, 4.0]], [0.0; 2], [[4.0, 0.0], [0.0, 1.0]]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric() {
        let z = DVector::zeros(2);
        let bad = mat([[1.0, 0.5], [0.0, 1.0]]);
        assert!(matches!(frechet_distance(&z, &bad, &z, &bad), Err(EvalError::NotSymmetric(_))));
    }

    fn psd_2d() -> impl Strategy<Value = [[f64; 2]; 2]> {
        (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(a, b, c, d)| {
            // L·Lᵀ is PSD for any L.
            [[a * a + b * b, a * c + b * d], [a * c + b * d, c * c + d * d]]
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_matches_closed_form(
            s1 in psd_2d(), s2 in psd_2d(),
            m1 in prop::array::uniform2(-3.0f64..3.0), m2 in prop::array::uniform2(-3.0f64..3.0),
        ) {
            let (v1, v2) = (DVector::from_row_slice(&m1), DVector::from_row_slice(&m2));
            let ab = frechet_distance(&v1, &mat(s1), &v2, &mat(s2)).unwrap();
            let ba = frechet_distance(&v2, &mat(s2), &v1, &mat(s1)).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab));
            let oracle = frechet_2d(m1, s1, m2, s2);
            prop_assert!((ab - oracle).abs() <= 1e-6 * (1.0 + oracle), "{} vs {}", ab, oracle);
        }
    }

    fn ds(rows: &[(f32, f32, u16)], classes: usize) -> LabeledDataset {
        LabeledDataset::new(
            2,
            classes,
            rows.iter().flat_map(|r| [r.0, r.1]).collect(),
            rows.iter().map(|r| r.2).collect(),
        )
        .unwrap()
    }

    #[test]
    fn per_class_self_and_shift() {
        let real = ds(&[(0.0, 0.0, 0), (1.0, 0.5, 0), (0.5, 2.0, 0), (3.0, 3.0, 1), (4.0, 3.5, 1), (3.0, 5.0, 1)], 2);
        let zeros = per_class_frechet(&real, &real, &RawFeatures).unwrap();
        assert_eq!(zeros, vec![Some(0.0), Some(0.0)]);

        let shifted = ds(&[(0.0, 0.0, 0), (1.0, 0.5, 0), (0.5, 2.0, 0), (4.0, 1.0, 1), (5.0, 1.5, 1), (4.0, 3.0, 1)], 2);
        let d = per_class_frechet(&real, &shifted, &RawFeatures).unwrap();
        assert_eq!(d[0], Some(0.0));
        // δ = (1, −2)
        assert!((d[1].unwrap() - 5.0).abs() < 1e-9, "{:?}", d[1]);
    }

    #[test]
    fn per_class_flags_small_classes() {
        let real = ds(&[(0.0, 0.0, 0), (1.0, 0.0, 0), (3.0, 3.0, 1)], 2);
        let d = per_class_frechet(&real, &real, &RawFeatures).unwrap();
        assert_eq!(d, vec![Some(0.0), None]);
    }

    #[test]
    fn per_class_matches_composed_oracle() {
        let mut rng = stream(4, Purpose::Data, 0, 0);
        let mut rows = |shift: f64| -> Vec<(f32, f32, u16)> {
            (0..40)
                .map(|i| {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    ((a + shift) as f32, (0.5 * a + b) as f32, (i % 2) as u16)
                })
                .collect()
        };
        let real = ds(&rows(0.0), 2);
        let gen = ds(&rows(0.7), 2);
        let got = per_class_frechet(&real, &gen, &RawFeatures).unwrap();
        for c in 0..2 {
            let stats = |d: &LabeledDataset| {
                let pts: Vec<[f64; 2]> = d.indices_of(c).iter().map(|&i| [d.sample(i)[0] as f64, d.sample(i)[1] as f64]).collect();
                let n = pts.len() as f64;
                let m = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
                let mut s = [[0.0; 2]; 2];
                for p in &pts {
                    for a in 0..2 {
                        for b in 0..2 {
                            s[a][b] += (p[a] - m[a]) * (p[b] - m[b]) / (n - 1.0);
                        }
                    }
                }
                (m, s)
            };
            let (m1, s1) = stats(&real);
            let (m2, s2) = stats(&gen);
            let oracle = frechet_2d(m1, s1, m2, s2);
            assert!((got[c].unwrap() - oracle).abs() <= 1e-10 * (1.0 + oracle), "class {c}");
        }
    }
}
