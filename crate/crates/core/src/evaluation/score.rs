//! Inception-style classifier score over probe posteriors.

use super::EvalError;

const ROW_TOL: f64 = 1e-6;

/// exp(mean_x KL(p(y|x) ‖ p̄)) for an `n × classes` posterior matrix.
pub fn classifier_score(posteriors: &[f64], classes: usize) -> Result<f64, EvalError> {
    if classes == 0 || posteriors.is_empty() || posteriors.len() % classes != 0 {
        return Err(EvalError::Shape(format!("{} posterior values for {classes} classes", posteriors.len())));
    }
    let n = posteriors.len() / classes;
    let mut mean = vec![0.0; classes];
    for (i, row) in posteriors.chunks_exact(classes).enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(EvalError::BadProbability(format!("posterior row {i}")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(EvalError::NotNormalized { what: format!("posterior row {i}"), sum });
        }
        for (m, p) in mean.iter_mut().zip(row) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut kl = 0.0;
    for row in posteriors.chunks_exact(classes) {
        for (p, m) in row.iter().zip(&mean) {
            if *p > 0.0 {
                kl += p * (p / m).ln();
            }
        }
    }
    // The mean KL is a mutual information, so the score lies in [1, C]; clamp
    // away rounding at the ends.
    Ok((kl / n as f64).exp().clamp(1.0, classes as f64))
}
