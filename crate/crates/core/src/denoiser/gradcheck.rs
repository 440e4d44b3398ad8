use super::{batch_loss, gradients, DenoiserBatch, DenoiserError, DenoiserModel, LossSpec, TENSOR_NAMES};

/// Relative error below this magnitude is measured against the floor instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error for each named tensor.
    pub per_tensor: Vec<(&'static str, f64)>,
    pub worst: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

/// Compares the analytic gradient of `spec` against central differences with
/// step `step`, for every scalar parameter.
///
/// The relative error of one entry is `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn grad_check(
    model: &DenoiserModel,
    batch: &DenoiserBatch,
    spec: &LossSpec,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, DenoiserError> {
    let (_, analytic) = gradients(model, batch, spec)?;
    let mut probe = model.clone();
    let mut per_tensor = Vec::with_capacity(TENSOR_NAMES.len());
    for (k, name) in TENSOR_NAMES.iter().enumerate() {
        let len = analytic.tensors()[k].len();
        let mut worst: f64 = 0.0;
        for j in 0..len {
            let original = model.params.tensors()[k][j];
            probe.params.tensors_mut()[k][j] = original + step;
            let plus = batch_loss(&probe, batch, spec)?.total;
            probe.params.tensors_mut()[k][j] = original - step;
            let minus = batch_loss(&probe, batch, spec)?.total;
            probe.params.tensors_mut()[k][j] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.tensors()[k][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            worst = worst.max(rel);
        }
        per_tensor.push((*name, worst));
    }
    let worst = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport { per_tensor, worst, tolerance })
}
