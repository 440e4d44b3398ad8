//! A one-hidden-layer softmax classifier trained on real data. Its posteriors
//! feed the classifier score and its hidden layer can serve as a feature map.

use rand_distr::{Distribution, Normal};

use super::{EvalError, FeatureMap, FeatureSet};
use crate::longtail_data::LabeledDataset;
use crate::rng::{stream, Purpose};
use crate::training::{adam_update, AdamConfig, AdamState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { hidden: 32, steps: 400, lr: 0.02, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    dim: usize,
    hidden: usize,
    classes: usize,
    shift: Vec<f64>,
    scale: Vec<f64>,
    /// `[W1 (h×d), b1 (h), W2 (C×h), b2 (C)]`
    params: Vec<f64>,
}

struct Offsets {
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

impl Probe {
    fn offsets(&self) -> Offsets {
        let b1 = self.hidden * self.dim;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        Offsets { b1, w2, b2, end: b2 + self.classes }
    }

    /// Fits on `data` with class-balanced cross-entropy, full batch, Adam.
    pub fn fit(data: &LabeledDataset, cfg: &ProbeConfig) -> Result<Self, EvalError> {
        if data.len() < 2 {
            return Err(EvalError::TooFewPoints { needed: 2, got: data.len() });
        }
        if cfg.hidden == 0 {
            return Err(EvalError::Shape("probe needs a hidden layer".into()));
        }
        let dim = data.dim();
        let n = data.len();
        let mut shift = vec![0.0; dim];
        let mut scale = vec![0.0; dim];
        for i in 0..n {
            for (s, x) in shift.iter_mut().zip(data.sample(i)) {
                *s += *x as f64 / n as f64;
            }
        }
        for i in 0..n {
            for ((s, m), x) in scale.iter_mut().zip(&shift).zip(data.sample(i)) {
                *s += (*x as f64 - m).powi(2) / n as f64;
            }
        }
        scale.iter_mut().for_each(|s| *s = if *s > 0.0 { 1.0 / s.sqrt() } else { 1.0 });

        let mut probe = Probe { dim, hidden: cfg.hidden, classes: data.num_classes(), shift, scale, params: Vec::new() };
        let o = probe.offsets();
        let mut rng = stream(cfg.seed, Purpose::Probe, 0, 0);
        let w1 = Normal::new(0.0, (1.0 / dim as f64).sqrt()).unwrap();
        let w2 = Normal::new(0.0, (1.0 / cfg.hidden as f64).sqrt()).unwrap();
        probe.params = vec![0.0; o.end];
        for v in &mut probe.params[..o.b1] {
            *v = w1.sample(&mut rng);
        }
        for v in &mut probe.params[o.w2..o.b2] {
            *v = w2.sample(&mut rng);
        }

        let counts = data.class_counts();
        let present = counts.iter().filter(|&&c| c > 0).count() as f64;
        let weights: Vec<f64> =
            counts.iter().map(|&c| if c > 0 { 1.0 / (present * c as f64) } else { 0.0 }).collect();
        let inputs: Vec<Vec<f64>> = (0..n).map(|i| probe.standardize(data.sample(i))).collect();
        let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
        let mut state = AdamState::new(o.end);
        for _ in 0..cfg.steps {
            let (_, grad) = probe.loss_and_grad(&inputs, data.labels(), &weights);
            adam_update(&mut probe.params, &grad, &mut state, &adam);
        }
        Ok(probe)
    }

    fn standardize(&self, x: &[f32]) -> Vec<f64> {
        x.iter().zip(&self.shift).zip(&self.scale).map(|((v, m), s)| (*v as f64 - m) * s).collect()
    }

    fn hidden_of(&self, x: &[f64]) -> Vec<f64> {
        let o = self.offsets();
        (0..self.hidden)
            .map(|j| {
                let row = &self.params[j * self.dim..(j + 1) * self.dim];
                (self.params[o.b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
            })
            .collect()
    }

    fn softmax_of(&self, h: &[f64]) -> Vec<f64> {
        let o = self.offsets();
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                let row = &self.params[o.w2 + c * self.hidden..o.w2 + (c + 1) * self.hidden];
                self.params[o.b2 + c] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    fn loss_and_grad(&self, inputs: &[Vec<f64>], labels: &[u16], weights: &[f64]) -> (f64, Vec<f64>) {
        let o = self.offsets();
        let mut grad = vec![0.0; o.end];
        let mut loss = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            let y = y as usize;
            let w = weights[y];
            let h = self.hidden_of(x);
            let p = self.softmax_of(&h);
            loss -= w * p[y].max(f64::MIN_POSITIVE).ln();
            let mut dh = vec![0.0; self.hidden];
            for c in 0..self.classes {
                let dl = w * (p[c] - if c == y { 1.0 } else { 0.0 });
                grad[o.b2 + c] += dl;
                for j in 0..self.hidden {
                    grad[o.w2 + c * self.hidden + j] += dl * h[j];
                    dh[j] += dl * self.params[o.w2 + c * self.hidden + j];
                }
            }
            for j in 0..self.hidden {
                let da = dh[j] * (1.0 - h[j] * h[j]);
                grad[o.b1 + j] += da;
                for k in 0..self.dim {
                    grad[j * self.dim + k] += da * x[k];
                }
            }
        }
        (loss, grad)
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    /// `n × C` posterior matrix, row-major.
    pub fn posteriors(&self, data: &LabeledDataset) -> Result<Vec<f64>, EvalError> {
        self.check_dim(data)?;
        Ok((0..data.len()).flat_map(|i| self.softmax_of(&self.hidden_of(&self.standardize(data.sample(i))))).collect())
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64, EvalError> {
        let post = self.posteriors(data)?;
        let hits = post
            .chunks_exact(self.classes)
            .zip(data.labels())
            .filter(|(row, &y)| {
                let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                best == y as usize
            })
            .count();
        Ok(hits as f64 / data.len().max(1) as f64)
    }

    fn check_dim(&self, data: &LabeledDataset) -> Result<(), EvalError> {
        if data.dim() != self.dim {
            return Err(EvalError::DimensionMismatch { real: self.dim, gen: data.dim() });
        }
        Ok(())
    }
}

/// The hidden (penultimate) layer.
impl FeatureMap for Probe {
    fn features(&self, data: &LabeledDataset) -> Result<FeatureSet, EvalError> {
        self.check_dim(data)?;
        let f = (0..data.len()).flat_map(|i| self.hidden_of(&self.standardize(data.sample(i)))).collect();
        FeatureSet::new(self.hidden, f, Some(data.labels().iter().map(|&l| l as usize).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::longtail_data::{class_counts, make_ring_gaussians};

    fn ring() -> LabeledDataset {
        let counts = class_counts(200, 0.1, 6).unwrap();
        make_ring_gaussians(&counts, 1.0, 0.1, 2, &mut stream(1, Purpose::Data, 0, 0)).unwrap()
    }

    #[test]
    fn learns_ring_classes() {
        let data = ring();
        let probe = Probe::fit(&data, &ProbeConfig::default()).unwrap();
        assert!(probe.accuracy(&data).unwrap() > 0.95);
        let post = probe.posteriors(&data).unwrap();
        for row in post.chunks_exact(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let data = ring();
        let cfg = ProbeConfig { steps: 20, ..ProbeConfig::default() };
        assert_eq!(Probe::fit(&data, &cfg).unwrap(), Probe::fit(&data, &cfg).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = ring().select(&[0, 1, 150, 200, 240, 260, 280]);
        let mut probe = Probe::fit(&data, &ProbeConfig { hidden: 5, steps: 3, ..ProbeConfig::default() }).unwrap();
        let inputs: Vec<Vec<f64>> = (0..data.len()).map(|i| probe.standardize(data.sample(i))).collect();
        let weights = vec![0.3, 0.1, 0.7, 0.2, 0.5, 0.9];
        let (_, grad) = probe.loss_and_grad(&inputs, data.labels(), &weights);
        let h = 1e-6;
        for k in 0..probe.params.len() {
            let orig = probe.params[k];
            probe.params[k] = orig + h;
            let plus = probe.loss_and_grad(&inputs, data.labels(), &weights).0;
            probe.params[k] = orig - h;
            let minus = probe.loss_and_grad(&inputs, data.labels(), &weights).0;
            probe.params[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            assert!((grad[k] - numeric).abs() <= 1e-6 * grad[k].abs().max(1.0), "param {k}");
        }
    }

    #[test]
    fn hidden_features_shape() {
        let data = ring();
        let probe = Probe::fit(&data, &ProbeConfig { steps: 1, ..ProbeConfig::default() }).unwrap();
        let fs = probe.features(&data).unwrap();
        assert_eq!((fs.len(), fs.dim()), (data.len(), 32));
    }
}
