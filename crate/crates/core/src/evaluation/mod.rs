//! Sample-quality metrics and latent-separation diagnostics.
//!
//! Everything here operates on a [`FeatureSet`]: raw sample coordinates for
//! low-dimensional data, or the hidden layer of a [`probe::Probe`].

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::denoiser::DenoiserError;
use crate::longtail_data::LabeledDataset;

pub mod gaussian;
pub mod kmeans;
pub mod latents;
pub mod manifold;
pub mod prd;
pub mod probe;
pub mod report;
pub mod score;

pub use gaussian::{fit_gaussian, frechet_between, frechet_distance, per_class_frechet};
pub use kmeans::{kmeans, KMeansResult};
pub use latents::{default_latent_t, extract_latents, latent_separation, LatentConditioning, Separation};
pub use manifold::improved_precision_recall;
pub use prd::{prd_f_scores, prd_from_histograms, PRD_ANGLES};
pub use probe::{Probe, ProbeConfig};
pub use report::{evaluate, EvalOptions, FeatureSpace};
pub use score::classifier_score;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("feature dimension mismatch: real {real}, generated {gen}")]
    DimensionMismatch { real: usize, gen: usize },
    #[error("covariance is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{what} does not sum to 1 (sum {sum})")]
    NotNormalized { what: String, sum: f64 },
    #[error("negative or non-finite probability in {0}")]
    BadProbability(String),
    #[error("{clusters} clusters requested for {points} points")]
    TooManyClusters { clusters: usize, points: usize },
    #[error("neighbor count k must be at least 1")]
    ZeroK,
    #[error("feature set has no labels")]
    Unlabeled,
    #[error("timestep {t} outside 0..={steps}")]
    Timestep { t: usize, steps: usize },
    #[error(transparent)]
    Model(#[from] DenoiserError),
}

/// An `n × d` feature matrix, row-major, with optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    features: Vec<f64>,
    labels: Option<Vec<usize>>,
}

impl FeatureSet {
    pub fn new(dim: usize, features: Vec<f64>, labels: Option<Vec<usize>>) -> Result<Self, EvalError> {
        if dim == 0 || features.len() % dim != 0 {
            return Err(EvalError::Shape(format!("{} values do not form rows of width {dim}", features.len())));
        }
        let n = features.len() / dim;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(EvalError::Shape(format!("{} labels for {n} rows", l.len())));
            }
        }
        Ok(Self { dim, features, labels })
    }

    /// Raw coordinates of a dataset, labels attached.
    pub fn from_dataset(data: &LabeledDataset) -> Self {
        Self {
            dim: data.dim(),
            features: data.samples().iter().map(|&v| v as f64).collect(),
            labels: Some(data.labels().iter().map(|&l| l as usize).collect()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Rows of `self` followed by rows of `other`; labels are dropped.
    pub fn concat(&self, other: &FeatureSet) -> Result<FeatureSet, EvalError> {
        if self.dim != other.dim {
            return Err(EvalError::DimensionMismatch { real: self.dim, gen: other.dim });
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        Ok(FeatureSet { dim: self.dim, features, labels: None })
    }

    /// One row per sample, columns `f0..f{d-1}` then `label` when labeled.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut cells: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(l) = &self.labels {
                cells.push(l[i].to_string());
            }
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Maps samples into the space where distribution metrics are computed.
pub trait FeatureMap {
    fn features(&self, data: &LabeledDataset) -> Result<FeatureSet, EvalError>;
}

/// The identity map on sample coordinates.
#[derive(Clone, Copy, Debug, Default)]
pub struct RawFeatures;

impl FeatureMap for RawFeatures {
    fn features(&self, data: &LabeledDataset) -> Result<FeatureSet, EvalError> {
        Ok(FeatureSet::from_dataset(data))
    }
}

/// Metric bundle written by `coral eval`. Absent entries serialize as `null`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub frechet: f64,
    pub per_class_frechet: Vec<Option<f64>>,
    pub classifier_score: Option<f64>,
    pub f8: f64,
    pub f_inv8: f64,
    pub improved_precision: f64,
    pub improved_recall: f64,
    pub latent_knn_purity: Option<Vec<Option<f64>>>,
    pub silhouette: Option<f64>,
}
