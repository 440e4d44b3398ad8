//! Long-tailed labeled datasets and the LTDS1 binary format.
//!
//! LTDS1 layout, all integers little-endian:
//!
//! ```text
//! "LTDS1"            5 bytes magic
//! n_total            u32
//! dim                u32
//! num_classes        u32
//! n_total records of (f32[dim] sample, u16 label)
//! ```

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::Rng;

pub const MAGIC: &[u8; 5] = b"LTDS1";
const HEADER_LEN: usize = 5 + 12;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("imbalance ratio must lie in (0, 1], got {0}")]
    BadRatio(f64),
    #[error("head-class count must be at least 1")]
    ZeroHead,
    #[error("class count must be at least 1")]
    NoClasses,
    #[error("expected {expected} class counts, got {got}")]
    CountLength { expected: usize, got: usize },
    #[error("every class count is zero")]
    Empty,
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("ring data needs dim >= 2, got {0}")]
    BadDim(usize),
    #[error("input is not balanced: class {class} has {got} samples, expected {expected}")]
    Unbalanced { class: usize, got: usize, expected: usize },
    #[error("class {class} needs {needed} samples but only {available} are available")]
    NotEnough { class: usize, needed: usize, available: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("sample matrix has {got} values, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Decode failures of the binary formats. Each kind has a stable numeric code.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated payload: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("label {label} >= class count {classes} in record {record}")]
    LabelOutOfRange { record: usize, label: u16, classes: u32 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("io: {0}")]
    Io(String),
}

impl FormatError {
    pub fn code(&self) -> u8 {
        match self {
            FormatError::BadMagic => 1,
            FormatError::Truncated { .. } => 2,
            FormatError::LabelOutOfRange { .. } => 3,
            FormatError::InvalidHeader(_) => 4,
            FormatError::TrailingBytes(_) => 5,
            FormatError::UnsupportedVersion(_) => 6,
            FormatError::Io(_) => 7,
        }
    }
}

impl From<std::io::Error> for FormatError {
    fn from(e: std::io::Error) -> Self {
        FormatError::Io(e.to_string())
    }
}

/// Flat-vector samples with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    num_classes: usize,
    samples: Vec<f32>,
    labels: Vec<u16>,
    class_counts: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        dim: usize,
        num_classes: usize,
        samples: Vec<f32>,
        labels: Vec<u16>,
    ) -> Result<Self, DataError> {
        if num_classes == 0 {
            return Err(DataError::NoClasses);
        }
        if num_classes > u16::MAX as usize + 1 {
            return Err(FormatError::InvalidHeader(format!("{num_classes} classes exceed u16 labels")).into());
        }
        if dim == 0 {
            return Err(FormatError::InvalidHeader("dim must be at least 1".into()).into());
        }
        if samples.len() != labels.len() * dim {
            return Err(DataError::Shape { expected: labels.len() * dim, got: samples.len() });
        }
        let mut class_counts = vec![0usize; num_classes];
        for &l in &labels {
            let l = l as usize;
            if l >= num_classes {
                return Err(DataError::LabelRange { label: l, classes: num_classes });
            }
            class_counts[l] += 1;
        }
        Ok(Self { dim, num_classes, samples, labels, class_counts })
    }

    pub fn empty(dim: usize, num_classes: usize) -> Result<Self, DataError> {
        Self::new(dim, num_classes, Vec::new(), Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sample_f64(&self, i: usize) -> Vec<f64> {
        self.sample(i).iter().map(|&v| v as f64).collect()
    }

    /// Indices of all samples with label `class`, in storage order.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.label(i) == class).collect()
    }

    /// New dataset holding the given rows in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut samples = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            samples.extend_from_slice(self.sample(r));
            labels.push(self.labels[r]);
        }
        Self::new(self.dim, self.num_classes, samples, labels).expect("rows of a valid dataset")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (4 * self.dim + 2));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        for i in 0..self.len() {
            for v in self.sample(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&self.labels[i].to_le_bytes());
        }
        out
    }

    /// Decodes an LTDS1 byte buffer. Never returns a partial dataset.
    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::Truncated { needed: HEADER_LEN, available: bytes.len() });
        }
        let word = |k: usize| u32::from_le_bytes(bytes[5 + 4 * k..9 + 4 * k].try_into().unwrap());
        let (n_total, dim, classes) = (word(0) as usize, word(1) as usize, word(2));
        if dim == 0 {
            return Err(FormatError::InvalidHeader("dim must be at least 1".into()));
        }
        if classes == 0 || classes as usize > u16::MAX as usize + 1 {
            return Err(FormatError::InvalidHeader(format!("class count {classes}")));
        }
        let record = dim
            .checked_mul(4)
            .and_then(|b| b.checked_add(2))
            .ok_or_else(|| FormatError::InvalidHeader("record size overflows".into()))?;
        let needed = n_total
            .checked_mul(record)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| FormatError::InvalidHeader("payload size overflows".into()))?;
        if bytes.len() < needed {
            return Err(FormatError::Truncated { needed, available: bytes.len() });
        }
        if bytes.len() > needed {
            return Err(FormatError::TrailingBytes(bytes.len() - needed));
        }
        let mut samples = Vec::with_capacity(n_total * dim);
        let mut labels = Vec::with_capacity(n_total);
        for (r, rec) in bytes[HEADER_LEN..].chunks_exact(record).enumerate() {
            let (vals, lab) = rec.split_at(4 * dim);
            samples.extend(vals.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
            let label = u16::from_le_bytes([lab[0], lab[1]]);
            if label as u32 >= classes {
                return Err(FormatError::LabelOutOfRange { record: r, label, classes });
            }
            labels.push(label);
        }
        Self::new(dim, classes as usize, samples, labels)
            .map_err(|e| FormatError::InvalidHeader(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.encode())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::decode(&std::fs::read(path)?)
    }
}

pub fn write_dataset(data: &LabeledDataset, path: &Path) -> Result<(), FormatError> {
    data.write(path)
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset, FormatError> {
    LabeledDataset::read(path)
}

/// Geometric class sizes n_i = ⌊N·ρ^{i/(C−1)}⌋ for i in 0..C.
pub fn class_counts(head: usize, rho: f64, classes: usize) -> Result<Vec<usize>, DataError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(DataError::BadRatio(rho));
    }
    if head == 0 {
        return Err(DataError::ZeroHead);
    }
    if classes == 0 {
        return Err(DataError::NoClasses);
    }
    if classes == 1 {
        return Ok(vec![head]);
    }
    let denom = (classes - 1) as f64;
    Ok((0..classes)
        .map(|i| (head as f64 * rho.powf(i as f64 / denom)).floor() as usize)
        .collect())
}

/// Isotropic Gaussian blobs centered on a ring in the first two coordinates.
pub fn make_ring_gaussians(
    counts: &[usize],
    radius: f64,
    sigma: f64,
    dim: usize,
    rng: &mut Rng,
) -> Result<LabeledDataset, DataError> {
    let classes = counts.len();
    if classes == 0 {
        return Err(DataError::NoClasses);
    }
    if dim < 2 {
        return Err(DataError::BadDim(dim));
    }
    if !(sigma > 0.0) {
        return Err(DataError::BadSigma(sigma));
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(DataError::Empty);
    }
    let total: usize = counts.iter().sum();
    let mut samples = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    for (class, &n) in counts.iter().enumerate() {
        let center = ring_center(class, classes, radius, dim);
        for _ in 0..n {
            for c in &center {
                let z: f64 = rng.sample(StandardNormal);
                samples.push((c + sigma * z) as f32);
            }
            labels.push(class as u16);
        }
    }
    LabeledDataset::new(dim, classes, samples, labels)
}

pub fn ring_center(class: usize, classes: usize, radius: f64, dim: usize) -> Vec<f64> {
    let angle = 2.0 * PI * class as f64 / classes as f64;
    let mut c = vec![0.0; dim];
    c[0] = radius * angle.cos();
    c[1] = radius * angle.sin();
    c
}

/// Keeps ⌊N·ρ^{i/(C−1)}⌋ samples of class i from a balanced dataset, drawn
/// without replacement, in shuffled order.
pub fn subsample_longtail(
    data: &LabeledDataset,
    rho: f64,
    rng: &mut Rng,
) -> Result<LabeledDataset, DataError> {
    let counts = data.class_counts();
    let head = counts[0];
    for (class, &c) in counts.iter().enumerate() {
        if c != head {
            return Err(DataError::Unbalanced { class, got: c, expected: head });
        }
    }
    let keep = class_counts(head, rho, data.num_classes())?;
    let mut rows = Vec::with_capacity(keep.iter().sum());
    for (class, &n) in keep.iter().enumerate() {
        let mut pool = data.indices_of(class);
        if n > pool.len() {
            return Err(DataError::NotEnough { class, needed: n, available: pool.len() });
        }
        let (chosen, _) = pool.partial_shuffle(rng, n);
        rows.extend_from_slice(chosen);
    }
    rows.shuffle(rng);
    Ok(data.select(&rows))
}
