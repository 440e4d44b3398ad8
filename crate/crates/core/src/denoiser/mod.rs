//! Conditional noise-prediction network with an exposed bottleneck and a
//! projection head.
//!
//! Layout per sample:
//!
//! ```text
//! a1 = W_in·x + W_time·sin_emb(t) + E[y] (+ biases)      h1 = silu(a1)
//! a2 = W_enc·h1                                           h2 = silu(a2)   (skip source)
//! a3 = W_bot·h2                                           h  = silu(a3)   (bottleneck)
//! u  = W_proj·h                                           z  = u / ‖u‖
//! a4 = W_dec·h                                            h4 = silu(a4)
//! ε̂  = W_out·[h4 ⊕ h2]
//! ```
//!
//! Row `C` of the class-embedding table is the null label.

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckReport};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{self, ContrastiveBatch, LossError, Reduction};
use crate::rng::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum DenoiserError {
    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("input has dimension {got}, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("non-finite values in layer `{layer}`")]
    NonFinite { layer: &'static str },
    #[error("projection pre-activation is the zero vector; cannot normalize")]
    DegenerateProjection,
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub dim: usize,
    pub hidden: usize,
    pub bottleneck: usize,
    pub proj_dim: usize,
    pub time_embed_dim: usize,
    pub num_classes: usize,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), DenoiserError> {
        let widths = [
            ("dim", self.dim),
            ("hidden", self.hidden),
            ("bottleneck", self.bottleneck),
            ("time_embed_dim", self.time_embed_dim),
            ("num_classes", self.num_classes),
        ];
        for (name, w) in widths {
            if w == 0 {
                return Err(DenoiserError::InvalidArch(format!("{name} must be at least 1")));
            }
        }
        if self.proj_dim < 2 {
            return Err(DenoiserError::InvalidArch("proj_dim must be at least 2".into()));
        }
        Ok(())
    }

    /// Total number of scalar parameters, or `None` on overflow.
    pub fn param_count(&self) -> Option<usize> {
        let (d, h, b, p, e) = (self.dim, self.hidden, self.bottleneck, self.proj_dim, self.time_embed_dim);
        let linear = |i: usize, o: usize| i.checked_mul(o)?.checked_add(o);
        let parts = [
            linear(d, h)?,
            linear(e, h)?,
            self.num_classes.checked_add(1)?.checked_mul(h)?,
            linear(h, h)?,
            linear(h, b)?,
            linear(b, h)?,
            linear(h.checked_mul(2)?, d)?,
            linear(b, p)?,
        ];
        parts.iter().try_fold(0usize, |acc, &x| acc.checked_add(x))
    }
}

/// Conditioning label: a class index or the null token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Class(usize),
    Null,
}

/// Dense layer `y = W·x + b` with `W` stored row-major `[out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let scale = 1.0 / (inputs as f64).sqrt();
        let weight = (0..inputs * outputs).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { inputs, outputs, weight, bias: vec![0.0; outputs] }
    }

    /// out += W·x + b
    fn forward_add(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weight.chunks_exact(self.inputs).zip(&self.bias)) {
            *o += b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `grad` and, if given, dL/dx into `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &mut grad.weight[o * self.inputs..(o + 1) * self.inputs];
            for (w, v) in row.iter_mut().zip(x) {
                *w += g * v;
            }
        }
        if let Some(dx) = dx {
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }
}

/// All trainable tensors. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub input: Linear,
    pub time: Linear,
    /// `(C + 1) × hidden`, row `C` is the null label.
    pub class_embed: Vec<f64>,
    pub encoder: Linear,
    pub to_bottleneck: Linear,
    pub decoder: Linear,
    pub output: Linear,
    pub projection: Linear,
}

pub const TENSOR_NAMES: [&str; 15] = [
    "input.weight",
    "input.bias",
    "time.weight",
    "time.bias",
    "class_embed",
    "encoder.weight",
    "encoder.bias",
    "to_bottleneck.weight",
    "to_bottleneck.bias",
    "decoder.weight",
    "decoder.bias",
    "output.weight",
    "output.bias",
    "projection.weight",
    "projection.bias",
];

impl Params {
    pub fn zeros(arch: &ArchConfig) -> Self {
        let (d, h, b, p, e) = (arch.dim, arch.hidden, arch.bottleneck, arch.proj_dim, arch.time_embed_dim);
        Self {
            input: Linear::zeros(d, h),
            time: Linear::zeros(e, h),
            class_embed: vec![0.0; (arch.num_classes + 1) * h],
            encoder: Linear::zeros(h, h),
            to_bottleneck: Linear::zeros(h, b),
            decoder: Linear::zeros(b, h),
            output: Linear::zeros(2 * h, d),
            projection: Linear::zeros(b, p),
        }
    }

    /// Tensors in a fixed order matching [`TENSOR_NAMES`].
    pub fn tensors(&self) -> [&[f64]; 15] {
        [
            &self.input.weight,
            &self.input.bias,
            &self.time.weight,
            &self.time.bias,
            &self.class_embed,
            &self.encoder.weight,
            &self.encoder.bias,
            &self.to_bottleneck.weight,
            &self.to_bottleneck.bias,
            &self.decoder.weight,
            &self.decoder.bias,
            &self.output.weight,
            &self.output.bias,
            &self.projection.weight,
            &self.projection.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 15] {
        [
            &mut self.input.weight,
            &mut self.input.bias,
            &mut self.time.weight,
            &mut self.time.bias,
            &mut self.class_embed,
            &mut self.encoder.weight,
            &mut self.encoder.bias,
            &mut self.to_bottleneck.weight,
            &mut self.to_bottleneck.bias,
            &mut self.decoder.weight,
            &mut self.decoder.bias,
            &mut self.output.weight,
            &mut self.output.bias,
            &mut self.projection.weight,
            &mut self.projection.bias,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    /// Overwrites all values from a flat slice in [`Params::tensors`] order.
    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat parameter length mismatch");
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// First tensor holding a non-finite value, by name.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .iter()
            .zip(TENSOR_NAMES)
            .find(|(t, _)| t.iter().any(|v| !v.is_finite()))
            .map(|(_, n)| n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub arch: ArchConfig,
    pub params: Params,
}

/// Activations of one forward pass, kept for backprop.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub eps_hat: Vec<f64>,
    pub h_bottleneck: Vec<f64>,
    /// Unit-norm projection; empty when the pass skipped the projection head.
    pub z: Vec<f64>,
    x: Vec<f64>,
    time_features: Vec<f64>,
    class_row: usize,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    a3: Vec<f64>,
    u_norm: f64,
    a4: Vec<f64>,
    /// `[h4 ⊕ h2]`
    concat: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal features of an integer timestep: `[sin(t·f_k)…, cos(t·f_k)…]`
/// with `f_k = 10000^(−k/half)`. An odd width gets a trailing zero.
pub fn time_features(t: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    out
}

fn check_finite(v: &[f64], layer: &'static str) -> Result<(), DenoiserError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(DenoiserError::NonFinite { layer })
    }
}

impl DenoiserModel {
    /// Weights ~ N(0, 1/fan_in), biases zero.
    pub fn init(arch: ArchConfig, rng: &mut Rng) -> Result<Self, DenoiserError> {
        arch.validate()?;
        let (d, h, b, p, e) = (arch.dim, arch.hidden, arch.bottleneck, arch.proj_dim, arch.time_embed_dim);
        let input = Linear::init(d, h, rng);
        let time = Linear::init(e, h, rng);
        let embed_scale = 1.0 / ((arch.num_classes + 1) as f64).sqrt();
        let class_embed = (0..(arch.num_classes + 1) * h)
            .map(|_| embed_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let params = Params {
            input,
            time,
            class_embed,
            encoder: Linear::init(h, h, rng),
            to_bottleneck: Linear::init(h, b, rng),
            decoder: Linear::init(b, h, rng),
            output: Linear::init(2 * h, d, rng),
            projection: Linear::init(b, p, rng),
        };
        Ok(Self { arch, params })
    }

    pub fn zeroed(arch: ArchConfig) -> Result<Self, DenoiserError> {
        arch.validate()?;
        Ok(Self { arch, params: Params::zeros(&arch) })
    }

    fn class_row(&self, y: Label) -> Result<usize, DenoiserError> {
        match y {
            Label::Class(c) if c < self.arch.num_classes => Ok(c),
            Label::Class(c) => Err(DenoiserError::LabelOutOfRange { label: c, classes: self.arch.num_classes }),
            Label::Null => Ok(self.arch.num_classes),
        }
    }

    /// Full pass including the projection head.
    pub fn forward(&self, x_t: &[f64], t: usize, y: Label) -> Result<ForwardTrace, DenoiserError> {
        self.run(x_t, t, y, true)
    }

    /// Noise prediction only; the projection head is not evaluated.
    pub fn predict_eps(&self, x_t: &[f64], t: usize, y: Label) -> Result<Vec<f64>, DenoiserError> {
        Ok(self.run(x_t, t, y, false)?.eps_hat)
    }

    /// Bottleneck activations h_b for one input.
    pub fn bottleneck(&self, x_t: &[f64], t: usize, y: Label) -> Result<Vec<f64>, DenoiserError> {
        Ok(self.run(x_t, t, y, false)?.h_bottleneck)
    }

    fn run(&self, x: &[f64], t: usize, y: Label, project: bool) -> Result<ForwardTrace, DenoiserError> {
        let arch = &self.arch;
        let p = &self.params;
        if x.len() != arch.dim {
            return Err(DenoiserError::InputDim { expected: arch.dim, got: x.len() });
        }
        let class_row = self.class_row(y)?;
        let h = arch.hidden;

        let tf = time_features(t, arch.time_embed_dim);
        let mut a1 = p.class_embed[class_row * h..(class_row + 1) * h].to_vec();
        p.input.forward_add(x, &mut a1);
        p.time.forward_add(&tf, &mut a1);
        check_finite(&a1, "input")?;
        let h1: Vec<f64> = a1.iter().map(|&v| silu(v)).collect();

        let mut a2 = vec![0.0; h];
        p.encoder.forward_add(&h1, &mut a2);
        check_finite(&a2, "encoder")?;
        let h2: Vec<f64> = a2.iter().map(|&v| silu(v)).collect();

        let mut a3 = vec![0.0; arch.bottleneck];
        p.to_bottleneck.forward_add(&h2, &mut a3);
        check_finite(&a3, "to_bottleneck")?;
        let hb: Vec<f64> = a3.iter().map(|&v| silu(v)).collect();

        let (z, u_norm) = if project {
            let mut u = vec![0.0; arch.proj_dim];
            p.projection.forward_add(&hb, &mut u);
            check_finite(&u, "projection")?;
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(DenoiserError::DegenerateProjection);
            }
            (u.iter().map(|v| v / norm).collect(), norm)
        } else {
            (Vec::new(), 0.0)
        };

        let mut a4 = vec![0.0; h];
        p.decoder.forward_add(&hb, &mut a4);
        check_finite(&a4, "decoder")?;
        let mut concat: Vec<f64> = a4.iter().map(|&v| silu(v)).collect();
        concat.extend_from_slice(&h2);

        let mut eps_hat = vec![0.0; arch.dim];
        p.output.forward_add(&concat, &mut eps_hat);
        check_finite(&eps_hat, "output")?;

        Ok(ForwardTrace {
            eps_hat,
            h_bottleneck: hb,
            z,
            x: x.to_vec(),
            time_features: tf,
            class_row,
            a1,
            h1,
            a2,
            h2,
            a3,
            u_norm,
            a4,
            concat,
        })
    }

    /// Accumulates parameter gradients for one sample into `grads`, given
    /// upstream gradients with respect to ε̂ and (optionally) z.
    pub fn backward(&self, trace: &ForwardTrace, d_eps_hat: &[f64], d_z: Option<&[f64]>, grads: &mut Params) {
        let p = &self.params;
        let h = self.arch.hidden;

        let mut d_concat = vec![0.0; 2 * h];
        p.output.backward(&trace.concat, d_eps_hat, &mut grads.output, Some(&mut d_concat));
        let (d_h4, d_skip) = d_concat.split_at(h);

        let d_a4: Vec<f64> = d_h4.iter().zip(&trace.a4).map(|(g, a)| g * silu_grad(*a)).collect();
        let mut d_hb = vec![0.0; self.arch.bottleneck];
        p.decoder.backward(&trace.h_bottleneck, &d_a4, &mut grads.decoder, Some(&mut d_hb));

        if let Some(dz) = d_z {
            assert!(!trace.z.is_empty(), "trace was produced without the projection head");
            // d/du of u/‖u‖ applied to dz: (dz − z·(z·dz)) / ‖u‖
            let zdz: f64 = trace.z.iter().zip(dz).map(|(a, b)| a * b).sum();
            let d_u: Vec<f64> = dz.iter().zip(&trace.z).map(|(g, z)| (g - z * zdz) / trace.u_norm).collect();
            p.projection.backward(&trace.h_bottleneck, &d_u, &mut grads.projection, Some(&mut d_hb));
        }

        let d_a3: Vec<f64> = d_hb.iter().zip(&trace.a3).map(|(g, a)| g * silu_grad(*a)).collect();
        let mut d_h2 = d_skip.to_vec();
        p.to_bottleneck.backward(&trace.h2, &d_a3, &mut grads.to_bottleneck, Some(&mut d_h2));

        let d_a2: Vec<f64> = d_h2.iter().zip(&trace.a2).map(|(g, a)| g * silu_grad(*a)).collect();
        let mut d_h1 = vec![0.0; h];
        p.encoder.backward(&trace.h1, &d_a2, &mut grads.encoder, Some(&mut d_h1));

        let d_a1: Vec<f64> = d_h1.iter().zip(&trace.a1).map(|(g, a)| g * silu_grad(*a)).collect();
        p.input.backward(&trace.x, &d_a1, &mut grads.input, None);
        p.time.backward(&trace.time_features, &d_a1, &mut grads.time, None);
        let row = &mut grads.class_embed[trace.class_row * h..(trace.class_row + 1) * h];
        for (g, d) in row.iter_mut().zip(&d_a1) {
            *g += d;
        }
    }
}

/// Inputs for one optimizer step's worth of forward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserBatch {
    pub dim: usize,
    /// Row-major noised inputs.
    pub x_t: Vec<f64>,
    pub t: Vec<usize>,
    /// Labels fed to the network, possibly masked to [`Label::Null`].
    pub cond: Vec<Label>,
    /// Original labels, used by the contrastive term.
    pub labels: Vec<usize>,
    /// Row-major noise targets.
    pub eps: Vec<f64>,
}

impl DenoiserBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn row<'a>(&self, v: &'a [f64], i: usize) -> &'a [f64] {
        &v[i * self.dim..(i + 1) * self.dim]
    }
}

/// The contrastive part of an objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastiveTerm {
    pub weight: f64,
    pub tau_sc: f64,
    pub reduction: Reduction,
}

/// Which terms the scalar objective contains.
///
/// `contrastive: None` never evaluates the projection head at all.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub diffusion: bool,
    pub contrastive: Option<ContrastiveTerm>,
}

impl LossSpec {
    pub fn diffusion_only() -> Self {
        Self { diffusion: true, contrastive: None }
    }

    pub fn supcon_only(tau_sc: f64, reduction: Reduction) -> Self {
        Self { diffusion: false, contrastive: Some(ContrastiveTerm { weight: 1.0, tau_sc, reduction }) }
    }

    pub fn coral(weight: f64, tau_sc: f64, reduction: Reduction) -> Self {
        Self { diffusion: true, contrastive: Some(ContrastiveTerm { weight, tau_sc, reduction }) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub diffusion: f64,
    pub contrastive: f64,
    pub contrastive_weight: f64,
    pub total: f64,
    pub no_positive_pairs: bool,
}

struct Evaluated {
    traces: Vec<ForwardTrace>,
    values: LossValues,
    d_eps: Vec<f64>,
    d_z: Option<Vec<f64>>,
}

fn evaluate(model: &DenoiserModel, batch: &DenoiserBatch, spec: &LossSpec) -> Result<Evaluated, DenoiserError> {
    let n = batch.len();
    let project = spec.contrastive.is_some();
    let traces = (0..n)
        .map(|i| model.run(batch.row(&batch.x_t, i), batch.t[i], batch.cond[i], project))
        .collect::<Result<Vec<_>, _>>()?;

    let eps_hat: Vec<f64> = traces.iter().flat_map(|tr| tr.eps_hat.iter().copied()).collect();
    let (diffusion, d_eps) = if spec.diffusion {
        let loss = losses::diffusion_loss(&batch.eps, &eps_hat, n);
        let scale = 2.0 / n as f64;
        let d = eps_hat.iter().zip(&batch.eps).map(|(a, b)| scale * (a - b)).collect();
        (loss, d)
    } else {
        (0.0, vec![0.0; eps_hat.len()])
    };

    let (contrastive, weight, no_positive_pairs, d_z) = match spec.contrastive {
        Some(term) => {
            let z: Vec<f64> = traces.iter().flat_map(|tr| tr.z.iter().copied()).collect();
            let out = losses::supcon_loss(
                &ContrastiveBatch { z: &z, width: model.arch.proj_dim, labels: &batch.labels, tau_sc: term.tau_sc },
                term.reduction,
            )?;
            let d_z = out.grad.iter().map(|g| g * term.weight).collect();
            (out.loss, term.weight, out.no_positive_pairs, Some(d_z))
        }
        None => (0.0, 0.0, false, None),
    };

    let total = losses::coral_loss(diffusion, contrastive, weight);
    Ok(Evaluated {
        traces,
        values: LossValues { diffusion, contrastive, contrastive_weight: weight, total, no_positive_pairs },
        d_eps,
        d_z,
    })
}

/// Scalar objective only.
pub fn batch_loss(model: &DenoiserModel, batch: &DenoiserBatch, spec: &LossSpec) -> Result<LossValues, DenoiserError> {
    Ok(evaluate(model, batch, spec)?.values)
}

/// Objective value and exact reverse-mode gradients for every parameter.
pub fn gradients(
    model: &DenoiserModel,
    batch: &DenoiserBatch,
    spec: &LossSpec,
) -> Result<(LossValues, Params), DenoiserError> {
    let ev = evaluate(model, batch, spec)?;
    let grads = backprop(model, &ev.traces, &ev.d_eps, ev.d_z.as_deref());
    if let Some(layer) = grads.first_non_finite() {
        return Err(DenoiserError::NonFinite { layer });
    }
    Ok((ev.values, grads))
}

/// Backprop of arbitrary upstream gradients through a set of traces.
pub fn backprop(model: &DenoiserModel, traces: &[ForwardTrace], d_eps: &[f64], d_z: Option<&[f64]>) -> Params {
    let dim = model.arch.dim;
    let p = model.arch.proj_dim;
    let mut grads = Params::zeros(&model.arch);
    for (i, tr) in traces.iter().enumerate() {
        let dz = d_z.map(|g| &g[i * p..(i + 1) * p]);
        model.backward(tr, &d_eps[i * dim..(i + 1) * dim], dz, &mut grads);
    }
    grads
}
