//! The training loop: per-sample timesteps, label dropout for guidance,
//! contrastive loss assembly, and Adam updates.

use std::io::Write;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::{self, ArchConfig, DenoiserBatch, DenoiserError, DenoiserModel, Label, LossSpec, Params};
use crate::forward_process::{q_sample_into, sample_timesteps, standard_normal};
use crate::longtail_data::LabeledDataset;
use crate::losses::Reduction;
use crate::rng::{stream, Purpose, Rng};
use crate::schedules::{contrastive_weight, ContrastiveWeightConfig, NoiseSchedule, ScheduleError, ScheduleParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in `{tensor}` at step {step}")]
    NonFiniteGradient { step: u64, tensor: &'static str },
    #[error("non-finite {what} loss at step {step}")]
    NonFiniteLoss { step: u64, what: &'static str },
    #[error("at step {step}: {source}")]
    Model { step: u64, source: DenoiserError },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("optimizer state has {state} entries but the model has {params}")]
    StateShape { state: usize, params: usize },
}

/// How λ(t) is applied when timesteps differ within a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Per-sample timesteps; the contrastive term is scaled by the batch mean of λ(t_i).
    #[default]
    BatchMean,
    /// One timestep shared by the whole batch, scaled by λ(t).
    SharedT,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam update on a flat parameter vector.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam step on a model. Non-finite gradients abort before anything is touched.
pub fn adam_step(
    model: &mut DenoiserModel,
    grads: &Params,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if let Some(tensor) = grads.first_non_finite() {
        return Err(TrainError::NonFiniteGradient { step: state.step + 1, tensor });
    }
    let len = model.params.len();
    if state.m.len() != len || state.v.len() != len {
        return Err(TrainError::StateShape { state: state.m.len(), params: len });
    }
    let shapes = model.params.shapes();
    let mut flat = model.params.flatten();
    adam_update(&mut flat, &grads.flatten(), state, cfg);
    model.params.load_flat(&flat);
    debug_assert_eq!(model.params.shapes(), shapes);
    Ok(())
}

/// Replaces each label with the null token with probability `p_uncond`.
///
/// One uniform draw is consumed per label whatever `p_uncond` is.
pub fn label_dropout(labels: &[usize], p_uncond: f64, rng: &mut Rng) -> Vec<Label> {
    labels
        .iter()
        .map(|&y| if rng.random::<f64>() < p_uncond { Label::Null } else { Label::Class(y) })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub p_uncond: f64,
    pub contrastive: ContrastiveWeightConfig,
    pub tau_sc: f64,
    pub schedule: ScheduleParams,
    pub seed: u64,
    pub reduction: Reduction,
    pub lambda_mode: LambdaMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 128,
            adam: AdamConfig::default(),
            p_uncond: 0.1,
            contrastive: ContrastiveWeightConfig::default(),
            tau_sc: 0.12,
            schedule: ScheduleParams::default(),
            seed: 0,
            reduction: Reduction::Mean,
            lambda_mode: LambdaMode::BatchMean,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.batch_size < 2 {
            out.push(format!("train.batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(0.0..1.0).contains(&self.p_uncond) {
            out.push(format!("train.p_uncond must lie in [0, 1), got {}", self.p_uncond));
        }
        if !(self.tau_sc > 0.0) {
            out.push(format!("train.tau_sc must be positive, got {}", self.tau_sc));
        }
        if !(self.contrastive.tau_r > 0.0) {
            out.push(format!("train.tau_r must be positive, got {}", self.contrastive.tau_r));
        }
        if !(self.contrastive.w >= 0.0) {
            out.push(format!("train.w must be non-negative, got {}", self.contrastive.w));
        }
        if !(self.adam.lr > 0.0) {
            out.push(format!("train.lr must be positive, got {}", self.adam.lr));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) {
            out.push(format!("train.beta1 must lie in [0, 1), got {}", self.adam.beta1));
        }
        if !(0.0..1.0).contains(&self.adam.beta2) {
            out.push(format!("train.beta2 must lie in [0, 1), got {}", self.adam.beta2));
        }
        if !(self.adam.eps > 0.0) {
            out.push(format!("train.eps must be positive, got {}", self.adam.eps));
        }
        if let Err(e) = NoiseSchedule::from_params(&self.schedule) {
            out.push(format!("schedule: {e}"));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based count of completed optimizer steps.
    pub step: u64,
    pub l_diff: f64,
    pub l_con: f64,
    pub lambda_bar: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub no_positive_pairs: bool,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "step,l_diff,l_con,lambda_bar,grad_norm";

    /// Deterministic CSV; wall time is left out so reruns are byte-identical.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "{}", Self::CSV_HEADER)?;
        }
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.step, r.l_diff, r.l_con, r.lambda_bar, r.grad_norm)?;
        }
        Ok(())
    }
}

/// Whether the contrastive branch is built at all.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Full,
    /// Never evaluates the projection head or the contrastive loss.
    DiffusionOnly,
}

/// Model, optimizer state, and everything needed to take the next step.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub model: DenoiserModel,
    pub optimizer: AdamState,
    schedule: NoiseSchedule,
    data: &'a LabeledDataset,
    branch: Branch,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a LabeledDataset, arch: ArchConfig) -> Result<Self, TrainError> {
        let model = DenoiserModel::init(arch, &mut stream(config.seed, Purpose::Init, 0, 0))
            .map_err(|source| TrainError::Model { step: 0, source })?;
        let optimizer = AdamState::new(model.params.len());
        Self::resume(config, data, model, optimizer)
    }

    /// Continue from an existing model and optimizer state.
    pub fn resume(
        config: TrainConfig,
        data: &'a LabeledDataset,
        model: DenoiserModel,
        optimizer: AdamState,
    ) -> Result<Self, TrainError> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(TrainError::Config(problems.join("; ")));
        }
        if data.is_empty() {
            return Err(TrainError::Data("dataset is empty".into()));
        }
        if config.batch_size > data.len() {
            return Err(TrainError::Data(format!(
                "batch size {} exceeds dataset size {}",
                config.batch_size,
                data.len()
            )));
        }
        if data.dim() != model.arch.dim || data.num_classes() != model.arch.num_classes {
            return Err(TrainError::Data(format!(
                "dataset is {}-dimensional with {} classes, model expects {} and {}",
                data.dim(),
                data.num_classes(),
                model.arch.dim,
                model.arch.num_classes
            )));
        }
        if optimizer.m.len() != model.params.len() {
            return Err(TrainError::StateShape { state: optimizer.m.len(), params: model.params.len() });
        }
        let schedule = NoiseSchedule::from_params(&config.schedule)?;
        Ok(Self { config, model, optimizer, schedule, data, branch: Branch::Full })
    }

    pub fn with_branch(mut self, branch: Branch) -> Self {
        self.branch = branch;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.optimizer.step
    }

    /// Draws the inputs of optimizer step `step` (0-based). Depends only on the
    /// seed and the step index.
    pub fn draw_batch(&self, step: u64) -> DenoiserBatch {
        let cfg = &self.config;
        let dim = self.data.dim();
        let n = cfg.batch_size;
        let mut rng = stream(cfg.seed, Purpose::TrainStep, step, 0);
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.data.len())).collect();
        let t = match cfg.lambda_mode {
            LambdaMode::BatchMean => sample_timesteps(n, self.schedule.steps(), &mut rng),
            LambdaMode::SharedT => vec![sample_timesteps(1, self.schedule.steps(), &mut rng)[0]; n],
        };
        let eps = standard_normal(n * dim, &mut rng);
        let labels: Vec<usize> = rows.iter().map(|&r| self.data.label(r)).collect();
        let cond = label_dropout(&labels, cfg.p_uncond, &mut rng);
        let mut x_t = vec![0.0; n * dim];
        for (i, &r) in rows.iter().enumerate() {
            let x0 = self.data.sample_f64(r);
            q_sample_into(&x0, t[i], &eps[i * dim..(i + 1) * dim], &self.schedule, &mut x_t[i * dim..(i + 1) * dim])
                .expect("timesteps are drawn inside the schedule");
        }
        DenoiserBatch { dim, x_t, t, cond, labels, eps }
    }

    /// Batch mean of λ(t_i).
    pub fn lambda_bar(&self, t: &[usize]) -> f64 {
        let steps = self.schedule.steps();
        let sum: f64 = t
            .iter()
            .map(|&ti| contrastive_weight(&self.config.contrastive, ti, steps).expect("validated config"))
            .sum();
        sum / t.len() as f64
    }

    pub fn step(&mut self) -> Result<StepRecord, TrainError> {
        let started = Instant::now();
        let step = self.optimizer.step;
        let batch = self.draw_batch(step);
        let (spec, lambda_bar) = match self.branch {
            Branch::Full => {
                let lambda_bar = self.lambda_bar(&batch.t);
                (LossSpec::coral(lambda_bar, self.config.tau_sc, self.config.reduction), lambda_bar)
            }
            Branch::DiffusionOnly => (LossSpec::diffusion_only(), 0.0),
        };
        let (values, grads) = denoiser::gradients(&self.model, &batch, &spec)
            .map_err(|source| TrainError::Model { step: step + 1, source })?;
        for (what, v) in [("diffusion", values.diffusion), ("contrastive", values.contrastive), ("total", values.total)] {
            if !v.is_finite() {
                return Err(TrainError::NonFiniteLoss { step: step + 1, what });
            }
        }
        let grad_norm = grads.l2_norm();
        adam_step(&mut self.model, &grads, &mut self.optimizer, &self.config.adam)?;
        Ok(StepRecord {
            step: self.optimizer.step,
            l_diff: values.diffusion,
            l_con: values.contrastive,
            lambda_bar,
            total: values.total,
            grad_norm,
            no_positive_pairs: values.no_positive_pairs,
            wall_secs: started.elapsed().as_secs_f64(),
        })
    }

    /// Runs until `config.steps` optimizer steps have been taken in total.
    pub fn run(&mut self) -> Result<TrainLog, TrainError> {
        let mut log = TrainLog::default();
        while self.optimizer.step < self.config.steps {
            log.records.push(self.step()?);
        }
        Ok(log)
    }
}

/// Trains a fresh model for `config.steps` steps.
pub fn train(
    config: &TrainConfig,
    data: &LabeledDataset,
    arch: ArchConfig,
) -> Result<(DenoiserModel, TrainLog), TrainError> {
    let mut trainer = Trainer::new(config.clone(), data, arch)?;
    let log = trainer.run()?;
    Ok((trainer.model, log))
}

/// Same loop with the contrastive branch removed from the build entirely.
pub fn train_diffusion_only(
    config: &TrainConfig,
    data: &LabeledDataset,
    arch: ArchConfig,
) -> Result<(DenoiserModel, TrainLog), TrainError> {
    let mut trainer = Trainer::new(config.clone(), data, arch)?.with_branch(Branch::DiffusionOnly);
    let log = trainer.run()?;
    Ok((trainer.model, log))
}
