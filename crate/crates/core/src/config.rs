//! Run configuration: one flat JSON object with dotted keys.
//!
//! ```json
//! { "train.steps": 5000, "train.w": 0.01, "data.train": "train.ltds" }
//! ```
//!
//! Every key is optional. Unknown keys, wrongly typed values and invalid
//! settings are all collected and reported together.

use std::path::PathBuf;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::denoiser::ArchConfig;
use crate::losses::Reduction;
use crate::sampling::{SampleConfig, SigmaRule};
use crate::schedules::{ContrastiveWeightConfig, NoiseSchedule, ScheduleParams};
use crate::training::{AdamConfig, LambdaMode, TrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Syntax(String),
    #[error("config must be a JSON object")]
    NotAnObject,
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    pub fn problems(&self) -> Vec<String> {
        match self {
            ConfigError::Invalid(p) => p.clone(),
            other => vec![other.to_string()],
        }
    }
}

/// Every recognized key with its default, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("arch.hidden", "64"),
    ("arch.bottleneck", "16"),
    ("arch.proj_dim", "8"),
    ("arch.time_embed_dim", "32"),
    ("schedule.steps", "100"),
    ("schedule.beta_min", "1e-4 * 1000 / schedule.steps"),
    ("schedule.beta_max", "0.02 * 1000 / schedule.steps"),
    ("train.steps", "5000"),
    ("train.batch_size", "128"),
    ("train.lr", "2e-4"),
    ("train.beta1", "0.9"),
    ("train.beta2", "0.999"),
    ("train.eps", "1e-8"),
    ("train.p_uncond", "0.1"),
    ("train.w", "0.01"),
    ("train.tau_r", "0.8"),
    ("train.tau_sc", "0.12"),
    ("train.seed", "0"),
    ("train.reduction", "\"mean\" | \"sum\""),
    ("train.lambda_mode", "\"batch_mean\" | \"shared_t\""),
    ("sample.omega", "0.6"),
    ("sample.n_per_class", "100"),
    ("sample.sigma", "\"beta\" | \"posterior\""),
    ("sample.seed", "0"),
    ("data.train", "null"),
    ("out.dir", "\"out\""),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub hidden: usize,
    pub bottleneck: usize,
    pub proj_dim: usize,
    pub time_embed_dim: usize,
    pub schedule: ScheduleParams,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub data_train: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schedule = ScheduleParams::scaled_default(100);
        Self {
            hidden: 64,
            bottleneck: 16,
            proj_dim: 8,
            time_embed_dim: 32,
            schedule,
            train: TrainConfig { schedule, ..TrainConfig::default() },
            sample: SampleConfig::default(),
            data_train: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

struct Reader<'a> {
    key: &'a str,
    value: &'a Value,
    problems: &'a mut Vec<String>,
}

impl Reader<'_> {
    fn bad(&mut self, want: &str) {
        self.problems.push(format!("{}: expected {want}, got {}", self.key, self.value));
    }

    fn count(&mut self) -> Option<u64> {
        let v = self.value.as_u64();
        if v.is_none() {
            self.bad("a non-negative integer");
        }
        v
    }

    fn width(&mut self) -> Option<usize> {
        self.count().and_then(|v| match usize::try_from(v) {
            Ok(v) => Some(v),
            Err(_) => {
                self.bad("an integer that fits in usize");
                None
            }
        })
    }

    fn real(&mut self) -> Option<f64> {
        let v = self.value.as_f64();
        if v.is_none() {
            self.bad("a number");
        }
        v
    }

    fn text(&mut self) -> Option<&str> {
        let v = self.value.as_str();
        if v.is_none() {
            self.bad("a string");
        }
        v
    }

    fn choice<T: Copy>(&mut self, options: &[(&str, T)]) -> Option<T> {
        let Some(s) = self.value.as_str() else {
            self.bad("a string");
            return None;
        };
        let hit = options.iter().find(|(name, _)| *name == s).map(|(_, v)| *v);
        if hit.is_none() {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            self.problems.push(format!("{}: expected one of {names:?}, got {:?}", self.key, s));
        }
        hit
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        match value {
            Value::Object(map) => Self::from_map(&map),
            _ => Err(ConfigError::NotAnObject),
        }
    }

    pub fn from_map(map: &Map<String, Value>) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut problems = Vec::new();
        let (mut beta_min, mut beta_max) = (None, None);
        let mut contrastive = ContrastiveWeightConfig::default();
        let mut adam = AdamConfig::default();
        for (key, value) in map {
            let mut r = Reader { key, value, problems: &mut problems };
            match key.as_str() {
                "arch.hidden" => r.width().map(|v| cfg.hidden = v),
                "arch.bottleneck" => r.width().map(|v| cfg.bottleneck = v),
                "arch.proj_dim" => r.width().map(|v| cfg.proj_dim = v),
                "arch.time_embed_dim" => r.width().map(|v| cfg.time_embed_dim = v),
                "schedule.steps" => r.width().map(|v| cfg.schedule.steps = v),
                "schedule.beta_min" => r.real().map(|v| beta_min = Some(v)),
                "schedule.beta_max" => r.real().map(|v| beta_max = Some(v)),
                "train.steps" => r.count().map(|v| cfg.train.steps = v),
                "train.batch_size" => r.width().map(|v| cfg.train.batch_size = v),
                "train.lr" => r.real().map(|v| adam.lr = v),
                "train.beta1" => r.real().map(|v| adam.beta1 = v),
                "train.beta2" => r.real().map(|v| adam.beta2 = v),
                "train.eps" => r.real().map(|v| adam.eps = v),
                "train.p_uncond" => r.real().map(|v| cfg.train.p_uncond = v),
                "train.w" => r.real().map(|v| contrastive.w = v),
                "train.tau_r" => r.real().map(|v| contrastive.tau_r = v),
                "train.tau_sc" => r.real().map(|v| cfg.train.tau_sc = v),
                "train.seed" => r.count().map(|v| cfg.train.seed = v),
                "train.reduction" => r.choice(&[("mean", Reduction::Mean), ("sum", Reduction::Sum)])
                    .map(|v| cfg.train.reduction = v),
                "train.lambda_mode" => r.choice(&[("batch_mean", LambdaMode::BatchMean), ("shared_t", LambdaMode::SharedT)])
                    .map(|v| cfg.train.lambda_mode = v),
                "sample.omega" => r.real().map(|v| cfg.sample.omega = v),
                "sample.n_per_class" => r.width().map(|v| cfg.sample.n_per_class = v),
                "sample.sigma" => r.choice(&[("beta", SigmaRule::Beta), ("posterior", SigmaRule::Posterior)])
                    .map(|v| cfg.sample.sigma_rule = v),
                "sample.seed" => r.count().map(|v| cfg.sample.seed = v),
                "data.train" => match value {
                    Value::Null => {
                        cfg.data_train = None;
                        Some(())
                    }
                    _ => r.text().map(|v| cfg.data_train = Some(PathBuf::from(v))),
                },
                "out.dir" => r.text().map(|v| cfg.out_dir = PathBuf::from(v)),
                _ => {
                    r.problems.push(format!("{key}: unknown key"));
                    None
                }
            };
        }
        if cfg.schedule.steps > 0 {
            let scaled = ScheduleParams::scaled_default(cfg.schedule.steps);
            cfg.schedule.beta_min = beta_min.unwrap_or(scaled.beta_min);
            cfg.schedule.beta_max = beta_max.unwrap_or(scaled.beta_max);
        }
        cfg.train.schedule = cfg.schedule;
        cfg.train.adam = adam;
        cfg.train.contrastive = contrastive;
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    /// Constraint violations in an already-built config.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, w) in [
            ("arch.hidden", self.hidden),
            ("arch.bottleneck", self.bottleneck),
            ("arch.time_embed_dim", self.time_embed_dim),
        ] {
            if w == 0 {
                out.push(format!("{name} must be at least 1"));
            }
        }
        if self.proj_dim < 2 {
            out.push(format!("arch.proj_dim must be at least 2, got {}", self.proj_dim));
        }
        if let Err(e) = NoiseSchedule::from_params(&self.schedule) {
            out.push(format!("schedule: {e}"));
        }
        out.extend(self.train.problems().into_iter().filter(|p| !p.starts_with("schedule")));
        if !(self.sample.omega >= 0.0 && self.sample.omega.is_finite()) {
            out.push(format!("sample.omega must be a non-negative number, got {}", self.sample.omega));
        }
        out
    }

    /// Architecture for data of the given shape.
    pub fn arch(&self, dim: usize, num_classes: usize) -> ArchConfig {
        ArchConfig {
            dim,
            hidden: self.hidden,
            bottleneck: self.bottleneck,
            proj_dim: self.proj_dim,
            time_embed_dim: self.time_embed_dim,
            num_classes,
        }
    }

    /// The flat-key JSON form; parsing it gives back an equal config.
    pub fn to_json(&self) -> Value {
        let t = &self.train;
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        put("arch.hidden", self.hidden.into());
        put("arch.bottleneck", self.bottleneck.into());
        put("arch.proj_dim", self.proj_dim.into());
        put("arch.time_embed_dim", self.time_embed_dim.into());
        put("schedule.steps", self.schedule.steps.into());
        put("schedule.beta_min", self.schedule.beta_min.into());
        put("schedule.beta_max", self.schedule.beta_max.into());
        put("train.steps", t.steps.into());
        put("train.batch_size", t.batch_size.into());
        put("train.lr", t.adam.lr.into());
        put("train.beta1", t.adam.beta1.into());
        put("train.beta2", t.adam.beta2.into());
        put("train.eps", t.adam.eps.into());
        put("train.p_uncond", t.p_uncond.into());
        put("train.w", t.contrastive.w.into());
        put("train.tau_r", t.contrastive.tau_r.into());
        put("train.tau_sc", t.tau_sc.into());
        put("train.seed", t.seed.into());
        put("train.reduction", serde_json::to_value(t.reduction).expect("enum serializes"));
        put("train.lambda_mode", serde_json::to_value(t.lambda_mode).expect("enum serializes"));
        put("sample.omega", self.sample.omega.into());
        put("sample.n_per_class", self.sample.n_per_class.into());
        put("sample.sigma", serde_json::to_value(self.sample.sigma_rule).expect("enum serializes"));
        put("sample.seed", self.sample.seed.into());
        put("data.train", self.data_train.as_ref().map_or(Value::Null, |p| p.display().to_string().into()));
        put("out.dir", self.out_dir.display().to_string().into());
        Value::Object(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.adam.lr, 2e-4);
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.train.contrastive, ContrastiveWeightConfig { w: 0.01, tau_r: 0.8 });
        assert_eq!(cfg.train.tau_sc, 0.12);
        assert_eq!(cfg.sample.omega, 0.6);
    }

    #[test]
    fn every_documented_key_is_recognized() {
        let cfg = RunConfig::default().to_json();
        let keys: Vec<&String> = cfg.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), KEYS.len());
        for (k, _) in KEYS {
            assert!(keys.iter().any(|x| x == k), "{k}");
        }
    }

    #[test]
    fn round_trip() {
        let text = r#"{"train.w": 0, "train.seed": 7, "schedule.steps": 50, "train.reduction": "sum",
            "sample.sigma": "posterior", "data.train": "a.ltds", "out.dir": "runs/x", "train.lambda_mode": "shared_t"}"#;
        let cfg = RunConfig::from_json_str(text).unwrap();
        assert_eq!(cfg.train.contrastive.w, 0.0);
        assert_eq!(cfg.schedule, ScheduleParams::scaled_default(50));
        assert_eq!(cfg.train.schedule, cfg.schedule);
        assert_eq!(cfg.train.reduction, Reduction::Sum);
        assert_eq!(cfg.train.lambda_mode, LambdaMode::SharedT);
        let back = RunConfig::from_json_str(&cfg.to_json().to_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn all_problems_are_listed() {
        let text = r#"{"train.bogus": 1, "train.p_uncond": 1.5, "arch.hidden": "wide",
            "train.batch_size": 1, "train.reduction": "median", "train.tau_sc": 0}"#;
        let problems = RunConfig::from_json_str(text).unwrap_err().problems();
        assert_eq!(problems.len(), 6, "{problems:#?}");
        for needle in ["train.bogus", "train.p_uncond", "arch.hidden", "train.batch_size", "train.reduction", "train.tau_sc"] {
            assert!(problems.iter().any(|p| p.contains(needle)), "{needle} missing from {problems:#?}");
        }
    }

    #[test]
    fn syntax_and_shape_errors() {
        assert!(matches!(RunConfig::from_json_str("{"), Err(ConfigError::Syntax(_))));
        assert_eq!(RunConfig::from_json_str("[1]"), Err(ConfigError::NotAnObject));
    }

    #[test]
    fn explicit_betas_override_scaling() {
        let cfg = RunConfig::from_json_str(r#"{"schedule.beta_min": 1e-4, "schedule.beta_max": 0.02}"#).unwrap();
        assert_eq!((cfg.schedule.beta_min, cfg.schedule.beta_max), (1e-4, 0.02));
        assert!(RunConfig::from_json_str(r#"{"schedule.beta_min": 0.5, "schedule.beta_max": 0.1}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"schedule.steps": 0}"#).is_err());
    }
}
