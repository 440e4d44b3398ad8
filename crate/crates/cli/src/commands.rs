use std::fs;
use std::path::{Path, PathBuf};

use coral_core::checkpoint::Checkpoint;
use coral_core::config::RunConfig;
use coral_core::evaluation::{evaluate, EvalOptions, FeatureSpace, LatentConditioning};
use coral_core::longtail_data::{class_counts, make_ring_gaussians, LabeledDataset};
use coral_core::rng::{stream, Purpose};
use coral_core::sampling::{sample_per_class, SampleConfig, SigmaRule};
use coral_core::schedules::NoiseSchedule;
use coral_core::training::Trainer;
use serde_json::json;

use crate::{CliError, EvalArgs, FeaturesArg, MakeDataArgs, SampleArgs, SigmaArg, TrainArgs};

/// Writes through a temporary sibling so a failed run never leaves a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::Data(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_data(path: &Path) -> Result<LabeledDataset, CliError> {
    LabeledDataset::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(RunConfig::from_json_str(&text)?)
}

fn pretty(v: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s.into_bytes()
}

pub fn make_data(a: MakeDataArgs) -> Result<(), CliError> {
    let counts = class_counts(a.head_count, a.rho, a.classes)?;
    let data = make_ring_gaussians(&counts, a.radius, a.sigma, a.dim, &mut stream(a.seed, Purpose::Data, 0, 0))?;
    write_atomic(&a.out, &data.encode())?;
    let total: usize = counts.iter().sum();
    write_atomic(&with_suffix(&a.out, ".json"), &pretty(&json!({ "class_counts": counts, "total": total })))?;
    println!("wrote {} samples in {} classes to {}", total, a.classes, a.out.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = read_config(&a.config)?;
    if let Some(d) = a.data {
        cfg.data_train = Some(d);
    }
    if let Some(o) = a.out_dir {
        cfg.out_dir = o;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if a.baseline {
        cfg.train.contrastive.w = 0.0;
    }
    let data_path = cfg
        .data_train
        .clone()
        .ok_or_else(|| CliError::Config("no training data: set data.train or pass --data".into()))?;
    let data = read_data(&data_path)?;
    let arch = cfg.arch(data.dim(), data.num_classes());

    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = read_checkpoint(path)?;
            if ckpt.model.arch != arch {
                return Err(CliError::Config(format!(
                    "checkpoint architecture {:?} does not match config and data {:?}",
                    ckpt.model.arch, arch
                )));
            }
            if ckpt.schedule != cfg.schedule {
                return Err(CliError::Config(format!(
                    "checkpoint schedule {:?} does not match config {:?}",
                    ckpt.schedule, cfg.schedule
                )));
            }
            let optimizer = ckpt
                .optimizer
                .ok_or_else(|| CliError::Data(format!("{} has no optimizer state to resume", path.display())))?;
            Trainer::resume(cfg.train.clone(), &data, ckpt.model, optimizer)?
        }
        None => Trainer::new(cfg.train.clone(), &data, arch)?,
    };
    let log = trainer.run()?;

    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::Data(format!("{}: {e}", cfg.out_dir.display())))?;
    let ckpt = Checkpoint {
        model: trainer.model,
        schedule: cfg.schedule,
        step: trainer.optimizer.step,
        optimizer: Some(trainer.optimizer),
    };
    let mut csv = Vec::new();
    log.write_csv(&mut csv, true)?;
    write_atomic(&cfg.out_dir.join("train_log.csv"), &csv)?;
    write_atomic(&cfg.out_dir.join("config.json"), &pretty(&cfg.to_json()))?;
    write_atomic(&cfg.out_dir.join("model.ckpt"), &ckpt.encode())?;
    println!("trained to step {} -> {}", ckpt.step, cfg.out_dir.join("model.ckpt").display());
    Ok(())
}

pub fn sample(a: SampleArgs) -> Result<(), CliError> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let mut scfg = SampleConfig::default();
    if let Some(path) = &a.config {
        let cfg = read_config(path)?;
        let arch = ckpt.model.arch;
        let want = (cfg.hidden, cfg.bottleneck, cfg.proj_dim, cfg.time_embed_dim);
        let have = (arch.hidden, arch.bottleneck, arch.proj_dim, arch.time_embed_dim);
        if want != have || cfg.schedule != ckpt.schedule {
            return Err(CliError::Config(format!(
                "checkpoint (hidden, bottleneck, proj_dim, time_embed_dim) = {have:?} with {:?} does not match config {want:?} with {:?}",
                ckpt.schedule, cfg.schedule
            )));
        }
        scfg = cfg.sample;
    }
    if let Some(v) = a.omega {
        scfg.omega = v;
    }
    if let Some(v) = a.per_class {
        scfg.n_per_class = v;
    }
    if let Some(v) = a.seed {
        scfg.seed = v;
    }
    if let Some(v) = a.sigma {
        scfg.sigma_rule = match v {
            SigmaArg::Beta => SigmaRule::Beta,
            SigmaArg::Posterior => SigmaRule::Posterior,
        };
    }
    let schedule = NoiseSchedule::from_params(&ckpt.schedule).map_err(|e| CliError::Data(e.to_string()))?;
    let gen = sample_per_class(&ckpt.model, &schedule, &scfg)?;
    write_atomic(&a.out, &gen.encode())?;
    println!("wrote {} samples to {}", gen.len(), a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let real = read_data(&a.real)?;
    let gen = read_data(&a.gen)?;
    let ckpt = a.checkpoint.as_deref().map(read_checkpoint).transpose()?;
    let schedule = ckpt
        .as_ref()
        .map(|c| NoiseSchedule::from_params(&c.schedule).map_err(|e| CliError::Data(e.to_string())))
        .transpose()?;
    let opts = EvalOptions {
        knn_k: a.knn_k,
        clusters: a.clusters,
        purity_k: a.purity_k,
        latent_t: a.latent_t,
        conditioning: LatentConditioning::TrueLabel,
        features: match a.features {
            FeaturesArg::Raw => FeatureSpace::Raw,
            FeaturesArg::Probe => FeatureSpace::Probe,
        },
        seed: a.seed,
        ..EvalOptions::default()
    };
    let model = ckpt.as_ref().zip(schedule.as_ref()).map(|(c, s)| (&c.model, s));
    let (report, latents) = evaluate(&real, &gen, &opts, model)?;
    write_atomic(&a.out, &pretty(&serde_json::to_value(&report).expect("report serializes")))?;
    if let Some(fs) = latents {
        let path = a.latents_out.unwrap_or_else(|| with_suffix(&a.out, ".latents.csv"));
        let mut csv = Vec::new();
        fs.write_csv(&mut csv)?;
        write_atomic(&path, &csv)?;
    }
    println!("wrote report to {}", a.out.display());
    Ok(())
}
