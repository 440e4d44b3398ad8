//! Model checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! "CRLK"                       4 bytes magic
//! version                      u8 (= 1)
//! dim, hidden, bottleneck,
//! proj_dim, time_embed_dim,
//! num_classes                  6 × u32
//! schedule steps               u32
//! beta_min, beta_max           2 × f64
//! optimizer steps taken        u64
//! has optimizer state          u8 (0 or 1)
//! parameters                   f64 × param_count
//! [adam m, adam v]             f64 × param_count each, if flagged
//! ```
//!
//! Parameters are stored at full 64-bit precision so that a resumed run is
//! bit-identical to an uninterrupted one.

use std::path::Path;

use crate::denoiser::{ArchConfig, DenoiserModel, Params};
use crate::longtail_data::FormatError;
use crate::schedules::ScheduleParams;
use crate::training::AdamState;

pub const MAGIC: &[u8; 4] = b"CRLK";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 6 * 4 + 4 + 16 + 8 + 1;
/// Upper bound on any single width read from an untrusted header.
const MAX_WIDTH: u32 = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DenoiserModel,
    pub schedule: ScheduleParams,
    pub step: u64,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let a = &self.model.arch;
        let n = self.model.params.len();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * 3);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        for w in [a.dim, a.hidden, a.bottleneck, a.proj_dim, a.time_embed_dim, a.num_classes] {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.schedule.steps as u32).to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_min.to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_max.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.push(self.optimizer.is_some() as u8);
        let mut put = |v: &[f64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        put(&self.model.params.flatten());
        if let Some(st) = &self.optimizer {
            put(&st.m);
            put(&st.v);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::Truncated { needed: HEADER_LEN, available: bytes.len() });
        }
        if bytes[4] != VERSION {
            return Err(FormatError::UnsupportedVersion(bytes[4]));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let mut widths = [0usize; 6];
        for (k, w) in widths.iter_mut().enumerate() {
            let v = u32_at(5 + 4 * k);
            if v > MAX_WIDTH {
                return Err(FormatError::InvalidHeader(format!("width {v} exceeds {MAX_WIDTH}")));
            }
            *w = v as usize;
        }
        let arch = ArchConfig {
            dim: widths[0],
            hidden: widths[1],
            bottleneck: widths[2],
            proj_dim: widths[3],
            time_embed_dim: widths[4],
            num_classes: widths[5],
        };
        arch.validate().map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
        let schedule = ScheduleParams { steps: u32_at(29) as usize, beta_min: f64_at(33), beta_max: f64_at(41) };
        crate::schedules::NoiseSchedule::from_params(&schedule)
            .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
        let step = u64::from_le_bytes(bytes[49..57].try_into().unwrap());
        let has_opt = match bytes[57] {
            0 => false,
            1 => true,
            f => return Err(FormatError::InvalidHeader(format!("optimizer flag {f}"))),
        };
        let count = arch
            .param_count()
            .ok_or_else(|| FormatError::InvalidHeader("parameter count overflows".into()))?;
        let blobs = if has_opt { 3 } else { 1 };
        let needed = count
            .checked_mul(8 * blobs)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| FormatError::InvalidHeader("payload size overflows".into()))?;
        if bytes.len() < needed {
            return Err(FormatError::Truncated { needed, available: bytes.len() });
        }
        if bytes.len() > needed {
            return Err(FormatError::TrailingBytes(bytes.len() - needed));
        }
        let read_blob = |k: usize| -> Vec<f64> {
            let start = HEADER_LEN + k * count * 8;
            bytes[start..start + count * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let mut params = Params::zeros(&arch);
        params.load_flat(&read_blob(0));
        let optimizer = has_opt.then(|| AdamState { step, m: read_blob(1), v: read_blob(2) });
        Ok(Self { model: DenoiserModel { arch, params }, schedule, step, optimizer })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::decode(&std::fs::read(path)?)
    }
}
