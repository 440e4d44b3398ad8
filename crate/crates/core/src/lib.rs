//! Contrastive regularization of a diffusion denoiser's bottleneck latents
//! for long-tailed class-conditional generation, with the evaluation stack
//! used to measure it.

pub mod checkpoint;
pub mod config;
pub mod denoiser;
pub mod evaluation;
pub mod forward_process;
pub mod longtail_data;
pub mod losses;
pub mod rng;
pub mod sampling;
pub mod schedules;
pub mod training;
