//! trafdiff: synthetic network-traffic generation via image-space diffusion.
//!
//! The pipeline turns labeled 1D traffic traces into 2D angular-field
//! images, trains a denoising diffusion model on them, samples synthetic
//! images, and measures their worth twice: distributional fidelity
//! (Fréchet distance on feature embeddings) and downstream utility
//! (classifiers trained on original, synthetic, and mixed data).
//!
//! Modules follow the data path: [`trace`] -> [`gasf`] -> [`enhance`] ->
//! [`diffusion`] -> [`fid`] / [`classify`] -> [`harness`] -> [`report`],
//! with [`pipeline`] orchestrating stages behind content-addressed
//! manifests.

pub mod classify;
pub mod config;
pub mod diffusion;
pub mod enhance;
pub mod error;
pub mod fid;
pub mod gasf;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod trace;

pub use config::RunConfig;
pub use error::{Error, Result};

/// CLI entry, kept in the library so the binary stays a one-liner.
pub fn cli_main() -> i32 {
    pipeline::cli_main()
}
