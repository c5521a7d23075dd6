//! Command-line pipeline: synthesize a noisy corpus, extract noise
//! patches, train the W-GAN and the denoiser, denoise and evaluate.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{Preset, RunConfig, Stage};
pub use error::CliError;
pub use pipeline::{Manifest, Outcome, Pipeline, Workspace};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
struct Book;
