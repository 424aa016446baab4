//! Test-time adaptive semantic segmentation.
//!
//! A small query-based mask-classification network ([`segmodel`]) is paired
//! with a transformer fusion module ([`fusion`]) that reads several frames of
//! an embodied agent's view and emits a scalar learned loss. At inference the
//! segmentation parameters take one gradient step on that loss before
//! predicting the first frame; training differentiates through the step
//! ([`adapt`]). Scenes, renders and action-tree datasets come from
//! [`envsim`]; the matched set loss and metrics live in [`setloss`].

use std::path::PathBuf;

use thiserror::Error;

pub mod adapt;
pub mod envsim;
pub mod fusion;
pub mod params;
pub mod segmodel;
pub mod setloss;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Env(#[from] envsim::EnvError),
    #[error(transparent)]
    Autograd(#[from] autograd::AutogradError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
