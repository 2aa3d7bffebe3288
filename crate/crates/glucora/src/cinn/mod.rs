//! Bidirectional invertible transition models.
//!
//! One network, two readings. Forward it predicts the next state from
//! (state, action); run backwards from an observed or desired next state it
//! recovers the action that would produce it, through the same weights.
//! Exact invertibility comes from stacking coupling blocks whose fusion
//! matrices are orthogonal by construction, and the block layout is not
//! hand-picked: it is compiled from the environment's causal graph by
//! [`crate::causal::plan_structure`].
//!
//! [`model::CinnModel`] owns the parameters and both directions;
//! [`train::train_cinn`] fits them bidirectionally; [`baseline::MaskedMlp`]
//! is the unconstrained reference the invertible model is compared against;
//! [`checkpoint`] persists everything to JSON exactly.

mod baseline;
mod blocks;
mod checkpoint;
mod coupling;
mod model;
mod train;

pub use baseline::{train_masked, MaskedMlp};
pub use blocks::{AsymmetricBlock, SymmetricBlock};
pub use checkpoint::{load_cinn, save_cinn};
pub use coupling::CouplingPair;
pub use model::{CinnConfig, CinnModel, FrozenCinn, Normalization, TapeWeights};
pub use train::{eval_mse, train_cinn, TrainConfig, TrainCurves};

use crate::numkit::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CinnError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("cannot train on an empty batch")]
    EmptyBatch,
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimMismatch { what: &'static str, expected: usize, got: usize },
    #[error("checkpoint schema {found} is not supported (this build reads schema {expected})")]
    CheckpointSchema { found: u32, expected: u32 },
    #[error("checkpoint does not parse: {0}")]
    CheckpointParse(String),
    #[error("checkpoint parameter {name}: {problem}")]
    CheckpointParam { name: String, problem: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
