//! Reverse-mode autodiff over small dense tensors, plus the linear-algebra
//! pieces the invertible blocks need: exactly orthogonal weight matrices via
//! Householder products, a QR least-squares solve that participates in
//! differentiation, leaky-ReLU multilayer perceptrons, and Adam.
//!
//! Design notes:
//!
//! * All arithmetic is `f64`. The models here are tiny and the invertibility
//!   checks run at absolute tolerances near 1e-10; f32 would eat the margin.
//! * One computation path. Inference runs on the same tape as training and
//!   simply never calls [`Tape::backward`], so there is no second
//!   implementation of the math to drift out of sync.
//! * Training is single-threaded. A [`Tape`] borrows mutably and is built,
//!   consumed, and dropped inside one step.

mod adam;
pub mod fdcheck;
mod lstsq;
mod mlp;
mod ortho;
mod store;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use lstsq::{lstsq, LstsqFactors, PIVOT_THRESHOLD};
pub use mlp::Mlp;
pub use ortho::{orthogonality_defect, OrthoParam};
pub use store::{ParamId, ParamStore};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

/// Failures surfaced by the numeric kit's checked entry points.
///
/// Shape mismatches inside tape ops are programmer errors and panic instead;
/// see the module docs.
#[derive(Debug, Error)]
pub enum NumError {
    #[error("non-finite value produced by {context}")]
    NonFinite { context: String },
    #[error("loss node must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("matrix is rank deficient: |R[{index},{index}]| = {pivot:.3e} below threshold {threshold:.1e}")]
    RankDeficient { index: usize, pivot: f64, threshold: f64 },
    #[error("Householder reflector {index} has near-zero norm {norm:.3e}")]
    DegenerateReflector { index: usize, norm: f64 },
    #[error("layer {layer}: expected input of length {expected}, got {got}")]
    LayerShape { layer: usize, expected: usize, got: usize },
}
