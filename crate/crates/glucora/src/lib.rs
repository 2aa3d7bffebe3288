//! Causally structured invertible networks for glucose dynamics, and an
//! introspective reinforcement-learning agent built on top of them.
//!
//! The crate is organized as a pipeline:
//!
//! * [`numkit`] — tensors, a reverse-mode autodiff tape, exactly orthogonal
//!   weight parametrizations, differentiable least squares, MLPs, Adam.
//! * [`causal`] — causal graphs over states, actions, and next states;
//!   longest-path layerings; block plans derived from them.
//! * [`cinn`] — the invertible model itself: orthogonal fusion plus affine
//!   coupling blocks wired according to a block plan, trained in both
//!   directions at once so one parameter set answers "what happens next?"
//!   and "which action explains this outcome?".
//! * [`glucosim`] — virtual patients: a six-variable linear structural
//!   model with a closed-form counterfactual oracle, and a thirteen-
//!   compartment ODE patient; reward, dosing policies, dataset generation.
//! * [`introrl`] — a soft actor-critic agent whose updates can consult the
//!   frozen invertible model, both as an intrinsic reward and as extra
//!   introspection losses on the policy.
//! * [`cli`] — the experiment harness behind the `glucora` binary:
//!   dataset generation, pretraining, ablations, agent training, report
//!   aggregation, all reproducible from a single seed.
//!
//! See the `book/` directory for a guided tour; its code snippets compile
//! and run as doc-tests of this crate.

// numeric kernels index into flat buffers with explicit arithmetic on
// purpose; iterator rewrites of those loops hide the layout they depend on
#![allow(clippy::needless_range_loop)]

pub mod causal;
pub mod cinn;
pub mod cli;
pub mod glucosim;
pub mod introrl;
pub mod numkit;

mod book;
