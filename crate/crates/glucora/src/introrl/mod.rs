//! Soft actor-critic with optional introspection against a frozen
//! transition model.
//!
//! Three variants share one agent. Plain SAC trades off return against
//! policy entropy. The curiosity variant adds a bonus for transitions the
//! frozen model predicts badly, encouraging exploration. The introspective
//! variant flips that bonus's sign, penalizing surprising transitions, and
//! further trains the policy against the model itself: the model's
//! counterfactual action for each observed transition pulls on the policy
//! mean, and pushing sampled actions through the differentiable frozen
//! forward model pulls predicted next states toward observed ones.
//!
//! The transition model never trains here. Its parameters enter every graph
//! as constants, so its hash before and after a run is an invariant.

mod agent;
mod critic;
mod intrinsic;
mod policy;
mod replay;
mod train;

pub use agent::{SacAgent, UpdateReport};
pub use critic::QCritic;
pub use intrinsic::intrinsic_reward;
pub use policy::GaussianPolicy;
pub use replay::{ReplayBuffer, Transition};
pub use train::{evaluate, train_rl, EpisodeStat, EvalReport, RlRun, TraceRow};

use crate::cinn::CinnError;
use crate::numkit::NumError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlVariant {
    Sac,
    SacIcm,
    SacCinn,
}

impl RlVariant {
    pub fn name(self) -> &'static str {
        match self {
            RlVariant::Sac => "sac",
            RlVariant::SacIcm => "sac_icm",
            RlVariant::SacCinn => "sac_cinn",
        }
    }

    /// Whether this variant consults the frozen transition model at all.
    pub fn uses_model(self) -> bool {
        !matches!(self, RlVariant::Sac)
    }
}

impl std::str::FromStr for RlVariant {
    type Err = RlError;

    fn from_str(s: &str) -> Result<Self, RlError> {
        match s {
            "sac" => Ok(RlVariant::Sac),
            "sac_icm" => Ok(RlVariant::SacIcm),
            "sac_cinn" => Ok(RlVariant::SacCinn),
            _ => Err(RlError::BadConfig("variant must be sac, sac_icm, or sac_cinn")),
        }
    }
}

impl std::fmt::Display for RlVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    /// Scale of the model-error bonus.
    pub eta: f64,
    /// Mix between the counterfactual-action loss (weight 1 - beta) and the
    /// forward-prediction loss (weight beta) on the policy.
    pub beta: f64,
    /// Weight of the actor loss against the introspection terms.
    pub lambda: f64,
    pub gamma: f64,
    /// Polyak factor for target critics.
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Random-action steps before any gradient update.
    pub warmup_steps: usize,
    pub replay_capacity: usize,
    pub hidden: usize,
    /// Environment steps after warmup, one gradient update per step.
    pub steps: usize,
    pub seed: u64,
    pub variant: RlVariant,
    /// When set, the counterfactual-action loss aims at a synthesized next
    /// state whose glucose reading is clamped into the 70..180 target band,
    /// instead of the observed next state.
    pub synthesized_target: bool,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            eta: 1.0,
            beta: 0.5,
            lambda: 1.0,
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 64,
            warmup_steps: 1000,
            replay_capacity: 50_000,
            hidden: 64,
            steps: 0,
            seed: 0,
            variant: RlVariant::Sac,
            synthesized_target: false,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(RlError::BadConfig("beta must lie in [0, 1]"));
        }
        if self.eta <= 0.0 {
            return Err(RlError::BadConfig("eta must be positive"));
        }
        if self.lambda <= 0.0 {
            return Err(RlError::BadConfig("lambda must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(RlError::BadConfig("gamma must lie in [0, 1)"));
        }
        if self.tau <= 0.0 || self.tau > 1.0 {
            return Err(RlError::BadConfig("tau must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(RlError::BadConfig("batch size must be at least 1"));
        }
        if self.replay_capacity < self.batch_size {
            return Err(RlError::BadConfig("replay capacity must hold at least one batch"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RlError {
    #[error(transparent)]
    Cinn(#[from] CinnError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("config: {0}")]
    BadConfig(&'static str),
    #[error("variant {variant} needs a pre-trained transition model")]
    MissingModel { variant: &'static str },
    #[error("update {step} diverged: {what}")]
    Diverged { step: usize, what: String },
}
