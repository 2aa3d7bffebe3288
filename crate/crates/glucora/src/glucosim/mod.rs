//! Virtual patients and everything needed to get data out of them.
//!
//! Two environments share one interface: a six-variable linear system small
//! enough to invert by hand, and a thirteen-compartment glucose-insulin
//! model integrated with RK4. Both expose their dependency structure as a
//! [`crate::causal::CausalDag`], step as pure functions of (state, action),
//! and feed the dataset generator, which writes seeded, byte-reproducible
//! CSV files.
//!
//! Actions are always two-dimensional: insulin units per step and
//! carbohydrate grams per step. The carbohydrate channel carries the total
//! entering the gut that step, so scheduled meals are folded into the action
//! before the transition runs and stored transitions stay Markov.

mod dataset;
mod meals;
mod ode;
mod policy;
mod reward;
mod toy;

pub use dataset::{derive_rng, gen_dataset, DataRow, Dataset, DatasetMeta};
pub use meals::{MealEvent, MealSchedule};
pub use ode::{OdeEnv, OdePatient};
pub use policy::DosePolicy;
pub use reward::band_reward;
pub use toy::{scm_counterfactual_oracle, ToyEnv, ToyScm};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GlucosimError {
    #[error("meals at minutes {a} and {b} land on the same step")]
    OverlappingMeals { a: u32, b: u32 },
    #[error("meal minute {minute} is outside the day")]
    MealOutOfDay { minute: u32 },
    #[error("action coefficient for {name} is zero; the counterfactual is undefined")]
    DegenerateAction { name: &'static str },
    #[error("unknown dose policy id {0}; valid ids are 0..=8")]
    UnknownPolicy(usize),
    #[error("{path}: {msg}")]
    BadCsv { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What one environment step produced. `applied_action` is what physically
/// happened (policy dose plus any scheduled meal), which is also what
/// belongs in a replay buffer.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub applied_action: [f64; 2],
    pub clamped: bool,
}

/// A sequential decision environment over glucose-flavored dynamics.
/// Component 0 of every state is the measured glucose reading in mg/dl.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize {
        2
    }
    /// Per-dimension action bounds, `(low, high)`, for policy squashing.
    fn action_bounds(&self) -> ([f64; 2], [f64; 2]);
    fn episode_len(&self) -> usize;
    fn causal_graph(&self) -> crate::causal::CausalDag;
    /// Offsets and scales that map states into a unit-ish range for
    /// network inputs. Raw states stay raw everywhere else.
    fn obs_norm(&self) -> (Vec<f64>, Vec<f64>);
    fn reset(&mut self, rng: &mut rand_chacha::ChaCha20Rng) -> Vec<f64>;
    fn step(&mut self, action: &[f64; 2]) -> StepResult;
    /// Carbs the environment will fold into the next step, announced ahead
    /// of time the way a pump patient announces a meal. Zero by default.
    fn meal_grams_next(&self) -> f64 {
        0.0
    }
}
