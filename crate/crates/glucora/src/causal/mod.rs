//! Causal graphs over one transition, and the block plans read off them.
//!
//! A graph has three node kinds: current states `S`, actions `A`, and next
//! states `S'`. States are exogenous roots; actions depend on states; next
//! states depend on states, actions, and other next states, where an edge
//! between next states records that one outcome mediates another within the
//! transition. Longest-path layering then sorts actions and next states by
//! causal depth, and [`plan_structure`] turns adjacent layers into a chain
//! of invertible blocks: symmetric while the widths match, with everything
//! after folded into one final asymmetric block.

mod dag;
mod layering;
mod plan;

pub use dag::{CausalDag, NodeDef, NodeKind};
pub use layering::{shuffle_order, topo_layering, Layering};
pub use plan::{plan_structure, BlockPlan, BlockSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CausalError {
    #[error("duplicate node name {0:?}")]
    DuplicateName(String),
    #[error("edge references unknown node {0:?}")]
    UnknownNode(String),
    #[error("self edge on {0:?}")]
    SelfEdge(String),
    #[error("action node {action:?} has non-state parent {parent:?}")]
    ActionParent { action: String, parent: String },
    #[error("next-state node {0:?} has no parents")]
    OrphanNextState(String),
    #[error("graph contains a cycle: {}", witness.join(" -> "))]
    Cycle { witness: Vec<String> },
    #[error("state node {0:?} has parents; current states must be roots")]
    StateWithParents(String),
    #[error("graph has {states} state nodes but {next_states} next-state nodes")]
    UnbalancedStates { states: usize, next_states: usize },
    #[error("graph has no {0} nodes")]
    MissingKind(&'static str),
    #[error("layer {layer} mixes node kinds; cannot chain blocks")]
    MixedLayer { layer: usize },
    #[error("need at least two next-state nodes to shuffle, got {0}")]
    TooFewToShuffle(usize),
    #[error("invalid graph document: {0}")]
    BadDocument(String),
}
