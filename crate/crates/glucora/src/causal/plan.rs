//! Turns a layering into an invertible block stack.
//!
//! The walk keeps a running carry that starts at the action width. A layer
//! whose width equals the carry becomes a symmetric coupling block
//! conditioned on the current-state counterparts of its nodes, and the carry
//! doubles up by absorbing the layer. The first layer that breaks the match,
//! or the last layer regardless, ends the stack with one asymmetric linear
//! block that reads the carry plus every not-yet-consumed current state and
//! emits the full next state.

use super::dag::{CausalDag, NodeKind};
use super::layering::Layering;
use super::CausalError;
use serde::{Deserialize, Serialize};

/// One block of the invertible stack. State indices are slots into the
/// current-state vector, not node ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockSpec {
    /// Coupling block: carries `d1` latents in, conditions on `d2` current
    /// states, carries `d1 + d2` latents out.
    Symmetric { d1: usize, d2: usize, cond_state_idx: Vec<usize> },
    /// Final linear block: carry plus known current states in, full next
    /// state out. `known_state_idx` is ascending.
    Asymmetric { in_dim: usize, out_dim: usize, known_state_idx: Vec<usize> },
}

impl BlockSpec {
    pub fn carry_out(&self) -> usize {
        match self {
            BlockSpec::Symmetric { d1, d2, .. } => d1 + d2,
            BlockSpec::Asymmetric { out_dim, .. } => *out_dim,
        }
    }
}

/// The full stack for one environment, ending in exactly one asymmetric
/// block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    state_dim: usize,
    action_dim: usize,
    blocks: Vec<BlockSpec>,
}

impl BlockPlan {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    /// Compact shape summary, e.g. `2 -> sym(2|2) -> asym(8 -> 6)`.
    pub fn describe(&self) -> String {
        let mut parts = vec![format!("{}", self.action_dim)];
        for b in &self.blocks {
            parts.push(match b {
                BlockSpec::Symmetric { d1, d2, .. } => format!("sym({d1}|{d2})"),
                BlockSpec::Asymmetric { in_dim, out_dim, .. } => format!("asym({in_dim} -> {out_dim})"),
            });
        }
        parts.join(" -> ")
    }
}

/// Plans the block stack for `dag` under `layering`. The layering argument
/// is separate so ablations can feed a shuffled one.
pub fn plan_structure(dag: &CausalDag, layering: &Layering) -> Result<BlockPlan, CausalError> {
    let state_dim = dag.state_dim();
    let action_dim = dag.action_dim();
    if state_dim == 0 {
        return Err(CausalError::MissingKind("state"));
    }
    if action_dim == 0 {
        return Err(CausalError::MissingKind("action"));
    }

    // The walk needs layers of one kind each: states root the graph, one
    // layer of actions follows, next states fill the rest.
    let mut action_layer = None;
    for (li, layer) in layering.layers().iter().enumerate() {
        let first = dag.kind(layer[0]);
        if layer.iter().any(|&v| dag.kind(v) != first) {
            return Err(CausalError::MixedLayer { layer: li });
        }
        if first == NodeKind::Action {
            action_layer = Some(li);
        }
    }
    let action_layer = action_layer.expect("actions exist, so some layer holds them");

    let next_layers = &layering.layers()[action_layer + 1..];
    let mut blocks = Vec::new();
    let mut carry = action_dim;
    let mut k = 0;
    while k < next_layers.len() {
        let layer = &next_layers[k];
        let last = k + 1 == next_layers.len();
        if layer.len() == carry && !last {
            let cond_state_idx: Vec<usize> = layer.iter().map(|&v| dag.state_slot(v)).collect();
            blocks.push(BlockSpec::Symmetric { d1: carry, d2: layer.len(), cond_state_idx });
            carry += layer.len();
            k += 1;
        } else {
            let mut known_state_idx: Vec<usize> =
                next_layers[k..].iter().flatten().map(|&v| dag.state_slot(v)).collect();
            known_state_idx.sort_unstable();
            blocks.push(BlockSpec::Asymmetric {
                in_dim: carry + known_state_idx.len(),
                out_dim: state_dim,
                known_state_idx,
            });
            k = next_layers.len();
        }
    }
    Ok(BlockPlan { state_dim, action_dim, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::{topo_layering, NodeDef};

    fn node(name: &str, kind: NodeKind) -> NodeDef {
        NodeDef { name: name.to_string(), kind }
    }

    fn edge(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    /// Two mediator chains that rejoin: the layer widths run 2, 2, 1, 1
    /// after the actions, so the plan is one symmetric block and one
    /// asymmetric block.
    fn six_state_dag() -> CausalDag {
        let mut nodes = Vec::new();
        for i in 1..=6 {
            nodes.push(node(&format!("s{i}"), NodeKind::State));
        }
        nodes.push(node("a1", NodeKind::Action));
        nodes.push(node("a2", NodeKind::Action));
        for i in 1..=6 {
            nodes.push(node(&format!("s'{i}"), NodeKind::NextState));
        }
        let mut edges = vec![edge("s1", "a1"), edge("s2", "a2"), edge("a1", "s'1"), edge("a2", "s'2")];
        for i in 1..=6 {
            edges.push(edge(&format!("s{i}"), &format!("s'{i}")));
        }
        edges.push(edge("s'1", "s'3"));
        edges.push(edge("s'2", "s'3"));
        edges.push(edge("s'1", "s'6"));
        edges.push(edge("s'2", "s'6"));
        edges.push(edge("s'3", "s'5"));
        edges.push(edge("s'6", "s'5"));
        edges.push(edge("s'5", "s'4"));
        CausalDag::new(nodes, &edges).unwrap()
    }

    #[test]
    fn six_state_plan_is_one_coupling_then_linear() {
        let dag = six_state_dag();
        let layering = topo_layering(&dag).unwrap();
        assert_eq!(layering.describe(&dag), "a1,a2 | s'1,s'2 | s'3,s'6 | s'5 | s'4");
        let plan = plan_structure(&dag, &layering).unwrap();
        assert_eq!(
            plan.blocks(),
            &[
                BlockSpec::Symmetric { d1: 2, d2: 2, cond_state_idx: vec![0, 1] },
                BlockSpec::Asymmetric { in_dim: 8, out_dim: 6, known_state_idx: vec![2, 3, 4, 5] },
            ]
        );
        assert_eq!(plan.describe(), "2 -> sym(2|2) -> asym(8 -> 6)");
    }

    #[test]
    fn single_state_chain_plans_one_linear_block() {
        let dag = CausalDag::new(
            vec![node("s1", NodeKind::State), node("a1", NodeKind::Action), node("s'1", NodeKind::NextState)],
            &[edge("s1", "a1"), edge("a1", "s'1"), edge("s1", "s'1")],
        )
        .unwrap();
        let plan = plan_structure(&dag, &topo_layering(&dag).unwrap()).unwrap();
        assert_eq!(
            plan.blocks(),
            &[BlockSpec::Asymmetric { in_dim: 2, out_dim: 1, known_state_idx: vec![0] }]
        );
    }

    /// Mirrors the simulator graph: two dosing cascades that converge on
    /// glucose, then two terminal observables. Widths 2, 4, 3, 2, 2 give two
    /// symmetric blocks before the mismatch at width 3 forces the linear
    /// closer.
    fn thirteen_state_dag() -> CausalDag {
        let names = ["g_i", "g", "q2", "s1", "s2", "ins", "x_t", "x_e", "z", "d1", "d2", "ra", "c"];
        let mut nodes = Vec::new();
        for n in &names {
            nodes.push(node(n, NodeKind::State));
        }
        nodes.push(node("u_ins", NodeKind::Action));
        nodes.push(node("u_carb", NodeKind::Action));
        for n in &names {
            nodes.push(node(&format!("{n}'"), NodeKind::NextState));
        }
        let mut edges = vec![edge("g_i", "u_ins"), edge("g_i", "u_carb")];
        for n in &names {
            edges.push(edge(n, &format!("{n}'")));
        }
        for (a, b) in [
            ("u_ins", "s1'"),
            ("u_carb", "d1'"),
            ("s1'", "s2'"),
            ("s1'", "ins'"),
            ("d1'", "d2'"),
            ("d1'", "ra'"),
            ("ins'", "x_t'"),
            ("ins'", "x_e'"),
            ("ins'", "z'"),
            ("x_t'", "g'"),
            ("x_e'", "g'"),
            ("ra'", "g'"),
            ("x_e'", "c'"),
            ("g'", "g_i'"),
            ("g'", "q2'"),
            ("x_t'", "q2'"),
        ] {
            edges.push(edge(a, b));
        }
        CausalDag::new(nodes, &edges).unwrap()
    }

    #[test]
    fn thirteen_state_plan_is_two_couplings_then_linear() {
        let dag = thirteen_state_dag();
        let layering = topo_layering(&dag).unwrap();
        let plan = plan_structure(&dag, &layering).unwrap();
        assert_eq!(
            plan.blocks(),
            &[
                BlockSpec::Symmetric { d1: 2, d2: 2, cond_state_idx: vec![3, 9] },
                BlockSpec::Symmetric { d1: 4, d2: 4, cond_state_idx: vec![4, 5, 10, 11] },
                BlockSpec::Asymmetric { in_dim: 15, out_dim: 13, known_state_idx: vec![0, 1, 2, 6, 7, 8, 12] },
            ]
        );
        assert_eq!(plan.describe(), "2 -> sym(2|2) -> sym(4|4) -> asym(15 -> 13)");
    }

    #[test]
    fn width_mismatch_merges_the_tail_into_the_linear_block() {
        // One action, then layers of width 1 and 2: the first matches the
        // carry, the second does not.
        let dag = CausalDag::new(
            vec![
                node("s1", NodeKind::State),
                node("s2", NodeKind::State),
                node("s3", NodeKind::State),
                node("a1", NodeKind::Action),
                node("s'1", NodeKind::NextState),
                node("s'2", NodeKind::NextState),
                node("s'3", NodeKind::NextState),
            ],
            &[
                edge("s1", "a1"),
                edge("a1", "s'1"),
                edge("s'1", "s'2"),
                edge("s'1", "s'3"),
                edge("s2", "s'2"),
                edge("s3", "s'3"),
            ],
        )
        .unwrap();
        let plan = plan_structure(&dag, &topo_layering(&dag).unwrap()).unwrap();
        assert_eq!(
            plan.blocks(),
            &[
                BlockSpec::Symmetric { d1: 1, d2: 1, cond_state_idx: vec![0] },
                BlockSpec::Asymmetric { in_dim: 4, out_dim: 3, known_state_idx: vec![1, 2] },
            ]
        );
    }

    #[test]
    fn shuffle_keeps_block_shapes_but_moves_conditioning() {
        let dag = six_state_dag();
        let layering = topo_layering(&dag).unwrap();
        let base = plan_structure(&dag, &layering).unwrap();
        for seed in 0..20 {
            let shuffled = crate::causal::shuffle_order(&dag, &layering, seed).unwrap();
            let plan = plan_structure(&dag, &shuffled).unwrap();
            assert_eq!(plan.blocks().len(), base.blocks().len());
            for (a, b) in plan.blocks().iter().zip(base.blocks()) {
                match (a, b) {
                    (
                        BlockSpec::Symmetric { d1: x1, d2: x2, .. },
                        BlockSpec::Symmetric { d1: y1, d2: y2, .. },
                    ) => {
                        assert_eq!((x1, x2), (y1, y2));
                    }
                    (
                        BlockSpec::Asymmetric { in_dim: xi, out_dim: xo, .. },
                        BlockSpec::Asymmetric { in_dim: yi, out_dim: yo, .. },
                    ) => {
                        assert_eq!((xi, xo), (yi, yo));
                    }
                    _ => panic!("block kinds diverged under shuffle"),
                }
            }
        }
    }

    #[test]
    fn state_only_parents_for_a_next_state_mix_the_action_layer() {
        let dag = CausalDag::new(
            vec![
                node("s1", NodeKind::State),
                node("s2", NodeKind::State),
                node("a1", NodeKind::Action),
                node("s'1", NodeKind::NextState),
                node("s'2", NodeKind::NextState),
            ],
            &[
                edge("s1", "a1"),
                edge("a1", "s'1"),
                edge("s2", "s'2"), // depth 1: collides with the action layer
                edge("s'1", "s'2"),
            ],
        );
        // s'2 gains depth 2 from s'1, so this particular graph still plans;
        // drop that edge to force the collision.
        assert!(dag.is_ok());
        let dag = CausalDag::new(
            vec![
                node("s1", NodeKind::State),
                node("s2", NodeKind::State),
                node("a1", NodeKind::Action),
                node("s'1", NodeKind::NextState),
                node("s'2", NodeKind::NextState),
            ],
            &[edge("s1", "a1"), edge("a1", "s'1"), edge("s2", "s'2")],
        )
        .unwrap();
        let err = plan_structure(&dag, &topo_layering(&dag).unwrap()).unwrap_err();
        assert!(matches!(err, CausalError::MixedLayer { layer: 1 }), "{err}");
    }

    #[test]
    fn actionless_graph_is_rejected() {
        let dag = CausalDag::new(
            vec![
                node("s1", NodeKind::State),
                node("s'1", NodeKind::NextState),
            ],
            &[edge("s1", "s'1")],
        )
        .unwrap();
        let err = plan_structure(&dag, &topo_layering(&dag).unwrap()).unwrap_err();
        assert!(matches!(err, CausalError::MissingKind("action")), "{err}");
    }
}
