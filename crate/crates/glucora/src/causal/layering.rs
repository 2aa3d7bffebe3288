//! Longest-path layering and the order shuffles used by ablations.

use super::dag::{CausalDag, NodeKind};
use super::CausalError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Nodes grouped by causal depth: `layers[d]` holds the node indices whose
/// longest root-to-node path has d edges, in declaration order. Roots
/// (current states, plus any parentless action) sit at depth 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layering {
    layers: Vec<Vec<usize>>,
}

impl Layering {
    pub fn layers(&self) -> &[Vec<usize>] {
        &self.layers
    }

    pub fn depth_of(&self, node: usize) -> Option<usize> {
        self.layers.iter().position(|l| l.contains(&node))
    }

    /// Human-readable order, e.g. `a1,a2 | s'1,s'2 | s'3,s'6`, skipping the
    /// root layer of current states.
    pub fn describe(&self, dag: &CausalDag) -> String {
        self.layers
            .iter()
            .filter(|layer| !layer.iter().all(|&i| dag.kind(i) == NodeKind::State))
            .map(|layer| layer.iter().map(|&i| dag.name(i)).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join(" | ")
    }
}

/// Longest-path depth of every node; see [`Layering`].
pub fn topo_layering(dag: &CausalDag) -> Result<Layering, CausalError> {
    // The constructor already proved acyclicity, so a fixpoint sweep over
    // edges terminates within node_count rounds.
    let n = dag.node_count();
    let mut depth = vec![0usize; n];
    loop {
        let mut changed = false;
        for &(s, d) in dag.edges() {
            if depth[d] < depth[s] + 1 {
                depth[d] = depth[s] + 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let max_depth = depth.iter().copied().max().unwrap_or(0);
    let mut layers = vec![Vec::new(); max_depth + 1];
    for i in 0..n {
        layers[depth[i]].push(i);
    }
    Ok(Layering { layers })
}

/// Redistributes the next-state nodes across the next-state layer slots with
/// a seeded permutation. Layer sizes, action placement, and the root layer
/// are untouched, so the result has the same block shape as the original but
/// routes conditioning through the wrong variables; that is exactly what the
/// order ablation wants. Same seed, same result.
pub fn shuffle_order(dag: &CausalDag, layering: &Layering, seed: u64) -> Result<Layering, CausalError> {
    let mut slots: Vec<(usize, usize)> = Vec::new(); // (layer, position)
    let mut movable: Vec<usize> = Vec::new();
    for (li, layer) in layering.layers.iter().enumerate() {
        for (pos, &node) in layer.iter().enumerate() {
            if dag.kind(node) == NodeKind::NextState {
                slots.push((li, pos));
                movable.push(node);
            }
        }
    }
    if movable.len() < 2 {
        return Err(CausalError::TooFewToShuffle(movable.len()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut shuffled = movable.clone();
    shuffled.shuffle(&mut rng);

    let mut layers = layering.layers.clone();
    for ((li, pos), node) in slots.into_iter().zip(shuffled) {
        layers[li][pos] = node;
    }
    Ok(Layering { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::NodeDef;
    use rand::Rng;

    fn node(name: &str, kind: NodeKind) -> NodeDef {
        NodeDef { name: name.to_string(), kind }
    }

    #[test]
    fn single_edge_gives_two_layers() {
        let dag = CausalDag::new(
            vec![node("a", NodeKind::Action), node("s'", NodeKind::NextState)],
            &[("a".to_string(), "s'".to_string())],
        )
        .unwrap();
        let layering = topo_layering(&dag).unwrap();
        assert_eq!(layering.layers().len(), 2);
        assert_eq!(layering.layers()[0], vec![0]);
        assert_eq!(layering.layers()[1], vec![1]);
    }

    /// Oracle: depth by exhaustive path enumeration, affordable for the
    /// small random graphs generated here.
    fn brute_force_depth(dag: &CausalDag, target: usize) -> usize {
        fn longest_into(dag: &CausalDag, v: usize) -> usize {
            dag.parents(v).iter().map(|&p| longest_into(dag, p) + 1).max().unwrap_or(0)
        }
        longest_into(dag, target)
    }

    #[test]
    fn random_graphs_match_brute_force_longest_paths() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            // Random DAG out of up to 8 next-state nodes layered by index,
            // which guarantees acyclicity, plus one state and one action root.
            let n_next = rng.gen_range(2..=8);
            let mut nodes = vec![node("s1", NodeKind::State), node("a1", NodeKind::Action)];
            for i in 0..n_next {
                nodes.push(node(&format!("n{i}"), NodeKind::NextState));
            }
            let mut edges = vec![("s1".to_string(), "a1".to_string())];
            for i in 0..n_next {
                // Anchor every next-state node so validation passes.
                let anchor = if i == 0 || rng.gen_bool(0.3) {
                    "a1".to_string()
                } else {
                    format!("n{}", rng.gen_range(0..i))
                };
                edges.push((anchor, format!("n{i}")));
                for j in 0..i {
                    if rng.gen_bool(0.35) {
                        edges.push((format!("n{j}"), format!("n{i}")));
                    }
                }
            }
            let dag = CausalDag::new(nodes, &edges).unwrap();
            let layering = topo_layering(&dag).unwrap();
            for v in 0..dag.node_count() {
                assert_eq!(
                    layering.depth_of(v).unwrap(),
                    brute_force_depth(&dag, v),
                    "node {} in {}",
                    dag.name(v),
                    layering.describe(&dag)
                );
            }
        }
    }

    fn diamond() -> CausalDag {
        CausalDag::new(
            vec![
                node("s1", NodeKind::State),
                node("s2", NodeKind::State),
                node("a1", NodeKind::Action),
                node("s'1", NodeKind::NextState),
                node("s'2", NodeKind::NextState),
            ],
            &[
                ("s1".to_string(), "a1".to_string()),
                ("a1".to_string(), "s'1".to_string()),
                ("s'1".to_string(), "s'2".to_string()),
                ("s2".to_string(), "s'2".to_string()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn shuffle_is_deterministic_and_preserves_node_multiset() {
        let dag = diamond();
        let layering = topo_layering(&dag).unwrap();
        let a = shuffle_order(&dag, &layering, 9).unwrap();
        let b = shuffle_order(&dag, &layering, 9).unwrap();
        assert_eq!(a, b);

        let mut original: Vec<usize> = layering.layers().iter().flatten().copied().collect();
        let mut shuffled: Vec<usize> = a.layers().iter().flatten().copied().collect();
        original.sort_unstable();
        shuffled.sort_unstable();
        assert_eq!(original, shuffled);
        // Layer sizes survive.
        for (la, lb) in layering.layers().iter().zip(a.layers()) {
            assert_eq!(la.len(), lb.len());
        }
    }

    #[test]
    fn some_seed_draws_the_identity_permutation() {
        let dag = diamond();
        let layering = topo_layering(&dag).unwrap();
        let identity = (0..200)
            .map(|seed| shuffle_order(&dag, &layering, seed).unwrap())
            .find(|l| l == &layering);
        assert!(identity.is_some(), "no identity draw in 200 seeds of a 2-element shuffle");
    }

    #[test]
    fn shuffling_one_next_state_is_an_error() {
        let dag = CausalDag::new(
            vec![node("s1", NodeKind::State), node("a1", NodeKind::Action), node("s'1", NodeKind::NextState)],
            &[("s1".to_string(), "a1".to_string()), ("a1".to_string(), "s'1".to_string())],
        )
        .unwrap();
        let layering = topo_layering(&dag).unwrap();
        let err = shuffle_order(&dag, &layering, 0).unwrap_err();
        assert!(matches!(err, CausalError::TooFewToShuffle(1)), "{err}");
    }
}
