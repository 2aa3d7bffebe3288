//! The causal graph type and its JSON document format.
//!
//! On disk a graph is
//!
//! ```json
//! {
//!   "nodes": [{"name": "s1", "kind": "state"}, {"name": "a1", "kind": "action"}],
//!   "edges": [["s1", "a1"]]
//! }
//! ```
//!
//! The i-th `state` node and the i-th `next_state` node (in declaration
//! order) describe the same state-vector slot at times t and t+1; routing in
//! the block planner leans on that pairing.

use super::CausalError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    State,
    Action,
    NextState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeDef {
    pub name: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DagDoc {
    nodes: Vec<NodeDef>,
    edges: Vec<(String, String)>,
}

/// Validated directed acyclic graph over one transition.
#[derive(Debug, Clone)]
pub struct CausalDag {
    nodes: Vec<NodeDef>,
    /// Edges as (src, dst) node indices.
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
}

impl CausalDag {
    /// Builds and validates a graph. Rejects duplicate or unknown names,
    /// self edges, actions with non-state parents, parentless next states,
    /// states with parents, and cycles (with a witness path).
    pub fn new(nodes: Vec<NodeDef>, name_edges: &[(String, String)]) -> Result<Self, CausalError> {
        for (i, n) in nodes.iter().enumerate() {
            if nodes[..i].iter().any(|m| m.name == n.name) {
                return Err(CausalError::DuplicateName(n.name.clone()));
            }
        }
        let index_of = |name: &str| -> Result<usize, CausalError> {
            nodes
                .iter()
                .position(|n| n.name == name)
                .ok_or_else(|| CausalError::UnknownNode(name.to_string()))
        };
        let mut edges = Vec::with_capacity(name_edges.len());
        let mut parents = vec![Vec::new(); nodes.len()];
        for (src, dst) in name_edges {
            let (s, d) = (index_of(src)?, index_of(dst)?);
            if s == d {
                return Err(CausalError::SelfEdge(src.clone()));
            }
            edges.push((s, d));
            parents[d].push(s);
        }

        for (i, n) in nodes.iter().enumerate() {
            match n.kind {
                NodeKind::State => {
                    if !parents[i].is_empty() {
                        return Err(CausalError::StateWithParents(n.name.clone()));
                    }
                }
                NodeKind::Action => {
                    for &p in &parents[i] {
                        if nodes[p].kind != NodeKind::State {
                            return Err(CausalError::ActionParent {
                                action: n.name.clone(),
                                parent: nodes[p].name.clone(),
                            });
                        }
                    }
                }
                NodeKind::NextState => {
                    if parents[i].is_empty() {
                        return Err(CausalError::OrphanNextState(n.name.clone()));
                    }
                }
            }
        }

        let dag = CausalDag { nodes, edges, parents };
        dag.check_acyclic()?;
        Ok(dag)
    }

    /// Kahn's algorithm; on a stall, walks parent pointers among the
    /// remaining nodes until one repeats and reports that loop.
    fn check_acyclic(&self) -> Result<(), CausalError> {
        let n = self.nodes.len();
        let mut indegree: Vec<usize> = vec![0; n];
        for &(_, d) in &self.edges {
            indegree[d] += 1;
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &(s, d) in &self.edges {
                if s == v {
                    indegree[d] -= 1;
                    if indegree[d] == 0 {
                        queue.push(d);
                    }
                }
            }
        }
        if seen == n {
            return Ok(());
        }
        let start = (0..n).find(|&i| indegree[i] > 0).unwrap();
        let mut path = vec![start];
        loop {
            let cur = *path.last().unwrap();
            let next = self.parents[cur]
                .iter()
                .copied()
                .find(|&p| indegree[p] > 0)
                .expect("a stuck node keeps a stuck parent");
            if let Some(pos) = path.iter().position(|&v| v == next) {
                // Reversing path[pos..] lists the loop in edge direction,
                // from cur back around to next; repeating cur closes it.
                let mut witness: Vec<String> =
                    path[pos..].iter().rev().map(|&v| self.nodes[v].name.clone()).collect();
                witness.push(witness[0].clone());
                return Err(CausalError::Cycle { witness });
            }
            path.push(next);
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CausalError> {
        let doc: DagDoc =
            serde_json::from_str(text).map_err(|e| CausalError::BadDocument(e.to_string()))?;
        CausalDag::new(doc.nodes, &doc.edges)
    }

    pub fn to_json(&self) -> String {
        let doc = DagDoc {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(s, d)| (self.nodes[s].name.clone(), self.nodes[d].name.clone()))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("graph document serializes")
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> &NodeDef {
        &self.nodes[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.nodes[i].name
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        self.nodes[i].kind
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn nodes_of_kind(&self, kind: NodeKind) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == kind).collect()
    }

    pub fn state_dim(&self) -> usize {
        self.nodes_of_kind(NodeKind::State).len()
    }

    pub fn action_dim(&self) -> usize {
        self.nodes_of_kind(NodeKind::Action).len()
    }

    /// Slot in the state vector described by node `i`, for state and
    /// next-state nodes: the position among nodes of the same kind.
    pub fn state_slot(&self, i: usize) -> usize {
        let kind = self.nodes[i].kind;
        assert!(kind != NodeKind::Action, "actions have no state slot");
        (0..i).filter(|&j| self.nodes[j].kind == kind).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(name: &str, kind: NodeKind) -> NodeDef {
        NodeDef { name: name.to_string(), kind }
    }

    fn edge(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    #[test]
    fn json_roundtrip_preserves_structure() {
        let dag = CausalDag::new(
            vec![node("s1", NodeKind::State), node("a1", NodeKind::Action), node("s'1", NodeKind::NextState)],
            &[edge("s1", "a1"), edge("a1", "s'1"), edge("s1", "s'1")],
        )
        .unwrap();
        let text = dag.to_json();
        let back = CausalDag::from_json(&text).unwrap();
        assert_eq!(back.node_count(), 3);
        assert_eq!(back.edges().len(), 2 + 1);
        assert_eq!(back.name(1), "a1");
    }

    #[test]
    fn cycle_is_reported_with_witness() {
        let err = CausalDag::new(
            vec![
                node("s1", NodeKind::State),
                node("s'1", NodeKind::NextState),
                node("s'2", NodeKind::NextState),
            ],
            &[edge("s1", "s'1"), edge("s'1", "s'2"), edge("s'2", "s'1")],
        )
        .unwrap_err();
        match err {
            CausalError::Cycle { witness } => {
                assert!(witness.len() >= 3);
                assert_eq!(witness.first(), witness.last());
                assert!(witness.contains(&"s'1".to_string()));
                assert!(witness.contains(&"s'2".to_string()));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn action_with_action_parent_is_rejected() {
        let err = CausalDag::new(
            vec![node("s1", NodeKind::State), node("a1", NodeKind::Action), node("a2", NodeKind::Action)],
            &[edge("s1", "a1"), edge("a1", "a2")],
        )
        .unwrap_err();
        assert!(matches!(err, CausalError::ActionParent { .. }), "{err}");
    }

    #[test]
    fn parentless_next_state_is_rejected() {
        let err = CausalDag::new(
            vec![node("s1", NodeKind::State), node("s'1", NodeKind::NextState)],
            &[],
        )
        .unwrap_err();
        assert!(matches!(err, CausalError::OrphanNextState(_)), "{err}");
    }

    #[test]
    fn state_slots_count_within_kind() {
        let dag = CausalDag::new(
            vec![
                node("s1", NodeKind::State),
                node("s2", NodeKind::State),
                node("a1", NodeKind::Action),
                node("s'1", NodeKind::NextState),
                node("s'2", NodeKind::NextState),
            ],
            &[edge("a1", "s'1"), edge("s2", "s'2"), edge("s1", "s'1")],
        )
        .unwrap();
        assert_eq!(dag.state_slot(1), 1);
        assert_eq!(dag.state_slot(3), 0);
        assert_eq!(dag.state_slot(4), 1);
    }
}
