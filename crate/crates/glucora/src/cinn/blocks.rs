//! The two block shapes the structure compiler emits.
//!
//! A symmetric block widens the carry: it lifts a `d1` carry through an
//! orthogonal fusion into `d1 + d2` lanes, adds the conditioning state once,
//! and mixes with coupling pairs. Because the fusion rows are orthonormal,
//! `W W^T = I` and the lift inverts by multiplying back with `W`, so the
//! whole block is exactly invertible given the conditioning.
//!
//! An asymmetric block ends the chain: a row-orthonormal affine map from
//! carry plus known state slots onto the full next state. Going backwards
//! the knowns are knowns, so recovering the carry is a least-squares solve
//! against the carry columns.

use super::coupling::CouplingPair;
use super::CinnError;
use crate::numkit::{NodeId, OrthoParam, ParamId, ParamStore, Tape, Tensor};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct SymmetricBlock {
    pub d1: usize,
    pub d2: usize,
    /// State slots whose current values condition this block.
    pub cond_state_idx: Vec<usize>,
    fusion: OrthoParam,
    pairs: Vec<CouplingPair>,
}

impl SymmetricBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        d1: usize,
        d2: usize,
        cond_state_idx: Vec<usize>,
        hidden: usize,
        depth: usize,
    ) -> Self {
        assert_eq!(d2, cond_state_idx.len(), "one conditioning slot per new lane");
        let cols = d1 + d2;
        let fusion = OrthoParam::init(store, rng, &format!("{name}.fusion"), d1, cols, cols);
        let pairs = (0..depth)
            .map(|i| CouplingPair::init(store, rng, &format!("{name}.pair{i}"), d1, d2, hidden))
            .collect();
        SymmetricBlock { d1, d2, cond_state_idx, fusion, pairs }
    }

    pub fn fusion(&self) -> &OrthoParam {
        &self.fusion
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.fusion.reflector_ids().to_vec();
        ids.extend(self.pairs.iter().flat_map(|p| p.param_ids().collect::<Vec<_>>()));
        ids
    }

    /// Records the fusion matrix once; reuse the node across a whole batch.
    pub fn materialize_fusion(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        frozen: bool,
    ) -> Result<NodeId, CinnError> {
        Ok(self.fusion.materialize(tape, store, frozen)?)
    }

    /// `u1` is the incoming carry (`d1`), `cond` the conditioning values
    /// (`d2`). Returns the widened carry (`d1 + d2`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        w: NodeId,
        u1: NodeId,
        cond: NodeId,
        frozen: bool,
    ) -> Result<NodeId, CinnError> {
        let l = tape.mat_t_vec(w, u1);
        let mut q1 = tape.slice(l, 0, self.d1);
        let l2 = tape.slice(l, self.d1, self.d2);
        let mut q2 = tape.add(l2, cond);
        for p in &self.pairs {
            (q1, q2) = p.forward(tape, store, q1, q2, frozen)?;
        }
        Ok(tape.concat(&[q1, q2]))
    }

    /// Undoes [`Self::forward`] given the same conditioning.
    pub fn inverse(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        w: NodeId,
        out: NodeId,
        cond: NodeId,
        frozen: bool,
    ) -> Result<NodeId, CinnError> {
        let mut v1 = tape.slice(out, 0, self.d1);
        let mut v2 = tape.slice(out, self.d1, self.d2);
        for p in self.pairs.iter().rev() {
            (v1, v2) = p.inverse(tape, store, v1, v2, frozen)?;
        }
        let l2 = tape.sub(v2, cond);
        let l = tape.concat(&[v1, l2]);
        Ok(tape.matvec(w, l))
    }
}

#[derive(Debug, Clone)]
pub struct AsymmetricBlock {
    pub in_dim: usize,
    pub out_dim: usize,
    /// State slots appended to the carry as known inputs.
    pub known_state_idx: Vec<usize>,
    proj: OrthoParam,
    bias: ParamId,
}

impl AsymmetricBlock {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        known_state_idx: Vec<usize>,
    ) -> Self {
        assert!(known_state_idx.len() < in_dim, "the carry must be nonempty");
        let proj = OrthoParam::init(store, rng, &format!("{name}.proj"), out_dim, in_dim, in_dim);
        let bias = store.alloc(format!("{name}.bias"), Tensor::zeros(vec![out_dim]));
        AsymmetricBlock { in_dim, out_dim, known_state_idx, proj, bias }
    }

    pub fn proj(&self) -> &OrthoParam {
        &self.proj
    }

    pub fn carry_dim(&self) -> usize {
        self.in_dim - self.known_state_idx.len()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.proj.reflector_ids().to_vec();
        ids.push(self.bias);
        ids
    }

    pub fn materialize_proj(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        frozen: bool,
    ) -> Result<NodeId, CinnError> {
        Ok(self.proj.materialize(tape, store, frozen)?)
    }

    pub fn bias_node(&self, tape: &mut Tape, store: &ParamStore, frozen: bool) -> NodeId {
        if frozen {
            tape.frozen_param(store, self.bias)
        } else {
            tape.param(store, self.bias)
        }
    }

    /// `x` is carry then knowns, length `in_dim`. Returns `W x + b`.
    pub fn forward(&self, tape: &mut Tape, w: NodeId, bias: NodeId, x: NodeId) -> NodeId {
        let wx = tape.matvec(w, x);
        tape.add(wx, bias)
    }

    /// Recovers the carry from an output and the known inputs by solving
    /// the carry columns in the least-squares sense.
    pub fn inverse(
        &self,
        tape: &mut Tape,
        w: NodeId,
        bias: NodeId,
        y: NodeId,
        knowns: NodeId,
    ) -> Result<NodeId, CinnError> {
        let cu = self.carry_dim();
        let carry_cols: Vec<usize> = (0..cu).collect();
        let known_cols: Vec<usize> = (cu..self.in_dim).collect();
        let wu = tape.gather_cols(w, &carry_cols);
        let wk = tape.gather_cols(w, &known_cols);
        let contrib = tape.matvec(wk, knowns);
        let shifted = tape.sub(y, bias);
        let rhs = tape.sub(shifted, contrib);
        Ok(tape.lstsq(wu, rhs)?)
    }
}
