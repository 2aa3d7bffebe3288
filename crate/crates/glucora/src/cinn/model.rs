//! The assembled bidirectional model.
//!
//! A [`CinnModel`] is a chain of symmetric blocks ending in one asymmetric
//! block, laid out exactly as a [`BlockPlan`] dictates. The action enters
//! as the initial carry; each symmetric block widens it under conditioning
//! from the current state; the asymmetric block appends the remaining known
//! state slots and maps affinely onto the full next state. The backward
//! reading runs the same weights in reverse and recovers the action.
//!
//! Both directions normalize their raw inputs on the tape and denormalize
//! their outputs, so callers deal in physical units while every network
//! sees unit-scale values.

use super::blocks::{AsymmetricBlock, SymmetricBlock};
use super::CinnError;
use crate::causal::{BlockPlan, BlockSpec};
use crate::glucosim::Dataset;
use crate::numkit::{orthogonality_defect, NodeId, ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Standard deviations below this are flattened to it before dividing.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalization {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
}

impl Normalization {
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Normalization {
            state_mean: vec![0.0; state_dim],
            state_std: vec![1.0; state_dim],
            action_mean: vec![0.0; action_dim],
            action_std: vec![1.0; action_dim],
        }
    }

    /// Per-dimension moments of a dataset. State statistics pool `s` and
    /// `s_next` so both ends of a transition share one scale.
    pub fn fit(ds: &Dataset) -> Self {
        let sd = ds.state_dim;
        let mut out = Normalization::identity(sd, 2);
        let n = (2 * ds.rows.len()) as f64;
        let mut mean = vec![0.0; sd];
        for r in &ds.rows {
            for i in 0..sd {
                mean[i] += r.s[i] + r.s_next[i];
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; sd];
        for r in &ds.rows {
            for i in 0..sd {
                var[i] += (r.s[i] - mean[i]).powi(2) + (r.s_next[i] - mean[i]).powi(2);
            }
        }
        out.state_mean = mean;
        out.state_std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();

        let na = ds.rows.len() as f64;
        let mut amean = [0.0; 2];
        for r in &ds.rows {
            amean[0] += r.a[0];
            amean[1] += r.a[1];
        }
        amean[0] /= na;
        amean[1] /= na;
        let mut avar = [0.0; 2];
        for r in &ds.rows {
            avar[0] += (r.a[0] - amean[0]).powi(2);
            avar[1] += (r.a[1] - amean[1]).powi(2);
        }
        out.action_mean = amean.to_vec();
        out.action_std = avar.iter().map(|v| (v / na).sqrt().max(STD_FLOOR)).collect();
        out
    }

    fn affine_in(tape: &mut Tape, x: NodeId, mean: &[f64], std: &[f64]) -> NodeId {
        let m = tape.constant(Tensor::vector(mean.to_vec()));
        let s = tape.constant(Tensor::vector(std.to_vec()));
        let c = tape.sub(x, m);
        tape.div(c, s)
    }

    fn affine_out(tape: &mut Tape, x: NodeId, mean: &[f64], std: &[f64]) -> NodeId {
        let m = tape.constant(Tensor::vector(mean.to_vec()));
        let s = tape.constant(Tensor::vector(std.to_vec()));
        let p = tape.mul(x, s);
        tape.add(p, m)
    }

    pub fn state_in(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        Self::affine_in(tape, x, &self.state_mean, &self.state_std)
    }

    pub fn state_out(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        Self::affine_out(tape, x, &self.state_mean, &self.state_std)
    }

    pub fn action_in(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        Self::affine_in(tape, x, &self.action_mean, &self.action_std)
    }

    pub fn action_out(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        Self::affine_out(tape, x, &self.action_mean, &self.action_std)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CinnConfig {
    pub hidden: usize,
    pub coupling_depth: usize,
}

impl Default for CinnConfig {
    fn default() -> Self {
        CinnConfig { hidden: 16, coupling_depth: 2 }
    }
}

/// Weight nodes materialized once per tape and shared across every sample
/// recorded on it.
pub struct TapeWeights {
    pub fusions: Vec<NodeId>,
    pub proj: NodeId,
    pub bias: NodeId,
}

#[derive(Debug, Clone)]
pub struct CinnModel {
    pub config: CinnConfig,
    pub norm: Normalization,
    pub store: ParamStore,
    plan: BlockPlan,
    syms: Vec<SymmetricBlock>,
    tail: AsymmetricBlock,
}

impl CinnModel {
    pub fn new(plan: BlockPlan, config: CinnConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut syms = Vec::new();
        let mut tail = None;
        for (i, spec) in plan.blocks().iter().enumerate() {
            match spec {
                BlockSpec::Symmetric { d1, d2, cond_state_idx } => {
                    assert!(tail.is_none(), "symmetric block after the tail");
                    syms.push(SymmetricBlock::init(
                        &mut store,
                        &mut rng,
                        &format!("block{i}"),
                        *d1,
                        *d2,
                        cond_state_idx.clone(),
                        config.hidden,
                        config.coupling_depth,
                    ));
                }
                BlockSpec::Asymmetric { in_dim, out_dim, known_state_idx } => {
                    assert!(tail.is_none(), "a plan has exactly one tail block");
                    tail = Some(AsymmetricBlock::init(
                        &mut store,
                        &mut rng,
                        "tail",
                        *in_dim,
                        *out_dim,
                        known_state_idx.clone(),
                    ));
                }
            }
        }
        let tail = tail.expect("a plan always ends in an asymmetric block");
        let norm = Normalization::identity(plan.state_dim(), plan.action_dim());
        CinnModel { config, norm, store, plan, syms, tail }
    }

    pub fn plan(&self) -> &BlockPlan {
        &self.plan
    }

    pub fn state_dim(&self) -> usize {
        self.plan.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.plan.action_dim()
    }

    /// Materializes every orthogonal weight once on `tape`.
    pub fn bind(&self, tape: &mut Tape, frozen: bool) -> Result<TapeWeights, CinnError> {
        let fusions = self
            .syms
            .iter()
            .map(|b| b.materialize_fusion(tape, &self.store, frozen))
            .collect::<Result<_, _>>()?;
        let proj = self.tail.materialize_proj(tape, &self.store, frozen)?;
        let bias = self.tail.bias_node(tape, &self.store, frozen);
        Ok(TapeWeights { fusions, proj, bias })
    }

    fn check_dim(&self, tape: &Tape, x: NodeId, expected: usize, what: &'static str) -> Result<(), CinnError> {
        let v = tape.value(x);
        // rank-2 inputs carry one sample per column
        let got = if v.shape().len() == 2 { v.rows() } else { v.len() };
        if got != expected {
            return Err(CinnError::DimMismatch { what, expected, got });
        }
        Ok(())
    }

    /// Records the next-state prediction for raw `s`, `a` nodes. The result
    /// is in raw units.
    pub fn forward_from(
        &self,
        tape: &mut Tape,
        w: &TapeWeights,
        s: NodeId,
        a: NodeId,
        frozen: bool,
    ) -> Result<NodeId, CinnError> {
        self.check_dim(tape, s, self.state_dim(), "forward state")?;
        self.check_dim(tape, a, self.action_dim(), "forward action")?;
        let s_n = self.norm.state_in(tape, s);
        let mut carry = self.norm.action_in(tape, a);
        for (b, &wn) in self.syms.iter().zip(&w.fusions) {
            let cond = tape.gather(s_n, &b.cond_state_idx);
            carry = b.forward(tape, &self.store, wn, carry, cond, frozen)?;
        }
        let knowns = tape.gather(s_n, &self.tail.known_state_idx);
        let x = tape.concat(&[carry, knowns]);
        let y_n = self.tail.forward(tape, w.proj, w.bias, x);
        Ok(self.norm.state_out(tape, y_n))
    }

    /// Records the action recovery for raw `s`, `s_next` nodes: the same
    /// weights as [`Self::forward_from`], inverted block by block.
    pub fn counterfactual_from(
        &self,
        tape: &mut Tape,
        w: &TapeWeights,
        s: NodeId,
        s_next: NodeId,
        frozen: bool,
    ) -> Result<NodeId, CinnError> {
        self.check_dim(tape, s, self.state_dim(), "counterfactual state")?;
        self.check_dim(tape, s_next, self.state_dim(), "counterfactual next state")?;
        let s_n = self.norm.state_in(tape, s);
        let y_n = self.norm.state_in(tape, s_next);
        let knowns = tape.gather(s_n, &self.tail.known_state_idx);
        let mut carry = self.tail.inverse(tape, w.proj, w.bias, y_n, knowns)?;
        for (i, b) in self.syms.iter().enumerate().rev() {
            let cond = tape.gather(s_n, &b.cond_state_idx);
            carry = b.inverse(tape, &self.store, w.fusions[i], carry, cond, frozen)?;
        }
        Ok(self.norm.action_out(tape, carry))
    }

    /// Plain forward evaluation in raw units.
    pub fn forward(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>, CinnError> {
        let mut tape = Tape::new();
        let w = self.bind(&mut tape, true)?;
        let sn = tape.constant(Tensor::vector(s.to_vec()));
        let an = tape.constant(Tensor::vector(a.to_vec()));
        let y = self.forward_from(&mut tape, &w, sn, an, true)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Plain action recovery in raw units.
    pub fn counterfactual(&self, s: &[f64], s_next: &[f64]) -> Result<Vec<f64>, CinnError> {
        let mut tape = Tape::new();
        let w = self.bind(&mut tape, true)?;
        let sn = tape.constant(Tensor::vector(s.to_vec()));
        let yn = tape.constant(Tensor::vector(s_next.to_vec()));
        let a = self.counterfactual_from(&mut tape, &w, sn, yn, true)?;
        Ok(tape.value(a).data().to_vec())
    }

    /// Worst `W W^T` deviation across every orthogonal weight in the model.
    pub fn worst_orthogonality_defect(&self) -> Result<f64, CinnError> {
        let mut worst: f64 = 0.0;
        for b in &self.syms {
            let w = b.fusion().materialize_value(&self.store)?;
            worst = worst.max(orthogonality_defect(&w));
        }
        let w = self.tail.proj().materialize_value(&self.store)?;
        Ok(worst.max(orthogonality_defect(&w)))
    }
}

/// A model with its orthogonal weights baked to constants. Gradients still
/// flow through the graph to the *inputs*, which is exactly what a policy
/// training against a fixed transition model needs, but no parameter of the
/// model itself can move.
#[derive(Debug, Clone)]
pub struct FrozenCinn {
    model: CinnModel,
    fusion_w: Vec<Tensor>,
    proj_w: Tensor,
    bias_w: Tensor,
}

impl FrozenCinn {
    pub fn new(model: CinnModel) -> Result<Self, CinnError> {
        let fusion_w = model
            .syms
            .iter()
            .map(|b| b.fusion().materialize_value(&model.store))
            .collect::<Result<_, _>>()?;
        let proj_w = model.tail.proj().materialize_value(&model.store)?;
        let bias_w = model
            .store
            .value(model.tail.param_ids().pop().expect("tail always has a bias"))
            .clone();
        Ok(FrozenCinn { model, fusion_w, proj_w, bias_w })
    }

    pub fn model(&self) -> &CinnModel {
        &self.model
    }

    /// Binds the cached weights as constants; no Householder product runs.
    pub fn bind(&self, tape: &mut Tape) -> TapeWeights {
        TapeWeights {
            fusions: self.fusion_w.iter().map(|t| tape.constant(t.clone())).collect(),
            proj: tape.constant(self.proj_w.clone()),
            bias: tape.constant(self.bias_w.clone()),
        }
    }

    pub fn forward_from(
        &self,
        tape: &mut Tape,
        w: &TapeWeights,
        s: NodeId,
        a: NodeId,
    ) -> Result<NodeId, CinnError> {
        self.model.forward_from(tape, w, s, a, true)
    }

    pub fn counterfactual_from(
        &self,
        tape: &mut Tape,
        w: &TapeWeights,
        s: NodeId,
        s_next: NodeId,
    ) -> Result<NodeId, CinnError> {
        self.model.counterfactual_from(tape, w, s, s_next, true)
    }

    pub fn forward(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>, CinnError> {
        let mut tape = Tape::new();
        let w = self.bind(&mut tape);
        let sn = tape.constant(Tensor::vector(s.to_vec()));
        let an = tape.constant(Tensor::vector(a.to_vec()));
        let y = self.forward_from(&mut tape, &w, sn, an)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn counterfactual(&self, s: &[f64], s_next: &[f64]) -> Result<Vec<f64>, CinnError> {
        let mut tape = Tape::new();
        let w = self.bind(&mut tape);
        let sn = tape.constant(Tensor::vector(s.to_vec()));
        let yn = tape.constant(Tensor::vector(s_next.to_vec()));
        let a = self.counterfactual_from(&mut tape, &w, sn, yn)?;
        Ok(tape.value(a).data().to_vec())
    }
}
