//! A plain multilayer perceptron that answers both directions through one
//! trunk, as a control for the invertible model. There is no shared inverse
//! here: the backward direction is just another regression head, and the two
//! are tied only through the trunk weights.
//!
//! The trunk reads `[s, s', a, fwd flag, bwd flag]` in normalized units with
//! the unused slots zeroed, and writes `[next state, action]`; each query
//! masks out the half it is not asking about.

use super::model::Normalization;
use super::train::{columns, fit, FitTarget};
use super::{CinnError, TrainConfig, TrainCurves};
use crate::glucosim::{derive_rng, DataRow, Dataset};
use crate::numkit::{Mlp, NodeId, ParamStore, Tape, Tensor};

#[derive(Debug, Clone)]
pub struct MaskedMlp {
    pub norm: Normalization,
    pub store: ParamStore,
    trunk: Mlp,
    state_dim: usize,
    action_dim: usize,
}

impl MaskedMlp {
    pub fn new(state_dim: usize, action_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(seed, "masked-mlp");
        let dims = [2 * state_dim + action_dim + 2, hidden, state_dim + action_dim];
        // linear output: both heads are unconstrained regressions
        let trunk = Mlp::init(&mut store, &mut rng, "trunk", &dims, 0.01, true);
        MaskedMlp {
            norm: Normalization::identity(state_dim, action_dim),
            store,
            trunk,
            state_dim,
            action_dim,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn query(
        &self,
        tape: &mut Tape,
        s: NodeId,
        other: Option<NodeId>,
        action: Option<NodeId>,
    ) -> Result<NodeId, CinnError> {
        let (sd, ad) = (self.state_dim, self.action_dim);
        // rank-2 inputs carry one sample per column; the zero padding and the
        // flag rows have to match that shape for the concat below
        let cols = {
            let v = tape.value(s);
            if v.shape().len() == 2 { Some(v.cols()) } else { None }
        };
        let shape = |dim: usize| match cols {
            Some(c) => vec![dim, c],
            None => vec![dim],
        };
        let s_n = self.norm.state_in(tape, s);
        let other_n = match other {
            Some(x) => self.norm.state_in(tape, x),
            None => tape.constant(Tensor::zeros(shape(sd))),
        };
        let action_n = match action {
            Some(x) => self.norm.action_in(tape, x),
            None => tape.constant(Tensor::zeros(shape(ad))),
        };
        let flag = |on: bool| if on { 1.0 } else { 0.0 };
        let pair = [flag(action.is_some()), flag(other.is_some())];
        let flags = match cols {
            Some(c) => {
                let data = pair.iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect();
                tape.constant(Tensor::new(vec![2, c], data))
            }
            None => tape.constant(Tensor::vector(pair.to_vec())),
        };
        let input = tape.concat(&[s_n, other_n, action_n, flags]);
        Ok(self.trunk.forward(tape, &self.store, input, false)?)
    }

    pub fn forward_nodes(
        &self,
        tape: &mut Tape,
        s: NodeId,
        a: NodeId,
    ) -> Result<NodeId, CinnError> {
        let out = self.query(tape, s, None, Some(a))?;
        let head = tape.slice(out, 0, self.state_dim);
        Ok(self.norm.state_out(tape, head))
    }

    pub fn backward_nodes(
        &self,
        tape: &mut Tape,
        s: NodeId,
        s_next: NodeId,
    ) -> Result<NodeId, CinnError> {
        let out = self.query(tape, s, Some(s_next), None)?;
        let head = tape.slice(out, self.state_dim, self.action_dim);
        Ok(self.norm.action_out(tape, head))
    }

    pub fn forward(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>, CinnError> {
        let mut tape = Tape::new();
        let sn = tape.constant(Tensor::vector(s.to_vec()));
        let an = tape.constant(Tensor::vector(a.to_vec()));
        let y = self.forward_nodes(&mut tape, sn, an)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn backward(&self, s: &[f64], s_next: &[f64]) -> Result<Vec<f64>, CinnError> {
        let mut tape = Tape::new();
        let sn = tape.constant(Tensor::vector(s.to_vec()));
        let nn = tape.constant(Tensor::vector(s_next.to_vec()));
        let y = self.backward_nodes(&mut tape, sn, nn)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Value-level normalized MSE of both heads over a dataset.
    pub fn eval_mse(&self, ds: &Dataset) -> Result<(f64, f64), CinnError> {
        if ds.is_empty() {
            return Err(CinnError::EmptyBatch);
        }
        let (mut fsum, mut bsum) = (0.0, 0.0);
        for r in &ds.rows {
            let y = self.forward(&r.s, &r.a)?;
            fsum += y
                .iter()
                .zip(&r.s_next)
                .zip(&self.norm.state_std)
                .map(|((p, t), sd)| ((p - t) / sd).powi(2))
                .sum::<f64>()
                / self.state_dim as f64;
            let ahat = self.backward(&r.s, &r.s_next)?;
            bsum += ahat
                .iter()
                .zip(&r.a)
                .zip(&self.norm.action_std)
                .map(|((p, t), sd)| ((p - t) / sd).powi(2))
                .sum::<f64>()
                / self.action_dim as f64;
        }
        let n = ds.rows.len() as f64;
        Ok((fsum / n, bsum / n))
    }
}

impl FitTarget for MaskedMlp {
    fn param_store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn record_batch(&self, tape: &mut Tape, rows: &[&DataRow]) -> Result<(NodeId, NodeId), CinnError> {
        if rows.is_empty() {
            return Err(CinnError::EmptyBatch);
        }
        let s_std = tape.constant(Tensor::vector(self.norm.state_std.clone()));
        let a_std = tape.constant(Tensor::vector(self.norm.action_std.clone()));
        let s = tape.constant(columns(rows, |r| &r.s[..]));
        let a = tape.constant(columns(rows, |r| &r.a[..]));
        let s_next = tape.constant(columns(rows, |r| &r.s_next[..]));

        let y = self.forward_nodes(tape, s, a)?;
        let res = tape.sub(y, s_next);
        let res_n = tape.div(res, s_std);
        let sq = tape.mul(res_n, res_n);
        let lf = tape.mean(sq);

        let ahat = self.backward_nodes(tape, s, s_next)?;
        let ares = tape.sub(ahat, a);
        let ares_n = tape.div(ares, a_std);
        let asq = tape.mul(ares_n, ares_n);
        Ok((lf, tape.mean(asq)))
    }

    fn eval_pair(&self, ds: &Dataset) -> Result<(f64, f64), CinnError> {
        self.eval_mse(ds)
    }
}

/// Fits the baseline with the same loop, loss, and logging as the invertible
/// model so the two training curves are directly comparable.
pub fn train_masked(
    model: &mut MaskedMlp,
    train: &Dataset,
    eval_sets: &[(&str, &Dataset)],
    cfg: &TrainConfig,
) -> Result<TrainCurves, CinnError> {
    if train.state_dim != model.state_dim {
        return Err(CinnError::DimMismatch {
            what: "training data state",
            expected: model.state_dim,
            got: train.state_dim,
        });
    }
    fit(model, train, eval_sets, cfg, "masked")
}
