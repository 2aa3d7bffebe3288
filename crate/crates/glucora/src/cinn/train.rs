//! Bidirectional fitting: one loss per direction, one optimizer, one loop.
//!
//! Every batch records both readings of the model on a single tape. The
//! forward loss is the normalized mean squared error of predicted next
//! states; the backward loss is the same for recovered actions. Their sum
//! gets one backward sweep and one Adam step, so both directions pull on
//! the same weights in every update.
//!
//! Per-epoch curves log the training losses as epoch means of the batch
//! values (free) and every evaluation set by fresh forward passes at the
//! epoch's final weights.

use super::model::{CinnModel, FrozenCinn};
use super::CinnError;
use crate::glucosim::{derive_rng, DataRow, Dataset};
use crate::numkit::{AdamState, NodeId, NumError, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 1e-3, batch_size: 32, epochs: 200, seed: 0 }
    }
}

/// Loss histories, one row per epoch. Column 0 is the training set; the
/// rest follow the evaluation sets in the order they were supplied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainCurves {
    pub set_names: Vec<String>,
    pub forward: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
}

impl TrainCurves {
    pub fn final_row(&self) -> (&[f64], &[f64]) {
        (self.forward.last().unwrap(), self.backward.last().unwrap())
    }
}

/// Anything trainable by [`fit`]: records a two-direction batch loss and
/// evaluates itself on a held-out set.
pub(crate) trait FitTarget {
    fn param_store_mut(&mut self) -> &mut ParamStore;
    fn record_batch(&self, tape: &mut Tape, rows: &[&DataRow]) -> Result<(NodeId, NodeId), CinnError>;
    fn eval_pair(&self, ds: &Dataset) -> Result<(f64, f64), CinnError>;
}

fn diverged(e: CinnError, epoch: usize) -> CinnError {
    match e {
        CinnError::Num(NumError::NonFinite { .. })
        | CinnError::Num(NumError::RankDeficient { .. })
        | CinnError::Num(NumError::DegenerateReflector { .. }) => CinnError::Diverged { epoch },
        other => other,
    }
}

pub(crate) fn fit<T: FitTarget>(
    target: &mut T,
    train: &Dataset,
    eval_sets: &[(&str, &Dataset)],
    cfg: &TrainConfig,
    label: &str,
) -> Result<TrainCurves, CinnError> {
    if train.is_empty() {
        return Err(CinnError::EmptyBatch);
    }
    let mut adam = AdamState::new(target.param_store_mut(), cfg.lr);
    let mut set_names = vec!["train".to_string()];
    set_names.extend(eval_sets.iter().map(|(n, _)| n.to_string()));
    let mut curves = TrainCurves { set_names, forward: Vec::new(), backward: Vec::new() };

    let mut order: Vec<usize> = (0..train.rows.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = derive_rng(cfg.seed, &format!("{label}/epoch/{epoch}"));
        order.shuffle(&mut rng);
        let (mut fwd_sum, mut bwd_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            // an exploding update leaves non-finite parameters behind; catch
            // that here, before the values would poison the next tape
            {
                let store = target.param_store_mut();
                if store.ids().any(|id| !store.value(id).all_finite()) {
                    return Err(CinnError::Diverged { epoch });
                }
            }
            let rows: Vec<&DataRow> = chunk.iter().map(|&i| &train.rows[i]).collect();
            let mut tape = Tape::new();
            let (lf, li) =
                target.record_batch(&mut tape, &rows).map_err(|e| diverged(e, epoch))?;
            let (fv, bv) = (tape.value(lf).item(), tape.value(li).item());
            if !fv.is_finite() || !bv.is_finite() {
                return Err(CinnError::Diverged { epoch });
            }
            fwd_sum += fv;
            bwd_sum += bv;
            batches += 1;
            let total = tape.add(lf, li);
            let store = target.param_store_mut();
            store.zero_grads();
            tape.backward(total, store).map_err(|e| diverged(e.into(), epoch))?;
            adam.step(store);
        }
        let mut frow = vec![fwd_sum / batches as f64];
        let mut brow = vec![bwd_sum / batches as f64];
        for (_, ds) in eval_sets {
            let (f, b) = target.eval_pair(ds)?;
            frow.push(f);
            brow.push(b);
        }
        curves.forward.push(frow);
        curves.backward.push(brow);
    }
    Ok(curves)
}

/// Stacks one field of each row as the columns of a rank-2 tensor.
pub(crate) fn columns<'a>(rows: &[&'a DataRow], field: impl Fn(&'a DataRow) -> &'a [f64]) -> Tensor {
    let dim = field(rows[0]).len();
    let mut data = vec![0.0; dim * rows.len()];
    for (c, r) in rows.iter().copied().enumerate() {
        for (i, v) in field(r).iter().enumerate() {
            data[i * rows.len() + c] = *v;
        }
    }
    Tensor::new(vec![dim, rows.len()], data)
}

/// Normalized mean squared error of both directions, the whole batch in one
/// pass with rows as the columns of a single matrix.
impl FitTarget for CinnModel {
    fn param_store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn record_batch(&self, tape: &mut Tape, rows: &[&DataRow]) -> Result<(NodeId, NodeId), CinnError> {
        if rows.is_empty() {
            return Err(CinnError::EmptyBatch);
        }
        let w = self.bind(tape, false)?;
        let s_std = tape.constant(Tensor::vector(self.norm.state_std.clone()));
        let a_std = tape.constant(Tensor::vector(self.norm.action_std.clone()));
        let s = tape.constant(columns(rows, |r| &r.s[..]));
        let a = tape.constant(columns(rows, |r| &r.a[..]));
        let s_next = tape.constant(columns(rows, |r| &r.s_next[..]));

        let y = self.forward_from(tape, &w, s, a, false)?;
        let res = tape.sub(y, s_next);
        let res_n = tape.div(res, s_std);
        let sq = tape.mul(res_n, res_n);
        let lf = tape.mean(sq);

        let ahat = self.counterfactual_from(tape, &w, s, s_next, false)?;
        let ares = tape.sub(ahat, a);
        let ares_n = tape.div(ares, a_std);
        let asq = tape.mul(ares_n, ares_n);
        Ok((lf, tape.mean(asq)))
    }

    fn eval_pair(&self, ds: &Dataset) -> Result<(f64, f64), CinnError> {
        eval_mse(self, ds)
    }
}

/// Value-level normalized MSE of both directions over a whole dataset,
/// through frozen weights. This recomputes what the training loss measures,
/// independently of the training tape.
pub fn eval_mse(model: &CinnModel, ds: &Dataset) -> Result<(f64, f64), CinnError> {
    if ds.is_empty() {
        return Err(CinnError::EmptyBatch);
    }
    let frozen = FrozenCinn::new(model.clone())?;
    let (mut fsum, mut bsum) = (0.0, 0.0);
    for r in &ds.rows {
        let y = frozen.forward(&r.s, &r.a)?;
        let f: f64 = y
            .iter()
            .zip(&r.s_next)
            .zip(&model.norm.state_std)
            .map(|((p, t), sd)| ((p - t) / sd).powi(2))
            .sum::<f64>()
            / ds.state_dim as f64;
        let ahat = frozen.counterfactual(&r.s, &r.s_next)?;
        let b: f64 = ahat
            .iter()
            .zip(&r.a)
            .zip(&model.norm.action_std)
            .map(|((p, t), sd)| ((p - t) / sd).powi(2))
            .sum::<f64>()
            / 2.0;
        fsum += f;
        bsum += b;
    }
    let n = ds.rows.len() as f64;
    Ok((fsum / n, bsum / n))
}

/// Fits a model bidirectionally on `train`, logging `eval_sets` every epoch.
/// The model's normalization must already be set; training leaves it alone.
pub fn train_cinn(
    model: &mut CinnModel,
    train: &Dataset,
    eval_sets: &[(&str, &Dataset)],
    cfg: &TrainConfig,
) -> Result<TrainCurves, CinnError> {
    if train.state_dim != model.state_dim() {
        return Err(CinnError::DimMismatch {
            what: "training data state",
            expected: model.state_dim(),
            got: train.state_dim,
        });
    }
    fit(model, train, eval_sets, cfg, "cinn")
}
