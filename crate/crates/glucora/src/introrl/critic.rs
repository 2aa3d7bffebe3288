//! Twin action-value networks with slow-moving target copies.
//!
//! Both heads score a state-action pair; training regresses against the
//! minimum of the two target copies, which damps the optimistic bias a
//! single bootstrapped critic accumulates. The target copies live in a
//! separate parameter store and move only through `polyak`, never through
//! a gradient, so they always trail the live weights.

use crate::numkit::{Mlp, NodeId, NumError, ParamStore, Tape, Tensor};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct QCritic {
    pub store: ParamStore,
    target_store: ParamStore,
    q1: Mlp,
    q2: Mlp,
    obs_offset: Vec<f64>,
    obs_scale: Vec<f64>,
    mid: [f64; 2],
    half: [f64; 2],
}

impl QCritic {
    pub fn new(
        state_dim: usize,
        bounds: ([f64; 2], [f64; 2]),
        obs_norm: (Vec<f64>, Vec<f64>),
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (lo, hi) = bounds;
        let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let half = [(hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0];
        let (obs_offset, obs_scale) = obs_norm;
        let mut store = ParamStore::new();
        let dims = [state_dim + 2, hidden, hidden, 1];
        let q1 = Mlp::init(&mut store, rng, "q1", &dims, 0.01, true);
        let q2 = Mlp::init(&mut store, rng, "q2", &dims, 0.01, true);
        // targets start as an exact copy; ParamIds carry over with the clone
        let target_store = store.clone();
        QCritic { store, target_store, q1, q2, obs_offset, obs_scale, mid, half }
    }

    /// Scores from both heads for a state and a physical-unit action,
    /// each either a vector or a matrix of column samples. `use_targets`
    /// reads the slow copies, which are additionally always frozen.
    pub fn q_pair(
        &self,
        tape: &mut Tape,
        s: NodeId,
        a: NodeId,
        use_targets: bool,
        frozen: bool,
    ) -> Result<(NodeId, NodeId), NumError> {
        let store = if use_targets { &self.target_store } else { &self.store };
        let frozen = frozen || use_targets;
        let off = tape.constant(Tensor::vector(self.obs_offset.clone()));
        let sc = tape.constant(Tensor::vector(self.obs_scale.clone()));
        let s_c = tape.sub(s, off);
        let s_n = tape.div(s_c, sc);
        let midv = tape.constant(Tensor::vector(self.mid.to_vec()));
        let halfv = tape.constant(Tensor::vector(self.half.to_vec()));
        let a_c = tape.sub(a, midv);
        let a_n = tape.div(a_c, halfv);
        let x = tape.concat(&[s_n, a_n]);
        let o1 = self.q1.forward(tape, store, x, frozen)?;
        let o2 = self.q2.forward(tape, store, x, frozen)?;
        Ok((flatten(tape, o1), flatten(tape, o2)))
    }

    /// Moves every target weight a step `tau` of the way to its live
    /// counterpart.
    pub fn polyak(&mut self, tau: f64) {
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            let live = self.store.value(id).data().to_vec();
            for (t, l) in self.target_store.value_mut(id).data_mut().iter_mut().zip(&live) {
                *t = (1.0 - tau) * *t + tau * *l;
            }
        }
    }

    pub fn target_hash(&self) -> String {
        self.target_store.value_hash()
    }
}

/// An output row [1, B] becomes the per-sample vector [B]; a single
/// sample's [1] becomes a scalar.
fn flatten(tape: &mut Tape, o: NodeId) -> NodeId {
    if tape.value(o).shape().len() == 2 {
        tape.col_sums(o)
    } else {
        tape.sum(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glucosim::derive_rng;
    use crate::numkit::AdamState;

    fn toy_critic(seed: u64) -> QCritic {
        let mut rng = derive_rng(seed, "critic-test");
        QCritic::new(3, ([0.0, 0.0], [4.0, 2.0]), (vec![0.0; 3], vec![1.0; 3]), 8, &mut rng)
    }

    fn score(c: &QCritic, s: &[f64], a: &[f64], targets: bool) -> (f64, f64) {
        let mut tape = Tape::new();
        let sn = tape.constant(Tensor::vector(s.to_vec()));
        let an = tape.constant(Tensor::vector(a.to_vec()));
        let (q1, q2) = c.q_pair(&mut tape, sn, an, targets, true).unwrap();
        (tape.value(q1).item(), tape.value(q2).item())
    }

    #[test]
    fn polyak_half_lands_midway() {
        let mut c = toy_critic(1);
        let id = c.store.ids().next().unwrap();
        let before_t = c.target_store.value(id).data().to_vec();
        for v in c.store.value_mut(id).data_mut() {
            *v += 1.0;
        }
        let live = c.store.value(id).data().to_vec();
        c.polyak(0.5);
        for ((t, t0), l) in c.target_store.value(id).data().iter().zip(&before_t).zip(&live) {
            assert_eq!(*t, 0.5 * t0 + 0.5 * l);
        }
    }

    #[test]
    fn gradient_steps_never_touch_the_targets() {
        let mut c = toy_critic(2);
        let h0 = c.target_hash();
        let mut opt = AdamState::new(&c.store, 1e-2);
        let mut tape = Tape::new();
        let sn = tape.constant(Tensor::vector(vec![0.5, -1.0, 2.0]));
        let an = tape.constant(Tensor::vector(vec![1.0, 0.5]));
        let (q1, q2) = c.q_pair(&mut tape, sn, an, false, false).unwrap();
        let both = tape.add(q1, q2);
        let loss = tape.mul(both, both);
        c.store.zero_grads();
        tape.backward(loss, &mut c.store).unwrap();
        opt.step(&mut c.store);
        assert_eq!(c.target_hash(), h0);
        c.polyak(0.1);
        assert_ne!(c.target_hash(), h0);
    }

    #[test]
    fn full_polyak_makes_targets_agree_with_live() {
        let mut c = toy_critic(3);
        let mut tape = Tape::new();
        let sn = tape.constant(Tensor::vector(vec![1.0, 0.0, -1.0]));
        let an = tape.constant(Tensor::vector(vec![3.0, 0.2]));
        let (q1, _) = c.q_pair(&mut tape, sn, an, false, false).unwrap();
        let loss = tape.mul(q1, q1);
        c.store.zero_grads();
        tape.backward(loss, &mut c.store).unwrap();
        AdamState::new(&c.store, 1e-2).step(&mut c.store);
        c.polyak(1.0);
        let s = [1.0, 0.0, -1.0];
        let a = [3.0, 0.2];
        assert_eq!(score(&c, &s, &a, false), score(&c, &s, &a, true));
    }

    #[test]
    fn the_two_heads_are_distinct_functions() {
        let c = toy_critic(4);
        let (q1, q2) = score(&c, &[0.3, 0.9, -0.4], &[2.0, 1.0], false);
        assert_ne!(q1, q2);
    }
}
