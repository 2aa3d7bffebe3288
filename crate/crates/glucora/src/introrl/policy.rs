//! A squashed Gaussian policy over box-bounded dose pairs.
//!
//! The trunk reads normalized observations; two linear heads emit the
//! per-dimension mean and log standard deviation of a Gaussian in
//! pre-squash space. Samples pass through tanh and an affine map onto the
//! action box, so emitted doses always respect the bounds. The log density
//! is taken in the unit tanh box, the coordinates the entropy target
//! refers to, with the change-of-variables correction folded in through
//! its softplus form rather than log(1 - tanh^2), which underflows first.

use crate::numkit::{Mlp, NodeId, NumError, ParamStore, Tape, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{LN_2, PI};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// One reparametrized draw, differentiable end to end.
pub struct PolicySample {
    /// Action in physical units, one column per sample when batched.
    pub action: NodeId,
    /// Log density per sample in unit-box coordinates.
    pub log_prob: NodeId,
}

#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub store: ParamStore,
    trunk: Mlp,
    mean_head: Mlp,
    log_std_head: Mlp,
    obs_offset: Vec<f64>,
    obs_scale: Vec<f64>,
    mid: [f64; 2],
    half: [f64; 2],
}

impl GaussianPolicy {
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
        assert!(half.iter().all(|h| *h > 0.0), "action bounds must have positive width");
        let (obs_offset, obs_scale) = obs_norm;
        assert_eq!(obs_offset.len(), state_dim);
        assert!(obs_scale.iter().all(|s| *s > 0.0), "observation scales must be positive");
        let mut store = ParamStore::new();
        let trunk = Mlp::init(&mut store, rng, "pi.trunk", &[state_dim, hidden, hidden], 0.01, false);
        let mean_head = Mlp::init(&mut store, rng, "pi.mean", &[hidden, 2], 0.01, true);
        let log_std_head = Mlp::init(&mut store, rng, "pi.logstd", &[hidden, 2], 0.01, true);
        GaussianPolicy { store, trunk, mean_head, log_std_head, obs_offset, obs_scale, mid, half }
    }

    pub fn state_dim(&self) -> usize {
        self.obs_offset.len()
    }

    pub fn bounds_mid_half(&self) -> ([f64; 2], [f64; 2]) {
        (self.mid, self.half)
    }

    /// Mean and clamped log-std nodes for a state (vector) or a matrix of
    /// column states.
    pub(crate) fn heads(
        &self,
        tape: &mut Tape,
        s: NodeId,
        frozen: bool,
    ) -> Result<(NodeId, NodeId), NumError> {
        let off = tape.constant(Tensor::vector(self.obs_offset.clone()));
        let sc = tape.constant(Tensor::vector(self.obs_scale.clone()));
        let centered = tape.sub(s, off);
        let s_n = tape.div(centered, sc);
        let h = self.trunk.forward(tape, &self.store, s_n, frozen)?;
        let mean = self.mean_head.forward(tape, &self.store, h, frozen)?;
        let ls = self.log_std_head.forward(tape, &self.store, h, frozen)?;
        Ok((mean, tape.clamp(ls, LOG_STD_MIN, LOG_STD_MAX)))
    }

    fn squash(&self, tape: &mut Tape, z: NodeId) -> NodeId {
        let u = tape.tanh(z);
        let halfv = tape.constant(Tensor::vector(self.half.to_vec()));
        let midv = tape.constant(Tensor::vector(self.mid.to_vec()));
        let scaled = tape.mul(u, halfv);
        tape.add(scaled, midv)
    }

    /// Reparametrized draw using caller-supplied standard-normal noise of
    /// the same shape the heads produce.
    pub fn sample(
        &self,
        tape: &mut Tape,
        s: NodeId,
        noise: &Tensor,
        frozen: bool,
    ) -> Result<PolicySample, NumError> {
        let (mean, log_std) = self.heads(tape, s, frozen)?;
        let eps = tape.constant(noise.clone());
        let std = tape.exp(log_std);
        let spread = tape.mul(std, eps);
        let z = tape.add(mean, spread);

        // log N(z; mean, std) with (z - mean)/std = eps held constant
        let e2 = tape.mul(eps, eps);
        let half_e2 = tape.scale(e2, -0.5);
        let minus_ls = tape.sub(half_e2, log_std);
        let gauss = tape.add_const(minus_ls, -0.5 * (2.0 * PI).ln());

        // log(1 - tanh(z)^2) = 2 (ln 2 - z - softplus(-2z))
        let m2z = tape.scale(z, -2.0);
        let sp = tape.softplus(m2z);
        let zsp = tape.add(z, sp);
        let neg = tape.neg(zsp);
        let ln1mu2 = tape.scale(tape.add_const(neg, LN_2), 2.0);

        let elem = tape.sub(gauss, ln1mu2);
        let log_prob = if tape.value(elem).shape().len() == 2 {
            tape.col_sums(elem)
        } else {
            tape.sum(elem)
        };
        Ok(PolicySample { action: self.squash(tape, z), log_prob })
    }

    /// The squashed mean, the policy's deterministic answer.
    pub fn deterministic(&self, tape: &mut Tape, s: NodeId, frozen: bool) -> Result<NodeId, NumError> {
        let (mean, _) = self.heads(tape, s, frozen)?;
        Ok(self.squash(tape, mean))
    }

    /// Value-level action choice. With an rng the draw is stochastic;
    /// without one it is the squashed mean.
    pub fn select_action(
        &self,
        s: &[f64],
        rng: Option<&mut impl Rng>,
    ) -> Result<[f64; 2], NumError> {
        let mut tape = Tape::new();
        let sn = tape.constant(Tensor::vector(s.to_vec()));
        let node = match rng {
            Some(r) => {
                let noise = Tensor::vector(vec![r.sample(StandardNormal), r.sample(StandardNormal)]);
                self.sample(&mut tape, sn, &noise, true)?.action
            }
            None => self.deterministic(&mut tape, sn, true)?,
        };
        let v = tape.value(node).data();
        Ok([v[0], v[1]])
    }
}
