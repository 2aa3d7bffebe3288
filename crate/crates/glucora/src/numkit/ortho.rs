//! Exactly orthogonal weight matrices, parameterized by Householder
//! reflectors.
//!
//! A matrix constrained to `W W^T = I` could be kept orthogonal by projected
//! or penalized optimization, but then orthogonality is only as good as the
//! penalty weight and drifts as training runs. Building W as the top rows of
//! a product of reflections `H_i = I - 2 v_i v_i^T / |v_i|^2` makes the
//! constraint structural: the v_i are ordinary unconstrained parameters, the
//! product is orthogonal to machine precision no matter what the optimizer
//! does to them, and the map stays differentiable because it is composed of
//! ordinary tape ops.

use super::store::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use super::NumError;
use rand::Rng;
use rand_distr::StandardNormal;

/// Reflector norms below this are degenerate; the direction of `v/|v|` is
/// numerically meaningless long before the norm underflows.
const MIN_REFLECTOR_NORM: f64 = 1e-12;

/// A `rows x cols` matrix with exactly orthonormal rows (`rows <= cols`).
#[derive(Debug, Clone)]
pub struct OrthoParam {
    reflectors: Vec<ParamId>,
    rows: usize,
    cols: usize,
}

impl OrthoParam {
    /// Allocates `k` reflectors of length `cols` with standard normal
    /// entries. `k = cols` spans the full orthogonal group; smaller `k`
    /// restricts expressiveness but stays exactly orthogonal.
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        rows: usize,
        cols: usize,
        k: usize,
    ) -> Self {
        assert!(rows <= cols, "orthonormal rows need rows <= cols, got {rows}x{cols}");
        let reflectors = (0..k)
            .map(|i| {
                let v: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
                store.alloc(format!("{name}.v{i}"), Tensor::vector(v))
            })
            .collect();
        OrthoParam { reflectors, rows, cols }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn reflector_ids(&self) -> &[ParamId] {
        &self.reflectors
    }

    /// Records `W = top rows of H_1 H_2 ... H_k` on the tape. With `frozen`
    /// the reflectors enter as constants and no gradient flows.
    pub fn materialize(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        frozen: bool,
    ) -> Result<NodeId, NumError> {
        let eye = tape.constant(Tensor::eye(self.cols));
        let mut acc: Option<NodeId> = None;
        for (i, &vid) in self.reflectors.iter().enumerate() {
            let norm = store.value(vid).data().iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < MIN_REFLECTOR_NORM {
                return Err(NumError::DegenerateReflector { index: i, norm });
            }
            let v = if frozen { tape.frozen_param(store, vid) } else { tape.param(store, vid) };
            let vtv = tape.dot(v, v);
            let inv = tape.recip(vtv);
            let coeff = tape.scale(inv, 2.0);
            let vvt = tape.outer(v, v);
            let scaled = tape.mul_scalar(vvt, coeff);
            let h = tape.sub(eye, scaled);
            acc = Some(match acc {
                None => h,
                Some(prev) => tape.matmul(prev, h),
            });
        }
        let full = match acc {
            Some(p) => p,
            None => eye,
        };
        Ok(tape.top_rows(full, self.rows))
    }

    /// Materializes into a plain tensor, off any caller tape. Used to cache
    /// the weights of frozen models.
    pub fn materialize_value(&self, store: &ParamStore) -> Result<Tensor, NumError> {
        let mut tape = Tape::new();
        let w = self.materialize(&mut tape, store, true)?;
        Ok(tape.value(w).clone())
    }
}

/// Largest deviation of `W W^T` from the identity; the orthogonality audit.
pub fn orthogonality_defect(w: &Tensor) -> f64 {
    let (n, m) = (w.rows(), w.cols());
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for c in 0..m {
                s += w.data()[i * m + c] * w.data()[j * m + c];
            }
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((s - target).abs());
        }
    }
    worst
}
