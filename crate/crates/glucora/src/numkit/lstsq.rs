//! Least squares by Householder QR, with a hand-derived adjoint so the solve
//! can sit in the middle of a differentiated graph.
//!
//! For `x = argmin |A x - b|` with A of full column rank, differentiating the
//! normal equations `A^T A x = A^T b` gives, for an incoming adjoint `g`:
//!
//! ```text
//! z  = (A^T A)^{-1} g          (two triangular solves against R)
//! dB = A z
//! dA = r z^T - (A z) x^T,      r = b - A x
//! ```
//!
//! The residual term vanishes on consistent systems, which is why inverting
//! an exactly reconstructed output is cheap and stable; it matters during
//! training, where the target state is observed rather than reconstructed.

use super::tensor::Tensor;
use super::NumError;

/// Columns with an R-diagonal below this are treated as rank deficiency.
pub const PIVOT_THRESHOLD: f64 = 1e-10;

/// Compact Householder QR of a p x q matrix, p >= q.
pub struct LstsqFactors {
    p: usize,
    q: usize,
    /// Reflector k occupies `vs[k]` (length p - k), with coefficient `betas[k]`.
    vs: Vec<Vec<f64>>,
    betas: Vec<f64>,
    /// Upper triangle, row-major q x q.
    r: Vec<f64>,
}

impl LstsqFactors {
    /// Factors `a`; errors on rank deficiency at [`PIVOT_THRESHOLD`].
    pub fn new(a: &Tensor) -> Result<Self, NumError> {
        let (p, q) = (a.rows(), a.cols());
        assert!(p >= q, "lstsq expects a tall or square matrix, got {p}x{q}");
        let mut m = a.data().to_vec();
        let mut vs = Vec::with_capacity(q);
        let mut betas = Vec::with_capacity(q);

        for k in 0..q {
            let norm: f64 = (k..p).map(|i| m[i * q + k] * m[i * q + k]).sum::<f64>().sqrt();
            let akk = m[k * q + k];
            let alpha = if akk >= 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = (k..p).map(|i| m[i * q + k]).collect();
            v[0] -= alpha;
            let vtv: f64 = v.iter().map(|x| x * x).sum();
            let beta = if vtv > 0.0 { 2.0 / vtv } else { 0.0 };
            // Apply H = I - beta v v^T to the trailing block.
            for j in k..q {
                let dot: f64 = (k..p).map(|i| v[i - k] * m[i * q + j]).sum();
                let s = beta * dot;
                for i in k..p {
                    m[i * q + j] -= s * v[i - k];
                }
            }
            vs.push(v);
            betas.push(beta);
        }

        let mut r = vec![0.0; q * q];
        for i in 0..q {
            for j in i..q {
                r[i * q + j] = m[i * q + j];
            }
        }
        for (i, row) in r.chunks(q).enumerate() {
            let pivot = row[i].abs();
            if pivot <= PIVOT_THRESHOLD {
                return Err(NumError::RankDeficient { index: i, pivot, threshold: PIVOT_THRESHOLD });
            }
        }
        Ok(LstsqFactors { p, q, vs, betas, r })
    }

    /// First q entries of Q^T b.
    fn apply_qt(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.p);
        let mut c = b.to_vec();
        for k in 0..self.q {
            let v = &self.vs[k];
            let dot: f64 = v.iter().zip(&c[k..]).map(|(a, b)| a * b).sum();
            let s = self.betas[k] * dot;
            for (i, vi) in v.iter().enumerate() {
                c[k + i] -= s * vi;
            }
        }
        c.truncate(self.q);
        c
    }

    /// Back substitution R x = c.
    fn solve_r(&self, c: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut x = c.to_vec();
        for i in (0..q).rev() {
            for j in i + 1..q {
                x[i] -= self.r[i * q + j] * x[j];
            }
            x[i] /= self.r[i * q + i];
        }
        x
    }

    /// Forward substitution R^T y = c.
    fn solve_rt(&self, c: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut y = c.to_vec();
        for i in 0..q {
            for j in 0..i {
                y[i] -= self.r[j * q + i] * y[j];
            }
            y[i] /= self.r[i * q + i];
        }
        y
    }

    /// Solves against one rhs vector, or independently against each column
    /// of a rank-2 rhs.
    pub fn solve(&self, b: &Tensor) -> Tensor {
        if b.shape().len() == 2 {
            let cols = b.cols();
            let mut out = vec![0.0; self.q * cols];
            let mut col = vec![0.0; self.p];
            for c in 0..cols {
                for (i, ci) in col.iter_mut().enumerate() {
                    *ci = b.at(i, c);
                }
                let x = self.solve_r(&self.apply_qt(&col));
                for (i, xi) in x.iter().enumerate() {
                    out[i * cols + c] = *xi;
                }
            }
            return Tensor::new(vec![self.q, cols], out);
        }
        let c = self.apply_qt(b.data());
        Tensor::vector(self.solve_r(&c))
    }

    /// Solves (A^T A) z = g through the stored R.
    fn solve_normal(&self, g: &[f64]) -> Vec<f64> {
        self.solve_r(&self.solve_rt(g))
    }
}

/// Least-squares solution of `a x = b`.
pub fn lstsq(a: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    lstsq_values(a, b)
}

pub(crate) fn lstsq_values(a: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    let rhs_rows = if b.shape().len() == 2 { b.rows() } else { b.len() };
    assert_eq!(rhs_rows, a.rows(), "lstsq rhs of {rhs_rows} rows for {}x{}", a.rows(), a.cols());
    Ok(LstsqFactors::new(a)?.solve(b))
}

/// Adjoint of the solve; see module docs. Columns of a rank-2 rhs are
/// independent systems, so their `dA` contributions simply add. Refactoring
/// the matrix here keeps the tape ops value-only, and these systems are
/// tiny.
pub(crate) fn lstsq_backward(a: &Tensor, b: &Tensor, x: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (p, q) = (a.rows(), a.cols());
    let f = LstsqFactors::new(a).expect("matrix factored during the forward pass");
    let mut da = vec![0.0; p * q];

    if b.shape().len() == 2 {
        let cols = b.cols();
        let mut db = vec![0.0; p * cols];
        let (mut bc, mut xc, mut gc, mut dbc) = (vec![0.0; p], vec![0.0; q], vec![0.0; q], vec![0.0; p]);
        for c in 0..cols {
            for i in 0..p {
                bc[i] = b.at(i, c);
            }
            for j in 0..q {
                xc[j] = x.at(j, c);
                gc[j] = g.at(j, c);
            }
            column_adjoint(&f, a, &bc, &xc, &gc, &mut da, &mut dbc);
            for i in 0..p {
                db[i * cols + c] = dbc[i];
            }
        }
        return (Tensor::new(vec![p, q], da), Tensor::new(vec![p, cols], db));
    }

    let mut db = vec![0.0; p];
    column_adjoint(&f, a, b.data(), x.data(), g.data(), &mut da, &mut db);
    (Tensor::new(vec![p, q], da), Tensor::vector(db))
}

/// `dA` and `dB` of one rhs column; `da` accumulates, `db` is overwritten.
fn column_adjoint(f: &LstsqFactors, a: &Tensor, b: &[f64], x: &[f64], g: &[f64], da: &mut [f64], db: &mut [f64]) {
    let (p, q) = (a.rows(), a.cols());
    let z = f.solve_normal(g);
    for i in 0..p {
        let row = &a.data()[i * q..(i + 1) * q];
        let az: f64 = row.iter().zip(&z).map(|(a, z)| a * z).sum();
        let r = b[i] - row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
        db[i] = az;
        for j in 0..q {
            da[i * q + j] += r * z[j] - az * x[j];
        }
    }
}
