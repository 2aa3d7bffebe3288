//! Reverse-mode autodiff tape.
//!
//! A tape is a flat arena of nodes recorded in evaluation order, which makes
//! that order topological by construction: an op can only reference nodes
//! pushed before it, so cycles cannot be expressed. `backward` walks the
//! arena once in reverse, accumulating adjoints, and adds parameter
//! gradients into the owning [`ParamStore`].
//!
//! Tapes are cheap and short-lived: build one per training step or per
//! inference call, read what you need, drop it.
//!
//! Ops are rank polymorphic where batching needs it: elementwise ops
//! broadcast a rank-1 operand across the columns of a rank-2 one, and the
//! linear, gather, slice, and solve ops accept a matrix whose columns are
//! independent samples. Code written against single vectors therefore runs
//! unchanged on a whole batch, with per-element arithmetic ordered the same
//! way in both forms.

use super::lstsq::{lstsq_backward, lstsq_values};
use super::store::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::NumError;

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    /// Tensor times rank-0 node, broadcast.
    MulScalar(NodeId, NodeId),
    Recip(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    LeakyRelu(NodeId, f64),
    Clamp(NodeId, f64, f64),
    /// A (n x m) times x (m) -> n.
    MatVec(NodeId, NodeId),
    /// A^T (m x n view of n x m) times x (n) -> m.
    MatTVec(NodeId, NodeId),
    /// A (n x k) times B (k x m) -> n x m.
    MatMul(NodeId, NodeId),
    /// x (n) outer y (m) -> n x m.
    Outer(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Sum over the rows of a rank-2 tensor: one total per column.
    ColSums(NodeId),
    /// Elementwise minimum; ties send the gradient left.
    Min(NodeId, NodeId),
    Concat(Vec<NodeId>),
    /// Contiguous range of the source's raw data, reshaped.
    RawSlice { src: NodeId, start: usize },
    Gather { src: NodeId, idx: Vec<usize> },
    /// Column subset of a rank-2 source.
    GatherCols { src: NodeId, idx: Vec<usize> },
    /// Minimum-residual solution of `a x = b`; see [`super::lstsq`].
    Lstsq { a: NodeId, b: NodeId },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records ops; see module docs.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(
            value.all_finite(),
            "non-finite value out of {:?} (node {})",
            op_name(&op),
            self.nodes.len()
        );
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Checked finiteness gate for module boundaries.
    pub fn check_finite(&self, id: NodeId, context: &str) -> Result<(), NumError> {
        if self.value(id).all_finite() {
            Ok(())
        } else {
            Err(NumError::NonFinite { context: context.to_string() })
        }
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Const)
    }

    pub fn scalar(&mut self, x: f64) -> NodeId {
        self.constant(Tensor::scalar(x))
    }

    /// Binds a parameter as a differentiable leaf. `backward` against the
    /// same store will accumulate into its gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// Binds a parameter as a plain constant: its value flows forward but no
    /// gradient is recorded. Used for frozen models.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.constant(store.value(id).clone())
    }

    /// Distinct parameter ids bound as differentiable leaves anywhere on
    /// this tape, in first-use order. Lets tests audit which weights a
    /// recorded computation actually reads.
    pub fn bound_params(&self) -> Vec<ParamId> {
        let mut seen = Vec::new();
        for n in &self.nodes {
            if let Op::Param(pid) = n.op {
                if !seen.contains(&pid) {
                    seen.push(pid);
                }
            }
        }
        seen
    }

    fn bin_elementwise(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(va.shape(), vb.shape()).unwrap_or_else(|| {
            panic!("elementwise {:?} on {:?} vs {:?}", op_name(&op), va.shape(), vb.shape())
        });
        let len: usize = shape.iter().product();
        let cols = trailing_cols(&shape);
        let data = (0..len).map(|i| f(bcast_at(va, i, len, cols), bcast_at(vb, i, len, cols))).collect();
        self.push(Tensor::new(shape, data), op)
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|x| f(*x)).collect();
        let shape = va.shape().to_vec();
        self.push(Tensor::new(shape, data), op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.bin_elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.bin_elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.bin_elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.bin_elementwise(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.bin_elementwise(a, b, f64::min, Op::Min(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, |x| x + c, Op::AddConst(a))
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        assert!(self.value(s).is_scalar(), "mul_scalar rhs must be rank 0");
        let c = self.value(s).item();
        self.map(a, |x| x * c, Op::MulScalar(a, s))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| 1.0 / x, Op::Recip(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.map(a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.map(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo <= hi);
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// `a` (n x m) times `x`: a length-m vector gives length n, and an
    /// m x c matrix of column samples gives n x c.
    pub fn matvec(&mut self, a: NodeId, x: NodeId) -> NodeId {
        let (va, vx) = (self.value(a), self.value(x));
        let (n, m) = (va.rows(), va.cols());
        if vx.shape().len() == 2 {
            assert_eq!(vx.rows(), m, "matvec: {n}x{m} times {:?}", vx.shape());
            let c = vx.cols();
            let out = matmul_data(va, vx);
            return self.push(Tensor::new(vec![n, c], out), Op::MatVec(a, x));
        }
        assert_eq!(vx.shape(), &[m], "matvec: {n}x{m} times {:?}", vx.shape());
        let mut out = vec![0.0; n];
        for i in 0..n {
            let row = &va.data()[i * m..(i + 1) * m];
            out[i] = row.iter().zip(vx.data()).map(|(a, b)| a * b).sum();
        }
        self.push(Tensor::vector(out), Op::MatVec(a, x))
    }

    /// `a^T` (m x n view of the stored n x m) times `x`: a length-n vector
    /// gives length m, and an n x c matrix of column samples gives m x c.
    pub fn mat_t_vec(&mut self, a: NodeId, x: NodeId) -> NodeId {
        let (va, vx) = (self.value(a), self.value(x));
        let (n, m) = (va.rows(), va.cols());
        if vx.shape().len() == 2 {
            assert_eq!(vx.rows(), n, "mat_t_vec: ({n}x{m})^T times {:?}", vx.shape());
            let c = vx.cols();
            let mut out = vec![0.0; m * c];
            for i in 0..n {
                let xrow = &vx.data()[i * c..(i + 1) * c];
                for j in 0..m {
                    let aij = va.data()[i * m + j];
                    let orow = &mut out[j * c..(j + 1) * c];
                    for (o, xv) in orow.iter_mut().zip(xrow) {
                        *o += aij * xv;
                    }
                }
            }
            return self.push(Tensor::new(vec![m, c], out), Op::MatTVec(a, x));
        }
        assert_eq!(vx.shape(), &[n], "mat_t_vec: ({n}x{m})^T times {:?}", vx.shape());
        let mut out = vec![0.0; m];
        for i in 0..n {
            let xi = vx.data()[i];
            for j in 0..m {
                out[j] += va.data()[i * m + j] * xi;
            }
        }
        self.push(Tensor::vector(out), Op::MatTVec(a, x))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let (n, k) = (va.rows(), va.cols());
        let (k2, m) = (vb.rows(), vb.cols());
        assert_eq!(k, k2, "matmul: {n}x{k} times {k2}x{m}");
        let out = matmul_data(va, vb);
        self.push(Tensor::new(vec![n, m], out), Op::MatMul(a, b))
    }

    pub fn outer(&mut self, x: NodeId, y: NodeId) -> NodeId {
        let (vx, vy) = (self.value(x), self.value(y));
        assert_eq!(vx.shape().len(), 1);
        assert_eq!(vy.shape().len(), 1);
        let (n, m) = (vx.len(), vy.len());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = vx.data()[i] * vy.data()[j];
            }
        }
        self.push(Tensor::new(vec![n, m], out), Op::Outer(x, y))
    }

    pub fn dot(&mut self, x: NodeId, y: NodeId) -> NodeId {
        let (vx, vy) = (self.value(x), self.value(y));
        assert_eq!(vx.shape(), vy.shape(), "dot on {:?} vs {:?}", vx.shape(), vy.shape());
        let s = vx.data().iter().zip(vy.data()).map(|(a, b)| a * b).sum();
        self.push(Tensor::scalar(s), Op::Dot(x, y))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        assert!(!v.is_empty(), "mean of empty tensor");
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Sums a rank-2 tensor over its rows, one total per column. With
    /// samples as columns this is the per-sample sum, accumulated in the
    /// same row order a per-sample `sum` would use.
    pub fn col_sums(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let (n, m) = (v.rows(), v.cols());
        let mut out = vec![0.0; m];
        for r in 0..n {
            for (o, x) in out.iter_mut().zip(&v.data()[r * m..(r + 1) * m]) {
                *o += x;
            }
        }
        self.push(Tensor::vector(out), Op::ColSums(a))
    }

    /// Concatenates vectors end to end, or stacks equal-width rank-2 parts
    /// on top of each other.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        if self.value(parts[0]).shape().len() == 2 {
            let cols = self.value(parts[0]).cols();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let v = self.value(*p);
                assert_eq!(v.shape().len(), 2, "concat mixes ranks");
                assert_eq!(v.cols(), cols, "concat of {} vs {cols} columns", v.cols());
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            return self.push(Tensor::new(vec![rows, cols], data), Op::Concat(parts.to_vec()));
        }
        let mut data = Vec::new();
        for p in parts {
            let v = self.value(*p);
            assert!(v.shape().len() <= 1, "concat mixes ranks");
            data.extend_from_slice(v.data());
        }
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    /// For a vector source, the 1-D view `data[start..start + len]`; for a
    /// rank-2 source, rows `[start, start + len)`. Both are contiguous in
    /// row-major storage, so one raw-range op backs them.
    pub fn slice(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(src);
        if v.shape().len() == 2 {
            let cols = v.cols();
            assert!(start + len <= v.rows(), "row slice [{start}, {}) of {} rows", start + len, v.rows());
            let data = v.data()[start * cols..(start + len) * cols].to_vec();
            return self.push(Tensor::new(vec![len, cols], data), Op::RawSlice { src, start: start * cols });
        }
        assert!(start + len <= v.len(), "slice [{start}, {}) of {} elements", start + len, v.len());
        let data = v.data()[start..start + len].to_vec();
        self.push(Tensor::vector(data), Op::RawSlice { src, start })
    }

    /// First `n_rows` rows of a rank-2 source.
    pub fn top_rows(&mut self, src: NodeId, n_rows: usize) -> NodeId {
        let v = self.value(src);
        let (rows, cols) = (v.rows(), v.cols());
        assert!(n_rows <= rows);
        let data = v.data()[..n_rows * cols].to_vec();
        self.push(Tensor::new(vec![n_rows, cols], data), Op::RawSlice { src, start: 0 })
    }

    /// Picks entries of a vector, or whole rows of a rank-2 source, in
    /// `idx` order. Indices may repeat; gradients of repeats accumulate.
    pub fn gather(&mut self, src: NodeId, idx: &[usize]) -> NodeId {
        let v = self.value(src);
        if v.shape().len() == 2 {
            let (rows, cols) = (v.rows(), v.cols());
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &r in idx {
                assert!(r < rows, "gather row {r} out of {rows}");
                data.extend_from_slice(&v.data()[r * cols..(r + 1) * cols]);
            }
            return self.push(Tensor::new(vec![idx.len(), cols], data), Op::Gather { src, idx: idx.to_vec() });
        }
        assert_eq!(v.shape().len(), 1, "gather needs a vector or matrix");
        let data = idx.iter().map(|&i| v.data()[i]).collect();
        self.push(Tensor::vector(data), Op::Gather { src, idx: idx.to_vec() })
    }

    pub fn gather_cols(&mut self, src: NodeId, idx: &[usize]) -> NodeId {
        let v = self.value(src);
        let (n, m) = (v.rows(), v.cols());
        let q = idx.len();
        let mut data = vec![0.0; n * q];
        for i in 0..n {
            for (j, &c) in idx.iter().enumerate() {
                assert!(c < m, "gather_cols index {c} out of {m}");
                data[i * q + j] = v.data()[i * m + c];
            }
        }
        self.push(Tensor::new(vec![n, q], data), Op::GatherCols { src, idx: idx.to_vec() })
    }

    /// Least-squares solve `argmin_x |a x - b|`. Errors if `a` is rank
    /// deficient at the pivot threshold; see [`super::lstsq`].
    pub fn lstsq(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let x = lstsq_values(self.value(a), self.value(b))?;
        Ok(self.push(x, Op::Lstsq { a, b }))
    }

    /// Accumulates d`loss`/d`param` into `store` for every parameter leaf
    /// reachable from `loss`. Repeated calls accumulate; the caller zeroes.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) -> Result<(), NumError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NumError::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        if !lv.item().is_finite() {
            return Err(NumError::NonFinite { context: "loss".to_string() });
        }

        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0]));

        for i in (0..self.nodes.len()).rev() {
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            // Ops only reference earlier nodes, so this reverse sweep visits
            // every node after all of its consumers.
            let op = self.nodes[i].op.clone();
            match op {
                Op::Const => {}
                Op::Param(pid) => store.accumulate_grad(pid, &g),
                Op::Add(a, b) => {
                    let cols = trailing_cols(g.shape());
                    self.bump_reduced(&mut adj, a, g.data(), 1.0, cols);
                    self.bump_reduced(&mut adj, b, g.data(), 1.0, cols);
                }
                Op::Sub(a, b) => {
                    let cols = trailing_cols(g.shape());
                    self.bump_reduced(&mut adj, a, g.data(), 1.0, cols);
                    self.bump_reduced(&mut adj, b, g.data(), -1.0, cols);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (len, cols) = (g.len(), trailing_cols(g.shape()));
                    let da: Vec<f64> = (0..len).map(|k| g.data()[k] * bcast_at(vb, k, len, cols)).collect();
                    let db: Vec<f64> = (0..len).map(|k| g.data()[k] * bcast_at(va, k, len, cols)).collect();
                    self.bump_reduced(&mut adj, a, &da, 1.0, cols);
                    self.bump_reduced(&mut adj, b, &db, 1.0, cols);
                }
                Op::Div(a, b) => {
                    let vb = &self.nodes[b.0].value;
                    let out = &self.nodes[i].value;
                    let (len, cols) = (g.len(), trailing_cols(g.shape()));
                    let da: Vec<f64> = (0..len).map(|k| g.data()[k] / bcast_at(vb, k, len, cols)).collect();
                    let db: Vec<f64> = (0..len)
                        .map(|k| -g.data()[k] * out.data()[k] / bcast_at(vb, k, len, cols))
                        .collect();
                    self.bump_reduced(&mut adj, a, &da, 1.0, cols);
                    self.bump_reduced(&mut adj, b, &db, 1.0, cols);
                }
                Op::Neg(a) => self.bump(&mut adj, a, g.data(), -1.0),
                Op::Scale(a, c) => self.bump(&mut adj, a, g.data(), c),
                Op::AddConst(a) => self.bump(&mut adj, a, g.data(), 1.0),
                Op::MulScalar(a, s) => {
                    let c = self.nodes[s.0].value.item();
                    self.bump(&mut adj, a, g.data(), c);
                    let ds: f64 = g.data().iter().zip(self.nodes[a.0].value.data()).map(|(g, x)| g * x).sum();
                    self.bump(&mut adj, s, &[ds], 1.0);
                }
                Op::Recip(a) => {
                    let out = &self.nodes[i].value;
                    let da: Vec<f64> = g.data().iter().zip(out.data()).map(|(g, o)| -g * o * o).collect();
                    self.bump(&mut adj, a, &da, 1.0);
                }
                Op::Exp(a) => {
                    let out = &self.nodes[i].value;
                    let da: Vec<f64> = g.data().iter().zip(out.data()).map(|(g, o)| g * o).collect();
                    self.bump(&mut adj, a, &da, 1.0);
                }
                Op::Log(a) => {
                    let va = &self.nodes[a.0].value;
                    let da: Vec<f64> = g.data().iter().zip(va.data()).map(|(g, x)| g / x).collect();
                    self.bump(&mut adj, a, &da, 1.0);
                }
                Op::Tanh(a) => {
                    let out = &self.nodes[i].value;
                    let da: Vec<f64> = g.data().iter().zip(out.data()).map(|(g, o)| g * (1.0 - o * o)).collect();
                    self.bump(&mut adj, a, &da, 1.0);
                }
                Op::Softplus(a) => {
                    let va = &self.nodes[a.0].value;
                    let da: Vec<f64> = g.data().iter().zip(va.data()).map(|(g, x)| g * sigmoid(*x)).collect();
                    self.bump(&mut adj, a, &da, 1.0);
                }
                Op::LeakyRelu(a, slope) => {
                    let va = &self.nodes[a.0].value;
                    let da: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(g, x)| if *x > 0.0 { *g } else { g * slope })
                        .collect();
                    self.bump(&mut adj, a, &da, 1.0);
                }
                Op::Clamp(a, lo, hi) => {
                    let va = &self.nodes[a.0].value;
                    let da: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(g, x)| if *x >= lo && *x <= hi { *g } else { 0.0 })
                        .collect();
                    self.bump(&mut adj, a, &da, 1.0);
                }
                Op::MatVec(a, x) => {
                    let va = &self.nodes[a.0].value;
                    let vx = &self.nodes[x.0].value;
                    if vx.shape().len() == 2 {
                        let (da, dx) = matmul_adjoints(va, vx, &g);
                        self.bump(&mut adj, a, &da, 1.0);
                        self.bump(&mut adj, x, &dx, 1.0);
                    } else {
                        let (n, m) = (va.rows(), va.cols());
                        let mut da = vec![0.0; n * m];
                        let mut dx = vec![0.0; m];
                        for r in 0..n {
                            let gr = g.data()[r];
                            for c in 0..m {
                                da[r * m + c] = gr * vx.data()[c];
                                dx[c] += va.data()[r * m + c] * gr;
                            }
                        }
                        self.bump(&mut adj, a, &da, 1.0);
                        self.bump(&mut adj, x, &dx, 1.0);
                    }
                }
                Op::MatTVec(a, x) => {
                    let va = &self.nodes[a.0].value;
                    let vx = &self.nodes[x.0].value;
                    let (n, m) = (va.rows(), va.cols());
                    if vx.shape().len() == 2 {
                        // y = A^T X: dX = A g, dA[i][j] = x_i . g_j over columns
                        let cols = vx.cols();
                        let dx = matmul_data(va, &g);
                        let mut da = vec![0.0; n * m];
                        for r in 0..n {
                            let xrow = &vx.data()[r * cols..(r + 1) * cols];
                            for c in 0..m {
                                let grow = &g.data()[c * cols..(c + 1) * cols];
                                da[r * m + c] = xrow.iter().zip(grow).map(|(x, g)| x * g).sum();
                            }
                        }
                        self.bump(&mut adj, a, &da, 1.0);
                        self.bump(&mut adj, x, &dx, 1.0);
                    } else {
                        let mut da = vec![0.0; n * m];
                        let mut dx = vec![0.0; n];
                        for r in 0..n {
                            let xr = vx.data()[r];
                            for c in 0..m {
                                da[r * m + c] = xr * g.data()[c];
                                dx[r] += va.data()[r * m + c] * g.data()[c];
                            }
                        }
                        self.bump(&mut adj, a, &da, 1.0);
                        self.bump(&mut adj, x, &dx, 1.0);
                    }
                }
                Op::MatMul(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let (da, db) = matmul_adjoints(va, vb, &g);
                    self.bump(&mut adj, a, &da, 1.0);
                    self.bump(&mut adj, b, &db, 1.0);
                }
                Op::Outer(x, y) => {
                    let vx = &self.nodes[x.0].value;
                    let vy = &self.nodes[y.0].value;
                    let (n, m) = (vx.len(), vy.len());
                    let mut dx = vec![0.0; n];
                    let mut dy = vec![0.0; m];
                    for r in 0..n {
                        for c in 0..m {
                            dx[r] += g.data()[r * m + c] * vy.data()[c];
                            dy[c] += g.data()[r * m + c] * vx.data()[r];
                        }
                    }
                    self.bump(&mut adj, x, &dx, 1.0);
                    self.bump(&mut adj, y, &dy, 1.0);
                }
                Op::Dot(x, y) => {
                    let gs = g.item();
                    let dx: Vec<f64> = self.nodes[y.0].value.data().iter().map(|v| gs * v).collect();
                    let dy: Vec<f64> = self.nodes[x.0].value.data().iter().map(|v| gs * v).collect();
                    self.bump(&mut adj, x, &dx, 1.0);
                    self.bump(&mut adj, y, &dy, 1.0);
                }
                Op::Sum(a) => {
                    let gs = g.item();
                    let da = vec![gs; self.nodes[a.0].value.len()];
                    self.bump(&mut adj, a, &da, 1.0);
                }
                Op::Mean(a) => {
                    let len = self.nodes[a.0].value.len();
                    let gs = g.item() / len as f64;
                    let da = vec![gs; len];
                    self.bump(&mut adj, a, &da, 1.0);
                }
                Op::ColSums(a) => {
                    let rows = self.nodes[a.0].value.rows();
                    let mut da = Vec::with_capacity(rows * g.len());
                    for _ in 0..rows {
                        da.extend_from_slice(g.data());
                    }
                    self.bump(&mut adj, a, &da, 1.0);
                }
                Op::Min(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (len, cols) = (g.len(), trailing_cols(g.shape()));
                    let smaller_left: Vec<bool> =
                        (0..len).map(|k| bcast_at(va, k, len, cols) <= bcast_at(vb, k, len, cols)).collect();
                    let da: Vec<f64> =
                        (0..len).map(|k| if smaller_left[k] { g.data()[k] } else { 0.0 }).collect();
                    let db: Vec<f64> =
                        (0..len).map(|k| if smaller_left[k] { 0.0 } else { g.data()[k] }).collect();
                    self.bump_reduced(&mut adj, a, &da, 1.0, cols);
                    self.bump_reduced(&mut adj, b, &db, 1.0, cols);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        let dp = &g.data()[offset..offset + len];
                        self.bump(&mut adj, p, dp, 1.0);
                        offset += len;
                    }
                }
                Op::RawSlice { src, start } => {
                    let src_len = self.nodes[src.0].value.len();
                    let mut ds = vec![0.0; src_len];
                    ds[start..start + g.len()].copy_from_slice(g.data());
                    self.bump(&mut adj, src, &ds, 1.0);
                }
                Op::Gather { src, idx } => {
                    let vs = &self.nodes[src.0].value;
                    let mut ds = vec![0.0; vs.len()];
                    if vs.shape().len() == 2 {
                        let cols = vs.cols();
                        for (k, &r) in idx.iter().enumerate() {
                            for c in 0..cols {
                                ds[r * cols + c] += g.data()[k * cols + c];
                            }
                        }
                    } else {
                        for (k, &j) in idx.iter().enumerate() {
                            ds[j] += g.data()[k];
                        }
                    }
                    self.bump(&mut adj, src, &ds, 1.0);
                }
                Op::GatherCols { src, idx } => {
                    let vs = &self.nodes[src.0].value;
                    let (n, m) = (vs.rows(), vs.cols());
                    let q = idx.len();
                    let mut ds = vec![0.0; n * m];
                    for r in 0..n {
                        for (j, &c) in idx.iter().enumerate() {
                            ds[r * m + c] += g.data()[r * q + j];
                        }
                    }
                    self.bump(&mut adj, src, &ds, 1.0);
                }
                Op::Lstsq { a, b } => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let x = &self.nodes[i].value;
                    let (da, db) = lstsq_backward(va, vb, x, &g);
                    self.bump(&mut adj, a, da.data(), 1.0);
                    self.bump(&mut adj, b, db.data(), 1.0);
                }
            }
        }
        Ok(())
    }

    fn bump(&self, adj: &mut [Option<Tensor>], target: NodeId, delta: &[f64], scale: f64) {
        let slot = &mut adj[target.0];
        match slot {
            Some(t) => {
                for (g, d) in t.data_mut().iter_mut().zip(delta) {
                    *g += scale * d;
                }
            }
            None => {
                let shape = self.nodes[target.0].value.shape().to_vec();
                let data = delta.iter().map(|d| scale * d).collect();
                *slot = Some(Tensor::new(shape, data));
            }
        }
    }

    /// Like [`Self::bump`], but first sums `delta` across columns when the
    /// target is a rank-1 operand that was broadcast to `delta`'s shape.
    fn bump_reduced(&self, adj: &mut [Option<Tensor>], target: NodeId, delta: &[f64], scale: f64, cols: usize) {
        let tlen = self.nodes[target.0].value.len();
        if tlen == delta.len() {
            self.bump(adj, target, delta, scale);
        } else {
            let mut summed = vec![0.0; tlen];
            for (k, d) in delta.iter().enumerate() {
                summed[k / cols] += d;
            }
            self.bump(adj, target, &summed, scale);
        }
    }
}

/// Shape of an elementwise op over `sa` and `sb`: equal shapes pass
/// through, and a rank-1 [n] operand broadcasts across the columns of a
/// rank-2 [n, c] operand.
fn broadcast_shape(sa: &[usize], sb: &[usize]) -> Option<Vec<usize>> {
    if sa == sb {
        return Some(sa.to_vec());
    }
    match (sa, sb) {
        ([n], [r, c]) | ([r, c], [n]) if n == r => Some(vec![*r, *c]),
        _ => None,
    }
}

/// Column count an elementwise output spreads a broadcast over: 1 below
/// rank 2.
fn trailing_cols(shape: &[usize]) -> usize {
    if shape.len() == 2 {
        shape[1]
    } else {
        1
    }
}

/// Operand element behind flat output index `i`: direct for a full-size
/// operand, row-indexed for a rank-1 operand broadcast across `cols`.
fn bcast_at(v: &Tensor, i: usize, out_len: usize, cols: usize) -> f64 {
    if v.len() == out_len {
        v.data()[i]
    } else {
        v.data()[i / cols]
    }
}

/// Row-major values of `a` (n x k) times `b` (k x m). Exact zeros in `a`
/// are skipped; block-structured mixing matrices are mostly zeros.
fn matmul_data(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, k) = (a.rows(), a.cols());
    let m = b.cols();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for l in 0..k {
            let ail = a.data()[i * k + l];
            if ail == 0.0 {
                continue;
            }
            let brow = &b.data()[l * m..(l + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += ail * brow[j];
            }
        }
    }
    out
}

/// Adjoints of `c = a b`: `da = g b^T`, `db = a^T g`.
fn matmul_adjoints(a: &Tensor, b: &Tensor, g: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, k) = (a.rows(), a.cols());
    let m = b.cols();
    let mut da = vec![0.0; n * k];
    let mut db = vec![0.0; k * m];
    for i in 0..n {
        for l in 0..k {
            let mut s = 0.0;
            for j in 0..m {
                s += g.data()[i * m + j] * b.data()[l * m + j];
            }
            da[i * k + l] = s;
        }
    }
    for l in 0..k {
        for j in 0..m {
            let mut s = 0.0;
            for i in 0..n {
                s += a.data()[i * k + l] * g.data()[i * m + j];
            }
            db[l * m + j] = s;
        }
    }
    (da, db)
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow on either tail.
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Const => "const",
        Op::Param(_) => "param",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Neg(..) => "neg",
        Op::Scale(..) => "scale",
        Op::AddConst(..) => "add_const",
        Op::MulScalar(..) => "mul_scalar",
        Op::Recip(..) => "recip",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Tanh(..) => "tanh",
        Op::Softplus(..) => "softplus",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Clamp(..) => "clamp",
        Op::MatVec(..) => "matvec",
        Op::MatTVec(..) => "mat_t_vec",
        Op::MatMul(..) => "matmul",
        Op::Outer(..) => "outer",
        Op::Dot(..) => "dot",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::ColSums(..) => "col_sums",
        Op::Min(..) => "min",
        Op::Concat(..) => "concat",
        Op::RawSlice { .. } => "slice",
        Op::Gather { .. } => "gather",
        Op::GatherCols { .. } => "gather_cols",
        Op::Lstsq { .. } => "lstsq",
    }
}
