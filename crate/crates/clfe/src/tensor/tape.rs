use std::rc::Rc;

use super::{shape_str, Tensor, TensorError};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// Forward-pass mode; batch normalization behaves differently per phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Square sparse matrix in CSR form. Used for normalized adjacencies.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    pub offsets: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn matmul_dense(&self, x: &Tensor) -> Tensor {
        let d = x.cols();
        let mut out = Tensor::zeros(self.n, d);
        for i in 0..self.n {
            for k in self.offsets[i]..self.offsets[i + 1] {
                let j = self.cols[k];
                let v = self.vals[k];
                for c in 0..d {
                    out.data_mut()[i * d + c] += v * x.data()[j * d + c];
                }
            }
        }
        out
    }

    pub fn value_at(&self, i: usize, j: usize) -> Option<f64> {
        let lo = self.offsets[i];
        let hi = self.offsets[i + 1];
        let pos = self.cols[lo..hi].binary_search(&j).ok()?;
        Some(self.vals[lo + pos])
    }
}

/// Running statistics for batch normalization (momentum 0.1, eps 1e-5).
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(dim: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Mean over row segments, with the list of segments that were empty.
pub struct SegmentMean {
    pub id: TensorId,
    pub empty_segments: Vec<usize>,
}

#[derive(Clone, Copy)]
enum Unary {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Exp,
    Neg,
    Scale(f64),
    AddScalar(f64),
    /// y = 1/sqrt(x + c)
    RsqrtShift(f64),
}

#[derive(Clone)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    SpmmSym { adj: Rc<SparseMatrix>, x: usize },
    ConcatCols { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    AddRow { x: usize, row: usize },
    SubRow { x: usize, row: usize },
    MulRow { x: usize, row: usize },
    MulCol { x: usize, col: usize },
    Unary { x: usize, kind: Unary },
    GatherRows { x: usize, idx: Rc<Vec<usize>> },
    ScatterAdd { x: usize, dst: Rc<Vec<usize>> },
    SegmentSoftmax { scores: usize, seg: Rc<Vec<usize>> },
    MeanRows { x: usize },
    SumRows { x: usize },
    SumCols { x: usize },
    SumAll { x: usize },
    MeanSegments { x: usize, seg: Rc<Vec<usize>>, counts: Rc<Vec<usize>> },
    CrossEntropy { logits: usize, labels: Rc<Vec<usize>>, weights: Option<Rc<Vec<f64>>> },
    L1 { pred: usize, target: usize },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Operation tape. Nodes are appended in topological order, so inputs always
/// precede the records that consume them; backward walks the records once in
/// reverse. One tape serves one forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Records a tensor that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.push(value, false, Op::Leaf)
    }

    /// Records a learnable leaf; `backward` fills its gradient.
    pub fn param(&mut self, value: Tensor) -> TensorId {
        self.push(value, true, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> TensorId {
        debug_assert!(
            value.is_finite(),
            "non-finite value produced on the tape ({})",
            value.shape_str()
        );
        let id = self.nodes.len();
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        TensorId(id)
    }

    fn record(&mut self, value: Tensor, inputs: &[usize], op: Op) -> TensorId {
        let requires = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push(value, requires, op)
    }

    fn check_same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<(), TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(TensorError::DimMismatch {
                op,
                lhs: ta.shape_str(),
                rhs: tb.shape_str(),
            });
        }
        Ok(())
    }

    fn check_row_vec(&self, op: &'static str, x: TensorId, row: TensorId) -> Result<(), TensorError> {
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.rows() != 1 || tr.cols() != tx.cols() {
            return Err(TensorError::DimMismatch {
                op,
                lhs: tx.shape_str(),
                rhs: tr.shape_str(),
            });
        }
        Ok(())
    }

    // ---- binary elementwise ----

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.check_same_shape("add", a, b)?;
        let v = self.zip(a, b, |x, y| x + y);
        Ok(self.record(v, &[a.0, b.0], Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.check_same_shape("sub", a, b)?;
        let v = self.zip(a, b, |x, y| x - y);
        Ok(self.record(v, &[a.0, b.0], Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.check_same_shape("mul", a, b)?;
        let v = self.zip(a, b, |x, y| x * y);
        Ok(self.record(v, &[a.0, b.0], Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.check_same_shape("div", a, b)?;
        let v = self.zip(a, b, |x, y| x / y);
        Ok(self.record(v, &[a.0, b.0], Op::Div { a: a.0, b: b.0 }))
    }

    fn zip(&self, a: TensorId, b: TensorId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.rows(), ta.cols(), data)
    }

    // ---- row/column broadcasts ----

    /// x + row, broadcast over rows (bias add).
    pub fn add_row(&mut self, x: TensorId, row: TensorId) -> Result<TensorId, TensorError> {
        self.check_row_vec("add_row", x, row)?;
        let v = self.broadcast_row(x, row, |a, b| a + b);
        Ok(self.record(v, &[x.0, row.0], Op::AddRow { x: x.0, row: row.0 }))
    }

    pub fn sub_row(&mut self, x: TensorId, row: TensorId) -> Result<TensorId, TensorError> {
        self.check_row_vec("sub_row", x, row)?;
        let v = self.broadcast_row(x, row, |a, b| a - b);
        Ok(self.record(v, &[x.0, row.0], Op::SubRow { x: x.0, row: row.0 }))
    }

    pub fn mul_row(&mut self, x: TensorId, row: TensorId) -> Result<TensorId, TensorError> {
        self.check_row_vec("mul_row", x, row)?;
        let v = self.broadcast_row(x, row, |a, b| a * b);
        Ok(self.record(v, &[x.0, row.0], Op::MulRow { x: x.0, row: row.0 }))
    }

    fn broadcast_row(&self, x: TensorId, row: TensorId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (tx, tr) = (self.value(x), self.value(row));
        let (n, d) = (tx.rows(), tx.cols());
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                data.push(f(tx.data()[i * d + j], tr.data()[j]));
            }
        }
        Tensor::new(n, d, data)
    }

    /// x * col, broadcast over columns (per-row scaling).
    pub fn mul_col(&mut self, x: TensorId, col: TensorId) -> Result<TensorId, TensorError> {
        let (tx, tc) = (self.value(x), self.value(col));
        if tc.cols() != 1 || tc.rows() != tx.rows() {
            return Err(TensorError::DimMismatch {
                op: "mul_col",
                lhs: tx.shape_str(),
                rhs: tc.shape_str(),
            });
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            let s = tc.data()[i];
            for j in 0..d {
                data.push(tx.data()[i * d + j] * s);
            }
        }
        let v = Tensor::new(n, d, data);
        Ok(self.record(v, &[x.0, col.0], Op::MulCol { x: x.0, col: col.0 }))
    }

    // ---- unary ----

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        self.unary(x, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, x: TensorId, alpha: f64) -> TensorId {
        self.unary(x, Unary::LeakyRelu(alpha))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        self.unary(x, Unary::Tanh)
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        self.unary(x, Unary::Exp)
    }

    pub fn neg(&mut self, x: TensorId) -> TensorId {
        self.unary(x, Unary::Neg)
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        self.unary(x, Unary::Scale(c))
    }

    pub fn add_scalar(&mut self, x: TensorId, c: f64) -> TensorId {
        self.unary(x, Unary::AddScalar(c))
    }

    /// 1/sqrt(x + c); used for normalization denominators.
    pub fn rsqrt_shift(&mut self, x: TensorId, c: f64) -> TensorId {
        self.unary(x, Unary::RsqrtShift(c))
    }

    fn unary(&mut self, x: TensorId, kind: Unary) -> TensorId {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| apply_unary(kind, v)).collect();
        let v = Tensor::new(tx.rows(), tx.cols(), data);
        self.record(v, &[x.0], Op::Unary { x: x.0, kind })
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(TensorError::DimMismatch {
                op: "matmul",
                lhs: ta.shape_str(),
                rhs: tb.shape_str(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ta.data()[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += av * tb.data()[p * n + j];
                }
            }
        }
        let v = Tensor::new(m, n, out);
        Ok(self.record(v, &[a.0, b.0], Op::Matmul { a: a.0, b: b.0 }))
    }

    /// Sparse-dense product `S·x` for a symmetric `S` (the backward pass
    /// reuses `S` in place of its transpose).
    pub fn spmm_sym(&mut self, adj: Rc<SparseMatrix>, x: TensorId) -> Result<TensorId, TensorError> {
        let tx = self.value(x);
        if adj.n != tx.rows() {
            return Err(TensorError::DimMismatch {
                op: "spmm_sym",
                lhs: shape_str(adj.n, adj.n),
                rhs: tx.shape_str(),
            });
        }
        let v = adj.matmul_dense(tx);
        Ok(self.record(v, &[x.0], Op::SpmmSym { adj, x: x.0 }))
    }

    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(TensorError::DimMismatch {
                op: "concat_cols",
                lhs: ta.shape_str(),
                rhs: tb.shape_str(),
            });
        }
        let (n, p, q) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            data.extend_from_slice(ta.row_slice(i));
            data.extend_from_slice(tb.row_slice(i));
        }
        let v = Tensor::new(n, p + q, data);
        Ok(self.record(v, &[a.0, b.0], Op::ConcatCols { a: a.0, b: b.0 }))
    }

    // ---- index ops ----

    pub fn gather_rows(&mut self, x: TensorId, idx: Rc<Vec<usize>>) -> Result<TensorId, TensorError> {
        let tx = self.value(x);
        let d = tx.cols();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            if i >= tx.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: tx.rows(),
                });
            }
            data.extend_from_slice(tx.row_slice(i));
        }
        let v = Tensor::new(idx.len(), d, data);
        Ok(self.record(v, &[x.0], Op::GatherRows { x: x.0, idx }))
    }

    /// Row `i` of the result is the sum of input rows whose `dst` is `i`,
    /// accumulated in ascending edge index for determinism.
    pub fn scatter_add(
        &mut self,
        x: TensorId,
        dst: Rc<Vec<usize>>,
        n: usize,
    ) -> Result<TensorId, TensorError> {
        let tx = self.value(x);
        if dst.len() != tx.rows() {
            return Err(TensorError::IndexLength {
                op: "scatter_add",
                expected: tx.rows(),
                found: dst.len(),
            });
        }
        let d = tx.cols();
        let mut out = Tensor::zeros(n, d);
        for (e, &i) in dst.iter().enumerate() {
            if i >= n {
                return Err(TensorError::IndexOutOfRange { op: "scatter_add", index: i, bound: n });
            }
            for c in 0..d {
                out.data_mut()[i * d + c] += tx.data()[e * d + c];
            }
        }
        Ok(self.record(out, &[x.0], Op::ScatterAdd { x: x.0, dst }))
    }

    /// Softmax computed independently within each destination segment,
    /// max-subtracted for stability. `scores` must be Ex1.
    pub fn segment_softmax(
        &mut self,
        scores: TensorId,
        seg: Rc<Vec<usize>>,
        n_segments: usize,
    ) -> Result<TensorId, TensorError> {
        let ts = self.value(scores);
        if ts.cols() != 1 {
            return Err(TensorError::DimMismatch {
                op: "segment_softmax",
                lhs: ts.shape_str(),
                rhs: shape_str(ts.rows(), 1),
            });
        }
        if seg.len() != ts.rows() {
            return Err(TensorError::IndexLength {
                op: "segment_softmax",
                expected: ts.rows(),
                found: seg.len(),
            });
        }
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (e, &s) in seg.iter().enumerate() {
            if s >= n_segments {
                return Err(TensorError::IndexOutOfRange {
                    op: "segment_softmax",
                    index: s,
                    bound: n_segments,
                });
            }
            max[s] = max[s].max(ts.data()[e]);
        }
        let mut expd = vec![0.0; seg.len()];
        let mut sums = vec![0.0; n_segments];
        for (e, &s) in seg.iter().enumerate() {
            let v = (ts.data()[e] - max[s]).exp();
            expd[e] = v;
            sums[s] += v;
        }
        for (e, &s) in seg.iter().enumerate() {
            expd[e] /= sums[s];
        }
        let v = Tensor::col(&expd);
        Ok(self.record(v, &[scores.0], Op::SegmentSoftmax { scores: scores.0, seg }))
    }

    // ---- reductions ----

    /// Mean over rows: NxD -> 1xD.
    pub fn mean_rows(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let tx = self.value(x);
        if tx.rows() == 0 {
            return Err(TensorError::EmptyBatch);
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += tx.data()[i * d + j];
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        let v = Tensor::row(&out);
        Ok(self.record(v, &[x.0], Op::MeanRows { x: x.0 }))
    }

    /// Sum over rows: NxD -> 1xD.
    pub fn sum_rows(&mut self, x: TensorId) -> TensorId {
        let tx = self.value(x);
        let (n, d) = (tx.rows(), tx.cols());
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += tx.data()[i * d + j];
            }
        }
        let v = Tensor::row(&out);
        self.record(v, &[x.0], Op::SumRows { x: x.0 })
    }

    /// Row-wise sum: NxD -> Nx1.
    pub fn sum_cols(&mut self, x: TensorId) -> TensorId {
        let tx = self.value(x);
        let (n, d) = (tx.rows(), tx.cols());
        let mut out = vec![0.0; n];
        for i in 0..n {
            for j in 0..d {
                out[i] += tx.data()[i * d + j];
            }
        }
        let v = Tensor::col(&out);
        self.record(v, &[x.0], Op::SumCols { x: x.0 })
    }

    /// Sum of every element: NxD -> 1x1.
    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let tx = self.value(x);
        let total: f64 = tx.data().iter().sum();
        let v = Tensor::scalar(total);
        self.record(v, &[x.0], Op::SumAll { x: x.0 })
    }

    /// Per-segment mean of rows: NxD with seg: N -> GxD. Empty segments get a
    /// zero row and are reported in [`SegmentMean::empty_segments`].
    pub fn mean_segments(
        &mut self,
        x: TensorId,
        seg: Rc<Vec<usize>>,
        n_segments: usize,
    ) -> Result<SegmentMean, TensorError> {
        let tx = self.value(x);
        if seg.len() != tx.rows() {
            return Err(TensorError::IndexLength {
                op: "mean_segments",
                expected: tx.rows(),
                found: seg.len(),
            });
        }
        let d = tx.cols();
        let mut counts = vec![0usize; n_segments];
        for &s in seg.iter() {
            if s >= n_segments {
                return Err(TensorError::IndexOutOfRange {
                    op: "mean_segments",
                    index: s,
                    bound: n_segments,
                });
            }
            counts[s] += 1;
        }
        let mut out = Tensor::zeros(n_segments, d);
        for (i, &s) in seg.iter().enumerate() {
            for j in 0..d {
                out.data_mut()[s * d + j] += tx.data()[i * d + j];
            }
        }
        for s in 0..n_segments {
            if counts[s] > 0 {
                for j in 0..d {
                    out.data_mut()[s * d + j] /= counts[s] as f64;
                }
            }
        }
        let empty_segments: Vec<usize> =
            counts.iter().enumerate().filter(|(_, &c)| c == 0).map(|(s, _)| s).collect();
        let counts = Rc::new(counts);
        let id = self.record(out, &[x.0], Op::MeanSegments { x: x.0, seg, counts });
        Ok(SegmentMean { id, empty_segments })
    }

    // ---- normalization ----

    /// Batch normalization over rows. Training mode normalizes by the batch
    /// mean and population variance and updates `state`'s running statistics;
    /// eval mode normalizes by the running statistics.
    pub fn batch_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        state: &mut BatchNormState,
        phase: Phase,
    ) -> Result<TensorId, TensorError> {
        self.check_row_vec("batch_norm", x, gamma)?;
        self.check_row_vec("batch_norm", x, beta)?;
        let d = self.value(x).cols();
        if state.running_mean.len() != d {
            return Err(TensorError::DimMismatch {
                op: "batch_norm",
                lhs: self.value(x).shape_str(),
                rhs: shape_str(1, state.running_mean.len()),
            });
        }
        match phase {
            Phase::Train => {
                let n = self.value(x).rows();
                if n == 0 {
                    return Err(TensorError::EmptyBatch);
                }
                let mu = self.mean_rows(x)?;
                let xc = self.sub_row(x, mu)?;
                let sq = self.mul(xc, xc)?;
                let var = self.mean_rows(sq)?;
                let inv = self.rsqrt_shift(var, state.eps);
                let xn = self.mul_row(xc, inv)?;
                let scaled = self.mul_row(xn, gamma)?;
                let out = self.add_row(scaled, beta)?;
                let m = state.momentum;
                for j in 0..d {
                    state.running_mean[j] =
                        (1.0 - m) * state.running_mean[j] + m * self.value(mu).data()[j];
                    state.running_var[j] =
                        (1.0 - m) * state.running_var[j] + m * self.value(var).data()[j];
                }
                Ok(out)
            }
            Phase::Eval => {
                let mean = self.constant(Tensor::row(&state.running_mean));
                let inv: Vec<f64> =
                    state.running_var.iter().map(|&v| 1.0 / (v + state.eps).sqrt()).collect();
                let inv = self.constant(Tensor::row(&inv));
                let xc = self.sub_row(x, mean)?;
                let xn = self.mul_row(xc, inv)?;
                let scaled = self.mul_row(xn, gamma)?;
                self.add_row(scaled, beta)
            }
        }
    }

    // ---- losses ----

    /// Mean cross-entropy over rows from raw logits. With class weights, each
    /// row's loss is scaled by its label's weight before the mean.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: TensorId,
        labels: Rc<Vec<usize>>,
        weights: Option<Rc<Vec<f64>>>,
    ) -> Result<TensorId, TensorError> {
        let tl = self.value(logits);
        let (n, c) = (tl.rows(), tl.cols());
        if labels.len() != n {
            return Err(TensorError::IndexLength {
                op: "softmax_cross_entropy",
                expected: n,
                found: labels.len(),
            });
        }
        if let Some(w) = &weights {
            if w.len() != c {
                return Err(TensorError::WeightLength { expected: c, found: w.len() });
            }
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(TensorError::LabelOutOfRange { label: y, classes: c });
            }
            let row = tl.row_slice(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
            let li = lse + m - row[y];
            let w = weights.as_ref().map_or(1.0, |w| w[y]);
            total += w * li;
        }
        let v = Tensor::scalar(total / n as f64);
        Ok(self.record(v, &[logits.0], Op::CrossEntropy { logits: logits.0, labels, weights }))
    }

    /// Mean absolute error between two same-shape tensors.
    pub fn l1_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId, TensorError> {
        self.check_same_shape("l1_loss", pred, target)?;
        let (tp, tt) = (self.value(pred), self.value(target));
        let n = tp.numel() as f64;
        let total: f64 = tp.data().iter().zip(tt.data()).map(|(&a, &b)| (a - b).abs()).sum();
        let v = Tensor::scalar(total / n);
        Ok(self.record(v, &[pred.0, target.0], Op::L1 { pred: pred.0, target: target.0 }))
    }

    // ---- backward ----

    /// Accumulates d(loss)/d(node) into every gradient-requiring node
    /// reachable from `loss`. Errors on a non-scalar loss or a second call.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let lv = self.value(loss);
        if lv.rows() != 1 || lv.cols() != 1 {
            return Err(TensorError::NonScalarLoss { shape: lv.shape_str() });
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = self.nodes[i].grad.take() else { continue };
            let op = self.nodes[i].op.clone();
            self.propagate(&op, &gout, i);
            self.nodes[i].grad = Some(gout);
        }
        Ok(())
    }

    fn accumulate(&mut self, input: usize, delta: Tensor) {
        let node = &mut self.nodes[input];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gv += dv;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    fn propagate(&mut self, op: &Op, g: &Tensor, out_idx: usize) {
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G * B^T
                let mut da = Tensor::zeros(m, k);
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g.data()[i * n + j] * tb.data()[p * n + j];
                        }
                        da.data_mut()[i * k + p] = s;
                    }
                }
                // dB = A^T * G
                let mut db = Tensor::zeros(k, n);
                for p in 0..k {
                    for i in 0..m {
                        let av = ta.data()[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db.data_mut()[p * n + j] += av * g.data()[i * n + j];
                        }
                    }
                }
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::SpmmSym { adj, x } => {
                let dx = adj.matmul_dense(g);
                self.accumulate(*x, dx);
            }
            Op::ConcatCols { a, b } => {
                let p = self.nodes[*a].value.cols();
                let (da, db) = g.split_cols(p);
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Add { a, b } => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Sub { a, b } => {
                self.accumulate(*a, g.clone());
                let neg = Tensor::new(g.rows(), g.cols(), g.data().iter().map(|&v| -v).collect());
                self.accumulate(*b, neg);
            }
            Op::Mul { a, b } => {
                let da = {
                    let tb = &self.nodes[*b].value;
                    Tensor::new(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(tb.data()).map(|(&gv, &bv)| gv * bv).collect(),
                    )
                };
                let db = {
                    let ta = &self.nodes[*a].value;
                    Tensor::new(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(ta.data()).map(|(&gv, &av)| gv * av).collect(),
                    )
                };
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Div { a, b } => {
                let (da, db) = {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let da: Vec<f64> =
                        g.data().iter().zip(tb.data()).map(|(&gv, &bv)| gv / bv).collect();
                    let db: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(ta.data().iter().zip(tb.data()))
                        .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                        .collect();
                    (
                        Tensor::new(g.rows(), g.cols(), da),
                        Tensor::new(g.rows(), g.cols(), db),
                    )
                };
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::AddRow { x, row } | Op::SubRow { x, row } => {
                let sign = if matches!(op, Op::AddRow { .. }) { 1.0 } else { -1.0 };
                let d = g.cols();
                let mut drow = vec![0.0; d];
                for i in 0..g.rows() {
                    for j in 0..d {
                        drow[j] += sign * g.data()[i * d + j];
                    }
                }
                self.accumulate(*x, g.clone());
                self.accumulate(*row, Tensor::row(&drow));
            }
            Op::MulRow { x, row } => {
                let (dx, drow) = {
                    let (tx, tr) = (&self.nodes[*x].value, &self.nodes[*row].value);
                    let (n, d) = (tx.rows(), tx.cols());
                    let mut dx = Tensor::zeros(n, d);
                    let mut drow = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            let gv = g.data()[i * d + j];
                            dx.data_mut()[i * d + j] = gv * tr.data()[j];
                            drow[j] += gv * tx.data()[i * d + j];
                        }
                    }
                    (dx, Tensor::row(&drow))
                };
                self.accumulate(*x, dx);
                self.accumulate(*row, drow);
            }
            Op::MulCol { x, col } => {
                let (dx, dcol) = {
                    let (tx, tc) = (&self.nodes[*x].value, &self.nodes[*col].value);
                    let (n, d) = (tx.rows(), tx.cols());
                    let mut dx = Tensor::zeros(n, d);
                    let mut dcol = vec![0.0; n];
                    for i in 0..n {
                        let s = tc.data()[i];
                        for j in 0..d {
                            let gv = g.data()[i * d + j];
                            dx.data_mut()[i * d + j] = gv * s;
                            dcol[i] += gv * tx.data()[i * d + j];
                        }
                    }
                    (dx, Tensor::col(&dcol))
                };
                self.accumulate(*x, dx);
                self.accumulate(*col, dcol);
            }
            Op::Unary { x, kind } => {
                let dx = {
                    let tx = &self.nodes[*x].value;
                    let data: Vec<f64> = match kind {
                        Unary::Relu => g
                            .data()
                            .iter()
                            .zip(tx.data())
                            .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                            .collect(),
                        Unary::LeakyRelu(a) => g
                            .data()
                            .iter()
                            .zip(tx.data())
                            .map(|(&gv, &xv)| if xv > 0.0 { gv } else { a * gv })
                            .collect(),
                        Unary::Sigmoid => g
                            .data()
                            .iter()
                            .zip(tx.data())
                            .map(|(&gv, &xv)| {
                                let y = stable_sigmoid(xv);
                                gv * y * (1.0 - y)
                            })
                            .collect(),
                        Unary::Tanh => g
                            .data()
                            .iter()
                            .zip(tx.data())
                            .map(|(&gv, &xv)| {
                                let y = xv.tanh();
                                gv * (1.0 - y * y)
                            })
                            .collect(),
                        Unary::Exp => g
                            .data()
                            .iter()
                            .zip(tx.data())
                            .map(|(&gv, &xv)| gv * xv.exp())
                            .collect(),
                        Unary::Neg => g.data().iter().map(|&gv| -gv).collect(),
                        Unary::Scale(c) => g.data().iter().map(|&gv| c * gv).collect(),
                        Unary::AddScalar(_) => g.data().to_vec(),
                        Unary::RsqrtShift(c) => g
                            .data()
                            .iter()
                            .zip(tx.data())
                            .map(|(&gv, &xv)| {
                                let y = 1.0 / (xv + c).sqrt();
                                -0.5 * gv * y * y * y
                            })
                            .collect(),
                    };
                    Tensor::new(tx.rows(), tx.cols(), data)
                };
                self.accumulate(*x, dx);
            }
            Op::GatherRows { x, idx } => {
                let dx = {
                    let tx = &self.nodes[*x].value;
                    let d = tx.cols();
                    let mut dx = Tensor::zeros(tx.rows(), d);
                    for (e, &i) in idx.iter().enumerate() {
                        for c in 0..d {
                            dx.data_mut()[i * d + c] += g.data()[e * d + c];
                        }
                    }
                    dx
                };
                self.accumulate(*x, dx);
            }
            Op::ScatterAdd { x, dst } => {
                let dx = {
                    let tx = &self.nodes[*x].value;
                    let d = tx.cols();
                    let mut dx = Tensor::zeros(tx.rows(), d);
                    for (e, &i) in dst.iter().enumerate() {
                        for c in 0..d {
                            dx.data_mut()[e * d + c] = g.data()[i * d + c];
                        }
                    }
                    dx
                };
                self.accumulate(*x, dx);
            }
            Op::SegmentSoftmax { scores, seg } => {
                let ds = {
                    let y = &self.nodes[out_idx].value;
                    let n_segments = seg.iter().copied().max().map_or(0, |m| m + 1);
                    let mut gdot = vec![0.0; n_segments];
                    for (e, &s) in seg.iter().enumerate() {
                        gdot[s] += y.data()[e] * g.data()[e];
                    }
                    let data: Vec<f64> = seg
                        .iter()
                        .enumerate()
                        .map(|(e, &s)| y.data()[e] * (g.data()[e] - gdot[s]))
                        .collect();
                    Tensor::col(&data)
                };
                self.accumulate(*scores, ds);
            }
            Op::MeanRows { x } => {
                let dx = {
                    let tx = &self.nodes[*x].value;
                    let (n, d) = (tx.rows(), tx.cols());
                    let mut dx = Tensor::zeros(n, d);
                    for i in 0..n {
                        for j in 0..d {
                            dx.data_mut()[i * d + j] = g.data()[j] / n as f64;
                        }
                    }
                    dx
                };
                self.accumulate(*x, dx);
            }
            Op::SumRows { x } => {
                let dx = {
                    let tx = &self.nodes[*x].value;
                    let (n, d) = (tx.rows(), tx.cols());
                    let mut dx = Tensor::zeros(n, d);
                    for i in 0..n {
                        dx.data_mut()[i * d..(i + 1) * d].copy_from_slice(g.data());
                    }
                    dx
                };
                self.accumulate(*x, dx);
            }
            Op::SumCols { x } => {
                let dx = {
                    let tx = &self.nodes[*x].value;
                    let (n, d) = (tx.rows(), tx.cols());
                    let mut dx = Tensor::zeros(n, d);
                    for i in 0..n {
                        for j in 0..d {
                            dx.data_mut()[i * d + j] = g.data()[i];
                        }
                    }
                    dx
                };
                self.accumulate(*x, dx);
            }
            Op::SumAll { x } => {
                let dx = {
                    let tx = &self.nodes[*x].value;
                    Tensor::filled(tx.rows(), tx.cols(), g.data()[0])
                };
                self.accumulate(*x, dx);
            }
            Op::MeanSegments { x, seg, counts } => {
                let dx = {
                    let tx = &self.nodes[*x].value;
                    let d = tx.cols();
                    let mut dx = Tensor::zeros(tx.rows(), d);
                    for (i, &s) in seg.iter().enumerate() {
                        let c = counts[s] as f64;
                        for j in 0..d {
                            dx.data_mut()[i * d + j] = g.data()[s * d + j] / c;
                        }
                    }
                    dx
                };
                self.accumulate(*x, dx);
            }
            Op::CrossEntropy { logits, labels, weights } => {
                let dz = {
                    let tl = &self.nodes[*logits].value;
                    let (n, c) = (tl.rows(), tl.cols());
                    let gs = g.data()[0];
                    let mut dz = Tensor::zeros(n, c);
                    for (i, &y) in labels.iter().enumerate() {
                        let row = tl.row_slice(i);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|&z| (z - m).exp()).sum();
                        let w = weights.as_ref().map_or(1.0, |w| w[y]);
                        let coeff = gs * w / n as f64;
                        for j in 0..c {
                            let p = (row[j] - m).exp() / sum;
                            let t = if j == y { 1.0 } else { 0.0 };
                            dz.data_mut()[i * c + j] = coeff * (p - t);
                        }
                    }
                    dz
                };
                self.accumulate(*logits, dz);
            }
            Op::L1 { pred, target } => {
                let (dp, dt) = {
                    let (tp, tt) = (&self.nodes[*pred].value, &self.nodes[*target].value);
                    let n = tp.numel() as f64;
                    let gs = g.data()[0];
                    let dp: Vec<f64> = tp
                        .data()
                        .iter()
                        .zip(tt.data())
                        .map(|(&a, &b)| gs * sign(a - b) / n)
                        .collect();
                    let dt: Vec<f64> = dp.iter().map(|&v| -v).collect();
                    (
                        Tensor::new(tp.rows(), tp.cols(), dp),
                        Tensor::new(tp.rows(), tp.cols(), dt),
                    )
                };
                self.accumulate(*pred, dp);
                self.accumulate(*target, dt);
            }
        }
    }

}

fn apply_unary(kind: Unary, v: f64) -> f64 {
    match kind {
        Unary::Relu => v.max(0.0),
        Unary::LeakyRelu(a) => {
            if v > 0.0 {
                v
            } else {
                a * v
            }
        }
        Unary::Sigmoid => stable_sigmoid(v),
        Unary::Tanh => v.tanh(),
        Unary::Exp => v.exp(),
        Unary::Neg => -v,
        Unary::Scale(c) => c * v,
        Unary::AddScalar(c) => v + c,
        Unary::RsqrtShift(c) => 1.0 / (v + c).sqrt(),
    }
}

fn stable_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
