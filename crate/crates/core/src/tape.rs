//! Reverse-mode differentiation tape over small dense matrices.
//!
//! Nodes are appended in topological order and evaluated eagerly, so a node's
//! inputs always precede it and replaying an identical build sequence
//! reproduces bit-identical values (no nondeterministic reductions anywhere).
//!
//! The backward pass does not just fill numeric buffers: it *records the
//! adjoint computation as new tape nodes*. Gradients are therefore themselves
//! differentiable, which is what the exact mixed Hessian-vector product in
//! [`crate::engine`] relies on (backward-of-backward). Nonsmooth primitives
//! (`relu`, `clamp_min`) contribute constant masks, whose second derivative
//! is zero almost everywhere.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-major matrix shape. Vectors are `1 x n` rows unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn numel(self) -> usize {
        self.rows * self.cols
    }

    pub fn is_scalar(self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

/// The closed primitive set. Every variant carries a finite-difference
/// verified adjoint in `Tape::backward`.
#[derive(Debug, Clone, Copy)]
pub enum Op {
    /// Input node: parameter, data, or constant. Gradient sink.
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    /// Multiply by a compile-time scalar.
    Scale(NodeId, f64),
    /// `a op b` with optional logical transposes (no data movement).
    Matmul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Tanh(NodeId),
    Relu(NodeId),
    /// Row-wise softmax, computed in max-subtracted form.
    SoftmaxRows(NodeId),
    /// Elementwise natural log.
    Log(NodeId),
    /// Elementwise reciprocal.
    Recip(NodeId),
    /// Elementwise `max(x, c)`.
    ClampMin(NodeId, f64),
    /// Sum of all entries, producing a 1x1 scalar.
    Sum(NodeId),
    /// Fill a `rows x cols` matrix with a scalar node's value.
    BroadcastScalar(NodeId),
    /// `R x C -> R x 1` row sums.
    RowSum(NodeId),
    /// `R x 1 -> R x C` column replication.
    BroadcastCols(NodeId),
    /// `R x C -> 1 x C` column sums.
    ColSum(NodeId),
    /// `1 x C -> R x C` row replication.
    BroadcastRows(NodeId),
    /// Horizontal concatenation of equal-height matrices.
    ConcatCols(NodeId, NodeId),
    /// Column window `[start, start+len)`.
    SliceCols { a: NodeId, start: usize },
    /// Embed a matrix into a wider zero matrix at column `start`.
    PadCols { a: NodeId, start: usize },
    /// Extract one row as `1 x C`.
    SelectRow { a: NodeId, row: usize },
    /// Embed a `1 x C` row into an `R x C` zero matrix.
    ScatterRow { a: NodeId, row: usize },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Matmul { .. } => "matmul",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::SoftmaxRows(..) => "softmax",
            Op::Log(..) => "log",
            Op::Recip(..) => "recip",
            Op::ClampMin(..) => "clamp_min",
            Op::Sum(..) => "sum",
            Op::BroadcastScalar(..) => "broadcast_scalar",
            Op::RowSum(..) => "row_sum",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::ColSum(..) => "col_sum",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::PadCols { .. } => "pad_cols",
            Op::SelectRow { .. } => "select_row",
            Op::ScatterRow { .. } => "scatter_row",
        }
    }
}

struct Node {
    op: Op,
    shape: Shape,
    value: Vec<f64>,
}

/// Adjoint nodes produced by one backward pass, indexed by the ids that
/// existed when the pass started. `None` means no gradient flowed there.
pub struct Adjoints {
    adj: Vec<Option<NodeId>>,
}

impl Adjoints {
    pub fn get(&self, id: NodeId) -> Option<NodeId> {
        self.adj.get(id.0).copied().flatten()
    }
}

/// Append-only computation record.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert!(self.shape(id).is_scalar());
        self.nodes[id.0].value[0]
    }

    /// First node holding a non-finite value, if any.
    pub fn first_nonfinite(&self) -> Option<(NodeId, &'static str)> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.value.iter().any(|v| !v.is_finite()) {
                return Some((NodeId(i), node.op.name()));
            }
        }
        None
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(value.len(), shape.numel());
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, shape, value });
        id
    }

    // ── Node constructors (forward evaluation is eager) ─────────────────

    pub fn leaf(&mut self, value: Vec<f64>, shape: Shape) -> NodeId {
        assert_eq!(value.len(), shape.numel(), "leaf value length mismatch");
        self.push(Op::Leaf, shape, value)
    }

    pub fn leaf_row(&mut self, value: Vec<f64>) -> NodeId {
        let shape = Shape::new(1, value.len());
        self.leaf(value, shape)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf(vec![v], Shape::new(1, 1))
    }

    pub fn zeros(&mut self, shape: Shape) -> NodeId {
        self.leaf(vec![0.0; shape.numel()], shape)
    }

    pub fn ones(&mut self, shape: Shape) -> NodeId {
        self.leaf(vec![1.0; shape.numel()], shape)
    }

    /// Copy a node's current value into a fresh leaf. Gradient flow stops
    /// here: the result is an input as far as backward is concerned.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let value = self.nodes[id.0].value.clone();
        let shape = self.nodes[id.0].shape;
        self.leaf(value, shape)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "add shape mismatch");
        let value = self.zip(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), sa, value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "sub shape mismatch");
        let value = self.zip(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), sa, value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "mul shape mismatch");
        let value = self.zip(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), sa, value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        self.push(Op::Scale(a, c), shape, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let (m, ka) = if ta { (sa.cols, sa.rows) } else { (sa.rows, sa.cols) };
        let (kb, n) = if tb { (sb.cols, sb.rows) } else { (sb.rows, sb.cols) };
        assert_eq!(ka, kb, "matmul inner dimension mismatch");
        let mut value = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for i in 0..m {
                for k in 0..ka {
                    let x = if ta { av[k * sa.cols + i] } else { av[i * sa.cols + k] };
                    if x == 0.0 {
                        continue;
                    }
                    let row = &mut value[i * n..(i + 1) * n];
                    for (j, out) in row.iter_mut().enumerate() {
                        let y = if tb { bv[j * sb.cols + k] } else { bv[k * sb.cols + j] };
                        *out += x * y;
                    }
                }
            }
        }
        self.push(Op::Matmul { a, b, ta, tb }, Shape::new(m, n), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a);
        let value = self.map(a, math::tanh);
        self.push(Op::Tanh(a), shape, value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a);
        let value = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), shape, value)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a);
        let mut value = self.nodes[a.0].value.clone();
        for r in 0..shape.rows {
            let row = &mut value[r * shape.cols..(r + 1) * shape.cols];
            let mut max = f64::NEG_INFINITY;
            for &x in row.iter() {
                if x > max {
                    max = x;
                }
            }
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = math::exp(*x - max);
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(Op::SoftmaxRows(a), shape, value)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a);
        let value = self.map(a, math::ln);
        self.push(Op::Log(a), shape, value)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a);
        let value = self.map(a, |x| 1.0 / x);
        self.push(Op::Recip(a), shape, value)
    }

    pub fn clamp_min(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.shape(a);
        let value = self.map(a, |x| if x > c { x } else { c });
        self.push(Op::ClampMin(a, c), shape, value)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.nodes[a.0].value.iter().sum();
        self.push(Op::Sum(a), Shape::new(1, 1), vec![total])
    }

    pub fn broadcast_scalar(&mut self, a: NodeId, shape: Shape) -> NodeId {
        assert!(self.shape(a).is_scalar(), "broadcast_scalar input must be 1x1");
        let v = self.nodes[a.0].value[0];
        self.push(Op::BroadcastScalar(a), shape, vec![v; shape.numel()])
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let sa = self.shape(a);
        let mut value = vec![0.0; sa.rows];
        for r in 0..sa.rows {
            value[r] = self.nodes[a.0].value[r * sa.cols..(r + 1) * sa.cols].iter().sum();
        }
        self.push(Op::RowSum(a), Shape::new(sa.rows, 1), value)
    }

    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> NodeId {
        let sa = self.shape(a);
        assert_eq!(sa.cols, 1, "broadcast_cols input must be R x 1");
        let mut value = vec![0.0; sa.rows * cols];
        for r in 0..sa.rows {
            let v = self.nodes[a.0].value[r];
            value[r * cols..(r + 1) * cols].fill(v);
        }
        self.push(Op::BroadcastCols(a), Shape::new(sa.rows, cols), value)
    }

    pub fn col_sum(&mut self, a: NodeId) -> NodeId {
        let sa = self.shape(a);
        let mut value = vec![0.0; sa.cols];
        for r in 0..sa.rows {
            for c in 0..sa.cols {
                value[c] += self.nodes[a.0].value[r * sa.cols + c];
            }
        }
        self.push(Op::ColSum(a), Shape::new(1, sa.cols), value)
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> NodeId {
        let sa = self.shape(a);
        assert_eq!(sa.rows, 1, "broadcast_rows input must be 1 x C");
        let mut value = Vec::with_capacity(rows * sa.cols);
        for _ in 0..rows {
            value.extend_from_slice(&self.nodes[a.0].value);
        }
        self.push(Op::BroadcastRows(a), Shape::new(rows, sa.cols), value)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa.rows, sb.rows, "concat_cols row mismatch");
        let cols = sa.cols + sb.cols;
        let mut value = Vec::with_capacity(sa.rows * cols);
        for r in 0..sa.rows {
            value.extend_from_slice(&self.nodes[a.0].value[r * sa.cols..(r + 1) * sa.cols]);
            value.extend_from_slice(&self.nodes[b.0].value[r * sb.cols..(r + 1) * sb.cols]);
        }
        self.push(Op::ConcatCols(a, b), Shape::new(sa.rows, cols), value)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let sa = self.shape(a);
        assert!(start + len <= sa.cols, "slice_cols out of bounds");
        let mut value = Vec::with_capacity(sa.rows * len);
        for r in 0..sa.rows {
            let base = r * sa.cols + start;
            value.extend_from_slice(&self.nodes[a.0].value[base..base + len]);
        }
        self.push(Op::SliceCols { a, start }, Shape::new(sa.rows, len), value)
    }

    pub fn pad_cols(&mut self, a: NodeId, start: usize, total_cols: usize) -> NodeId {
        let sa = self.shape(a);
        assert!(start + sa.cols <= total_cols, "pad_cols out of bounds");
        let mut value = vec![0.0; sa.rows * total_cols];
        for r in 0..sa.rows {
            let src = &self.nodes[a.0].value[r * sa.cols..(r + 1) * sa.cols];
            value[r * total_cols + start..r * total_cols + start + sa.cols].copy_from_slice(src);
        }
        self.push(Op::PadCols { a, start }, Shape::new(sa.rows, total_cols), value)
    }

    pub fn select_row(&mut self, a: NodeId, row: usize) -> NodeId {
        let sa = self.shape(a);
        assert!(row < sa.rows, "select_row out of bounds");
        let value = self.nodes[a.0].value[row * sa.cols..(row + 1) * sa.cols].to_vec();
        self.push(Op::SelectRow { a, row }, Shape::new(1, sa.cols), value)
    }

    pub fn scatter_row(&mut self, a: NodeId, row: usize, rows: usize) -> NodeId {
        let sa = self.shape(a);
        assert_eq!(sa.rows, 1, "scatter_row input must be 1 x C");
        assert!(row < rows, "scatter_row out of bounds");
        let mut value = vec![0.0; rows * sa.cols];
        value[row * sa.cols..(row + 1) * sa.cols].copy_from_slice(&self.nodes[a.0].value);
        self.push(Op::ScatterRow { a, row }, Shape::new(rows, sa.cols), value)
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes[a.0].value.iter().map(|&x| f(x)).collect()
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.nodes[a.0]
            .value
            .iter()
            .zip(self.nodes[b.0].value.iter())
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Adjoints are recorded as new nodes
    /// so they can themselves be differentiated by a second call.
    pub fn backward(&mut self, loss: NodeId) -> Adjoints {
        assert!(self.shape(loss).is_scalar(), "backward requires a scalar loss");
        let mut adj: Vec<Option<NodeId>> = vec![None; self.nodes.len()];
        let seed = self.scalar(1.0);
        adj[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let Some(d) = adj[idx] else { continue };
            let op = self.nodes[idx].op;
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accum(&mut adj, a, d);
                    self.accum(&mut adj, b, d);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut adj, a, d);
                    let neg = self.scale(d, -1.0);
                    self.accum(&mut adj, b, neg);
                }
                Op::Mul(a, b) => {
                    let da = self.mul(d, b);
                    self.accum(&mut adj, a, da);
                    let db = self.mul(d, a);
                    self.accum(&mut adj, b, db);
                }
                Op::Scale(a, c) => {
                    let da = self.scale(d, c);
                    self.accum(&mut adj, a, da);
                }
                Op::Matmul { a, b, ta, tb } => {
                    let (da, db) = match (ta, tb) {
                        (false, false) => {
                            (self.matmul_t(d, b, false, true), self.matmul_t(a, d, true, false))
                        }
                        (true, false) => {
                            (self.matmul_t(b, d, false, true), self.matmul_t(a, d, false, false))
                        }
                        (false, true) => {
                            (self.matmul_t(d, b, false, false), self.matmul_t(d, a, true, false))
                        }
                        (true, true) => {
                            (self.matmul_t(b, d, true, true), self.matmul_t(d, a, true, true))
                        }
                    };
                    self.accum(&mut adj, a, da);
                    self.accum(&mut adj, b, db);
                }
                Op::Tanh(a) => {
                    let y = NodeId(idx);
                    let y2 = self.mul(y, y);
                    let ones = self.ones(self.shape(a));
                    let sech2 = self.sub(ones, y2);
                    let da = self.mul(d, sech2);
                    self.accum(&mut adj, a, da);
                }
                Op::Relu(a) => {
                    // Constant mask: zero second derivative away from the kink.
                    let mask: Vec<f64> = self.nodes[a.0]
                        .value
                        .iter()
                        .map(|&x| if x > 0.0 { 1.0 } else { 0.0 })
                        .collect();
                    let shape = self.shape(a);
                    let mask = self.leaf(mask, shape);
                    let da = self.mul(d, mask);
                    self.accum(&mut adj, a, da);
                }
                Op::SoftmaxRows(a) => {
                    // dx = y * (d - rowsum(d * y))
                    let y = NodeId(idx);
                    let cols = self.shape(a).cols;
                    let dy = self.mul(d, y);
                    let rs = self.row_sum(dy);
                    let rb = self.broadcast_cols(rs, cols);
                    let centered = self.sub(d, rb);
                    let da = self.mul(y, centered);
                    self.accum(&mut adj, a, da);
                }
                Op::Log(a) => {
                    let inv = self.recip(a);
                    let da = self.mul(d, inv);
                    self.accum(&mut adj, a, da);
                }
                Op::Recip(a) => {
                    // d(1/x) = -y^2 dx, reusing the forward output y.
                    let y = NodeId(idx);
                    let y2 = self.mul(y, y);
                    let da = self.mul(d, y2);
                    let da = self.scale(da, -1.0);
                    self.accum(&mut adj, a, da);
                }
                Op::ClampMin(a, c) => {
                    let mask: Vec<f64> = self.nodes[a.0]
                        .value
                        .iter()
                        .map(|&x| if x > c { 1.0 } else { 0.0 })
                        .collect();
                    let shape = self.shape(a);
                    let mask = self.leaf(mask, shape);
                    let da = self.mul(d, mask);
                    self.accum(&mut adj, a, da);
                }
                Op::Sum(a) => {
                    let da = self.broadcast_scalar(d, self.shape(a));
                    self.accum(&mut adj, a, da);
                }
                Op::BroadcastScalar(a) => {
                    let da = self.sum(d);
                    self.accum(&mut adj, a, da);
                }
                Op::RowSum(a) => {
                    let cols = self.shape(a).cols;
                    let da = self.broadcast_cols(d, cols);
                    self.accum(&mut adj, a, da);
                }
                Op::BroadcastCols(a) => {
                    let da = self.row_sum(d);
                    self.accum(&mut adj, a, da);
                }
                Op::ColSum(a) => {
                    let rows = self.shape(a).rows;
                    let da = self.broadcast_rows(d, rows);
                    self.accum(&mut adj, a, da);
                }
                Op::BroadcastRows(a) => {
                    let da = self.col_sum(d);
                    self.accum(&mut adj, a, da);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(a).cols;
                    let cb = self.shape(b).cols;
                    let da = self.slice_cols(d, 0, ca);
                    self.accum(&mut adj, a, da);
                    let db = self.slice_cols(d, ca, cb);
                    self.accum(&mut adj, b, db);
                }
                Op::SliceCols { a, start } => {
                    let total = self.shape(a).cols;
                    let da = self.pad_cols(d, start, total);
                    self.accum(&mut adj, a, da);
                }
                Op::PadCols { a, start } => {
                    let len = self.shape(a).cols;
                    let da = self.slice_cols(d, start, len);
                    self.accum(&mut adj, a, da);
                }
                Op::SelectRow { a, row } => {
                    let rows = self.shape(a).rows;
                    let da = self.scatter_row(d, row, rows);
                    self.accum(&mut adj, a, da);
                }
                Op::ScatterRow { a, row } => {
                    let da = self.select_row(d, row);
                    self.accum(&mut adj, a, da);
                }
            }
        }
        Adjoints { adj }
    }

    fn accum(&mut self, adj: &mut [Option<NodeId>], target: NodeId, delta: NodeId) {
        adj[target.0] = Some(match adj[target.0] {
            None => delta,
            Some(existing) => self.add(existing, delta),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of(tape: &mut Tape, loss: NodeId, wrt: NodeId) -> Vec<f64> {
        let adj = tape.backward(loss);
        match adj.get(wrt) {
            Some(g) => tape.value(g).to_vec(),
            None => vec![0.0; tape.shape(wrt).numel()],
        }
    }

    #[test]
    fn matmul_forward() {
        let mut t = Tape::new();
        let a = t.leaf(vec![1.0, 2.0, 3.0, 4.0], Shape::new(2, 2));
        let b = t.leaf(vec![5.0, 6.0, 7.0, 8.0], Shape::new(2, 2));
        let c = t.matmul(a, b);
        assert_eq!(t.value(c), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transpose_variants() {
        let mut t = Tape::new();
        // a: 2x3, b: 2x3. a^T b -> 3x3; a b^T -> 2x2.
        let a = t.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Shape::new(2, 3));
        let b = t.leaf(vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0], Shape::new(2, 3));
        let atb = t.matmul_t(a, b, true, false);
        assert_eq!(t.shape(atb), Shape::new(3, 3));
        // (a^T b)[0][0] = 1*7 + 4*10 = 47
        assert_eq!(t.value(atb)[0], 47.0);
        let abt = t.matmul_t(a, b, false, true);
        assert_eq!(t.shape(abt), Shape::new(2, 2));
        // (a b^T)[0][0] = 1*7 + 2*8 + 3*9 = 50
        assert_eq!(t.value(abt)[0], 50.0);
    }

    #[test]
    fn chained_mul_add_gradients() {
        // out = a*b + a  =>  d_a = b + 1, d_b = a
        let mut t = Tape::new();
        let a = t.leaf_row(vec![3.0]);
        let b = t.leaf_row(vec![5.0]);
        let c = t.mul(a, b);
        let s = t.add(c, a);
        let loss = t.sum(s);
        let adj = t.backward(loss);
        let ga = adj.get(a).unwrap();
        let gb = adj.get(b).unwrap();
        assert_eq!(t.value(ga), &[6.0]);
        assert_eq!(t.value(gb), &[3.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut t = Tape::new();
        let x = t.leaf(vec![0.3, -1.2, 2.0, 0.0, 0.0, 0.0], Shape::new(2, 3));
        let y = t.softmax_rows(x);
        for r in 0..2 {
            let s: f64 = t.value(y)[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let shifted = t.leaf(vec![100.3, 98.8, 102.0, 7.0, 7.0, 7.0], Shape::new(2, 3));
        let y2 = t.softmax_rows(shifted);
        for i in 0..6 {
            assert!((t.value(y)[i] - t.value(y2)[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_gradient_matches_closed_form() {
        // loss = y[0] for y = softmax(x): d_x = y0 * (e0 - y)
        let mut t = Tape::new();
        let x = t.leaf_row(vec![0.5, -0.5, 1.0]);
        let y = t.softmax_rows(x);
        let first = t.slice_cols(y, 0, 1);
        let loss = t.sum(first);
        let g = grad_of(&mut t, loss, x);
        let yv = t.value(y).to_vec();
        let expect = [yv[0] * (1.0 - yv[0]), -yv[0] * yv[1], -yv[0] * yv[2]];
        for i in 0..3 {
            assert!((g[i] - expect[i]).abs() < 1e-12, "{g:?} vs {expect:?}");
        }
    }

    #[test]
    fn select_scatter_roundtrip_gradient() {
        let mut t = Tape::new();
        let e = t.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Shape::new(3, 2));
        let row = t.select_row(e, 1);
        let w = t.leaf_row(vec![10.0, 20.0]);
        let prod = t.mul(row, w);
        let loss = t.sum(prod);
        let g = grad_of(&mut t, loss, e);
        assert_eq!(g, vec![0.0, 0.0, 10.0, 20.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_slice_gradients() {
        let mut t = Tape::new();
        let a = t.leaf_row(vec![1.0, 2.0]);
        let b = t.leaf_row(vec![3.0]);
        let cat = t.concat_cols(a, b);
        let w = t.leaf_row(vec![5.0, 7.0, 11.0]);
        let prod = t.mul(cat, w);
        let loss = t.sum(prod);
        let adj = t.backward(loss);
        let ga = adj.get(a).unwrap();
        let gb = adj.get(b).unwrap();
        assert_eq!(t.value(ga), &[5.0, 7.0]);
        assert_eq!(t.value(gb), &[11.0]);
    }

    #[test]
    fn unused_leaf_has_no_adjoint() {
        let mut t = Tape::new();
        let a = t.leaf_row(vec![1.0]);
        let b = t.leaf_row(vec![2.0]);
        let loss = t.sum(a);
        let adj = t.backward(loss);
        assert!(adj.get(a).is_some());
        assert!(adj.get(b).is_none());
    }

    #[test]
    fn replay_is_bit_identical() {
        let build = |t: &mut Tape| {
            let x = t.leaf_row(vec![0.7, -0.3, 1.9]);
            let w = t.leaf(vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 0.8, -0.9], Shape::new(3, 3));
            let h = t.matmul(x, w);
            let h = t.tanh(h);
            let p = t.softmax_rows(h);
            let lp = t.log(p);
            let s = t.sum(lp);
            (x, s)
        };
        let mut t1 = Tape::new();
        let (x1, l1) = build(&mut t1);
        let g1 = grad_of(&mut t1, l1, x1);
        let v1 = t1.scalar_value(l1);

        let mut t2 = Tape::new();
        let (x2, l2) = build(&mut t2);
        let g2 = grad_of(&mut t2, l2, x2);
        let v2 = t2.scalar_value(l2);

        assert_eq!(v1.to_bits(), v2.to_bits());
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn nonfinite_detection_names_node() {
        let mut t = Tape::new();
        let x = t.leaf_row(vec![0.0]);
        let y = t.log(x); // ln(0) = -inf
        assert_eq!(t.first_nonfinite().map(|(id, op)| (id.index(), op)), Some((y.index(), "log")));
    }
}
