//! Dynamic reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep. An operation
//! whose inputs are all untracked is folded into an untracked leaf: a tape
//! fed only constants records no edges.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use super::kernels;
use super::math;
use super::{NumError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    ScaleBy(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Minimum(..) => "minimum",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::ScaleBy(..) => "scale_by",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
        }
    }

    fn parents(&self) -> ([Option<Var>; 2], usize) {
        match *self {
            Op::Leaf => ([None, None], 0),
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Minimum(a, b)
            | Op::ScaleBy(a, b)
            | Op::ConcatCols(a, b) => ([Some(a), Some(b)], 2),
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Softplus(a)
            | Op::Square(a)
            | Op::Clamp(a, ..)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSum(a)
            | Op::SliceCols(a, _) => ([Some(a), None], 1),
        }
    }
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    tracked: bool,
}

/// A single forward pass and, after [`Tape::backward`], its gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> NumError {
    NumError::Shape {
        op,
        left: vec![a.0, a.1],
        right: vec![b.0, b.1],
    }
}

#[inline]
fn debug_check_finite(op: &str, v: &[f64]) {
    debug_assert!(
        v.iter().all(|x| x.is_finite()),
        "non-finite output from `{op}` on finite inputs"
    );
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded operation nodes (nodes with parents).
    pub fn edge_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    /// Records a copy of `t`; the node is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let (rows, cols) = t.dims2();
        self.push_leaf(rows, cols, t.data().to_vec(), t.requires_grad())
    }

    /// Untracked leaf from raw row-major data.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var, NumError> {
        if rows * cols != data.len() {
            return Err(NumError::DataLength {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        Ok(self.push_leaf(rows, cols, data, false))
    }

    /// Tracked leaf from raw row-major data, mainly for tests.
    pub fn variable(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var, NumError> {
        let v = self.constant(rows, cols, data)?;
        self.nodes[v.0].tracked = true;
        Ok(v)
    }

    fn push_leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>, tracked: bool) -> Var {
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        let (ps, n) = op.parents();
        let tracked = ps[..n].iter().flatten().any(|p| self.nodes[p.0].tracked);
        let op = if tracked { op } else { Op::Leaf };
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Copies a node's value out as a matrix tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::matrix(n.rows, n.cols, n.value.clone()).expect("node shape is consistent")
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Gradient of the last backward loss with respect to `v`, if reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- ops -------------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.value(a),
            false,
            self.value(b),
            false,
            &mut out,
            false,
        );
        debug_check_finite("matmul", &out);
        Ok(self.push(m, n, out, Op::MatMul(a, b)))
    }

    /// Adds a `1 x cols` bias to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumError> {
        let (m, n) = self.shape(a);
        let bs = self.shape(bias);
        if bs.0 * bs.1 != n {
            return Err(shape_err("add_bias", (m, n), bs));
        }
        let mut out = self.value(a).to_vec();
        kernels::add_bias_rows(&mut out, self.value(bias));
        Ok(self.push(m, n, out, Op::AddBias(a, bias)))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NumError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(shape_err(op.name(), sa, sb));
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(sa.0, sa.1, out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_same(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_same(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_same(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_same(a, b, Op::Minimum(a, b), |x, y| if y < x { y } else { x })
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(r, c, out, op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Offset(a), |x| x + c)
    }

    /// Multiplies every element of `a` by the one-element node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, NumError> {
        let ss = self.shape(s);
        if ss != (1, 1) {
            return Err(shape_err("scale_by", self.shape(a), ss));
        }
        let k = self.item(s);
        Ok(self.map(a, Op::ScaleBy(a, s), |x| x * k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), math::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), math::exp)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, Op::Softplus(a), math::softplus)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: f64 = v.iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(1, 1, vec![s], Op::Mean(a))
    }

    /// Sums each row, giving an `rows x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = if c == 0 {
            vec![0.0; r]
        } else {
            self.value(a)
                .chunks_exact(c)
                .map(|row| row.iter().sum())
                .collect()
        };
        self.push(r, 1, out, Op::RowSum(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(shape_err("concat_cols", (ra, ca), (rb, cb)));
        }
        let mut out = Vec::with_capacity(ra * (ca + cb));
        {
            let va = self.value(a);
            let vb = self.value(b);
            for i in 0..ra {
                out.extend_from_slice(&va[i * ca..(i + 1) * ca]);
                out.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
            }
        }
        Ok(self.push(ra, ca + cb, out, Op::ConcatCols(a, b)))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(shape_err("slice_cols", (r, c), (start, len)));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + start + len]);
        }
        Ok(self.push(r, len, out, Op::SliceCols(a, start)))
    }

    // ---- backward ------------------------------------------------------------

    /// Accumulates d`loss`/d`node` into every tracked node reachable from
    /// `loss`. A tape supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumError> {
        if self.consumed {
            return Err(NumError::GraphConsumed);
        }
        let (r, c) = self.shape(loss);
        if r * c != 1 {
            return Err(NumError::NonScalarLoss(vec![r, c]));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].tracked {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let tracked = |v: Var| nodes[v.0].tracked;
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                let n = nodes[b.0].cols;
                if tracked(a) {
                    // dA = dC * B^T
                    kernels::gemm(
                        m,
                        n,
                        k,
                        g,
                        false,
                        &nodes[b.0].value,
                        true,
                        slot(grads, nodes, a),
                        true,
                    );
                }
                if tracked(b) {
                    // dB = A^T * dC
                    kernels::gemm(
                        k,
                        m,
                        n,
                        &nodes[a.0].value,
                        true,
                        g,
                        false,
                        slot(grads, nodes, b),
                        true,
                    );
                }
            }
            Op::AddBias(a, b) => {
                if tracked(a) {
                    add_into(slot(grads, nodes, a), g);
                }
                if tracked(b) {
                    let cols = node.cols;
                    let gb = slot(grads, nodes, b);
                    for row in g.chunks_exact(cols) {
                        for (acc, x) in gb.iter_mut().zip(row) {
                            *acc += x;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if tracked(a) {
                    add_into(slot(grads, nodes, a), g);
                }
                if tracked(b) {
                    add_into(slot(grads, nodes, b), g);
                }
            }
            Op::Sub(a, b) => {
                if tracked(a) {
                    add_into(slot(grads, nodes, a), g);
                }
                if tracked(b) {
                    for (acc, x) in slot(grads, nodes, b).iter_mut().zip(g) {
                        *acc -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                if tracked(a) {
                    let vb = &nodes[b.0].value;
                    for ((acc, x), y) in slot(grads, nodes, a).iter_mut().zip(g).zip(vb) {
                        *acc += x * y;
                    }
                }
                if tracked(b) {
                    let va = &nodes[a.0].value;
                    for ((acc, x), y) in slot(grads, nodes, b).iter_mut().zip(g).zip(va) {
                        *acc += x * y;
                    }
                }
            }
            Op::Minimum(a, b) => {
                let va = &nodes[a.0].value;
                let vb = &nodes[b.0].value;
                if tracked(a) {
                    let ga = slot(grads, nodes, a);
                    for j in 0..g.len() {
                        // Ties route the gradient to `a`, matching the forward pick.
                        #[allow(clippy::neg_cmp_op_on_partial_ord)]
                        if !(vb[j] < va[j]) {
                            ga[j] += g[j];
                        }
                    }
                }
                if tracked(b) {
                    let gb = slot(grads, nodes, b);
                    for j in 0..g.len() {
                        if vb[j] < va[j] {
                            gb[j] += g[j];
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                for (acc, x) in slot(grads, nodes, a).iter_mut().zip(g) {
                    *acc += x * s;
                }
            }
            Op::Offset(a) => add_into(slot(grads, nodes, a), g),
            Op::ScaleBy(a, s) => {
                let k = nodes[s.0].value[0];
                if tracked(a) {
                    for (acc, x) in slot(grads, nodes, a).iter_mut().zip(g) {
                        *acc += x * k;
                    }
                }
                if tracked(s) {
                    let va = &nodes[a.0].value;
                    let d: f64 = g.iter().zip(va).map(|(x, y)| x * y).sum();
                    slot(grads, nodes, s)[0] += d;
                }
            }
            Op::Relu(a) => {
                let va = &nodes[a.0].value;
                for ((acc, x), y) in slot(grads, nodes, a).iter_mut().zip(g).zip(va) {
                    if *y > 0.0 {
                        *acc += x;
                    }
                }
            }
            Op::Tanh(a) => {
                for ((acc, x), t) in slot(grads, nodes, a).iter_mut().zip(g).zip(&node.value) {
                    *acc += x * (1.0 - t * t);
                }
            }
            Op::Exp(a) => {
                for ((acc, x), e) in slot(grads, nodes, a).iter_mut().zip(g).zip(&node.value) {
                    *acc += x * e;
                }
            }
            Op::Softplus(a) => {
                let va = &nodes[a.0].value;
                for ((acc, x), y) in slot(grads, nodes, a).iter_mut().zip(g).zip(va) {
                    *acc += x * math::sigmoid(*y);
                }
            }
            Op::Square(a) => {
                let va = &nodes[a.0].value;
                for ((acc, x), y) in slot(grads, nodes, a).iter_mut().zip(g).zip(va) {
                    *acc += 2.0 * x * y;
                }
            }
            Op::Clamp(a, lo, hi) => {
                let va = &nodes[a.0].value;
                for ((acc, x), y) in slot(grads, nodes, a).iter_mut().zip(g).zip(va) {
                    if *y >= lo && *y <= hi {
                        *acc += x;
                    }
                }
            }
            Op::Sum(a) => {
                let d = g[0];
                slot(grads, nodes, a).iter_mut().for_each(|acc| *acc += d);
            }
            Op::Mean(a) => {
                let n = nodes[a.0].value.len().max(1) as f64;
                let d = g[0] / n;
                slot(grads, nodes, a).iter_mut().for_each(|acc| *acc += d);
            }
            Op::RowSum(a) => {
                let c = nodes[a.0].cols;
                let ga = slot(grads, nodes, a);
                for (row, d) in ga.chunks_exact_mut(c.max(1)).zip(g) {
                    row.iter_mut().for_each(|acc| *acc += d);
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = nodes[a.0].cols;
                let cb = nodes[b.0].cols;
                let w = ca + cb;
                if tracked(a) {
                    let ga = slot(grads, nodes, a);
                    for i in 0..node.rows {
                        add_into(&mut ga[i * ca..(i + 1) * ca], &g[i * w..i * w + ca]);
                    }
                }
                if tracked(b) {
                    let gb = slot(grads, nodes, b);
                    for i in 0..node.rows {
                        add_into(&mut gb[i * cb..(i + 1) * cb], &g[i * w + ca..(i + 1) * w]);
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let c = nodes[a.0].cols;
                let len = node.cols;
                let ga = slot(grads, nodes, a);
                for i in 0..node.rows {
                    add_into(
                        &mut ga[i * c + start..i * c + start + len],
                        &g[i * len..(i + 1) * len],
                    );
                }
            }
        }
    }

    /// Text edge list, one `parent -> child op` line per edge.
    pub fn dump_edges(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let (ps, k) = n.op.parents();
            for p in ps[..k].iter().flatten() {
                let _ = writeln!(s, "{} -> {} {}", p.0, i, n.op.name());
            }
        }
        s
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    let len = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, x) in acc.iter_mut().zip(g) {
        *a += x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut t = Tape::new();
        let x = t.variable(1, 1, vec![3.0]).unwrap();
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.variable(1, 2, vec![1.0, 2.0]).unwrap();
        let y = t.square(x);
        assert!(matches!(t.backward(y), Err(NumError::NonScalarLoss(_))));
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut t = Tape::new();
        let x = t.variable(1, 1, vec![2.0]).unwrap();
        let y = t.square(x);
        t.backward(y).unwrap();
        assert_eq!(t.backward(y), Err(NumError::GraphConsumed));
    }

    #[test]
    fn constants_fold_without_edges() {
        let mut t = Tape::new();
        let a = t.constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = t.matmul(a, a).unwrap();
        let c = t.tanh(b);
        let _ = t.sum(c);
        assert_eq!(t.edge_count(), 0);
        assert!(t.dump_edges().is_empty());
    }

    #[test]
    fn minimum_routes_gradient_to_smaller() {
        let mut t = Tape::new();
        let a = t.variable(1, 2, vec![3.0, 1.0]).unwrap();
        let b = t.variable(1, 2, vec![2.0, 5.0]).unwrap();
        let m = t.minimum(a, b).unwrap();
        assert_eq!(t.value(m), &[2.0, 1.0]);
        let s = t.sum(m);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[0.0, 1.0]);
        assert_eq!(t.grad(b).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn slice_and_concat_gradients() {
        let mut t = Tape::new();
        let a = t
            .variable(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let s = t.slice_cols(a, 1, 2).unwrap();
        assert_eq!(t.value(s), &[2.0, 3.0, 5.0, 6.0]);
        let c = t.concat_cols(s, a).unwrap();
        assert_eq!(t.shape(c), (2, 5));
        let l = t.sum(c);
        t.backward(l).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[1.0, 2.0, 2.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn clamp_blocks_gradient_outside() {
        let mut t = Tape::new();
        let a = t.variable(1, 3, vec![-5.0, 0.5, 5.0]).unwrap();
        let c = t.clamp(a, -1.0, 1.0);
        assert_eq!(t.value(c), &[-1.0, 0.5, 1.0]);
        let l = t.sum(c);
        t.backward(l).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(2, 3, vec![0.0; 6]).unwrap();
        let b = t.constant(2, 3, vec![0.0; 6]).unwrap();
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            NumError::Shape {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
    }
}
