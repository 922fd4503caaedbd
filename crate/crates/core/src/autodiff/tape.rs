//! Wengert tape over real 2-D tensors.
//!
//! Every primitive records its inputs and whatever it needs for the reverse
//! sweep. Complex quantities never appear here: callers lay them out as
//! real/imaginary blocks and compose real primitives.

use std::borrow::Cow;
use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

use super::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulCols(Var, Var),
    MulRows(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Recip(Var),
    Sqrt(Var),
    Ln(Var),
    Log2OnePlus(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    RowSums(Var),
    ColSums(Var),
    Min(Var, usize),
    Solve { a: Var, b: Var, chol: Cholesky },
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, [f64]>,
    rows: usize,
    cols: usize,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
///
/// Parameters can be borrowed (`'p`) so that many tapes share one read-only
/// parameter set.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    fault: Option<(usize, &'static str)>,
}

/// Reverse-sweep result: one gradient buffer per node that received any.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `v`; exact zeros when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; self.lens[v.0]], <[f64]>::to_vec)
    }

    /// Adds the gradient of `v` into `out`.
    pub fn accumulate_into(&self, v: Var, out: &mut [f64]) {
        if let Some(g) = self.get(v) {
            assert_eq!(g.len(), out.len());
            for (o, x) in out.iter_mut().zip(g) {
                *o += x;
            }
        }
    }
}

/// `c = op(a)·op(b) + beta·c`, with `a` logically m×k and `b` logically k×n.
/// A transposed operand is stored in its untransposed row-major layout.
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_trans: bool, b: &[f64], b_trans: bool, c: &mut [f64], beta: f64) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every buffer to the extents implied by the
    // strides, and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
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

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fails if any recorded value was NaN or infinite.
    pub fn check(&self) -> Result<()> {
        match self.fault {
            Some((node, op)) => Err(Error::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "scalar() on a {}x{} node", n.rows, n.cols);
        n.value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor { rows: n.rows, cols: n.cols, data: n.value.to_vec() }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Cow<'p, [f64]>, rows: usize, cols: usize, op: Op, name: &'static str) -> Var {
        assert_eq!(value.len(), rows * cols, "{name}: value length does not match shape");
        let requires_grad = match &op {
            Op::Leaf => false,
            op => op_inputs(op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        let id = self.nodes.len();
        if self.fault.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.fault = Some((id, name));
        }
        // Nothing upstream needs a gradient, so the node is a constant.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, rows, cols, op, requires_grad });
        Var(id)
    }

    /// Trainable leaf borrowing its values.
    pub fn param(&mut self, values: &'p [f64], rows: usize, cols: usize) -> Var {
        let v = self.push(Cow::Borrowed(values), rows, cols, Op::Leaf, "param");
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Leaf that owns its values; `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, values: Vec<f64>, rows: usize, cols: usize, requires_grad: bool) -> Var {
        let v = self.push(Cow::Owned(values), rows, cols, Op::Leaf, "leaf");
        self.nodes[v.0].requires_grad = requires_grad;
        v
    }

    pub fn constant(&mut self, values: Vec<f64>, rows: usize, cols: usize) -> Var {
        self.leaf(values, rows, cols, false)
    }

    /// Read-only leaf borrowing its values.
    pub fn constant_ref(&mut self, values: &'p [f64], rows: usize, cols: usize) -> Var {
        self.push(Cow::Borrowed(values), rows, cols, Op::Leaf, "constant")
    }

    fn same_shape(&self, a: Var, b: Var, name: &str) -> (usize, usize) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "{name}: operand shapes differ");
        sa
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Var {
        let (r, c) = self.same_shape(a, b, name);
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        self.push(Cow::Owned(out), r, c, op, name)
    }

    fn map(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.value(a).iter().map(|x| f(*x)).collect();
        self.push(Cow::Owned(out), r, c, op, name)
    }

    /// `x·w + b` with `x` r×i, `w` i×o and `b` 1×o broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (r, i) = self.shape(x);
        let (wi, o) = self.shape(w);
        assert_eq!(i, wi, "affine: input width {i} vs weight rows {wi}");
        assert_eq!(self.value(b).len(), o, "affine: bias length");
        let mut out = Vec::with_capacity(r * o);
        let bias = self.value(b);
        for _ in 0..r {
            out.extend_from_slice(bias);
        }
        gemm(r, i, o, self.value(x), false, self.value(w), false, &mut out, 1.0);
        self.push(Cow::Owned(out), r, o, Op::Affine { x, w, b }, "affine")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (kb, n) = self.shape(b);
        assert_eq!(k, kb, "matmul: inner dims {k} vs {kb}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, 0.0);
        self.push(Cow::Owned(out), m, n, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    /// Scales column `j` of `x` by `v[j]`.
    pub fn mul_cols(&mut self, x: Var, v: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.value(v).len(), c, "mul_cols: scale length");
        let (xs, vs) = (self.value(x), self.value(v));
        let out: Vec<f64> = (0..r * c).map(|i| xs[i] * vs[i % c]).collect();
        self.push(Cow::Owned(out), r, c, Op::MulCols(x, v), "mul_cols")
    }

    /// Scales row `i` of `x` by `v[i]`.
    pub fn mul_rows(&mut self, x: Var, v: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.value(v).len(), r, "mul_rows: scale length");
        let (xs, vs) = (self.value(x), self.value(v));
        let out: Vec<f64> = (0..r * c).map(|i| xs[i] * vs[i / c]).collect();
        self.push(Cow::Owned(out), r, c, Op::MulRows(x, v), "mul_rows")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), "scale", |x| x * s)
    }

    pub fn shift(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Shift(a), "shift", |x| x + s)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.map(a, Op::Recip(a), "recip", |x| 1.0 / x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, Op::Sqrt(a), "sqrt", f64::sqrt)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Ln(a), "ln", f64::ln)
    }

    /// `log2(1 + x)`.
    pub fn log2_1p(&mut self, a: Var) -> Var {
        self.map(a, Op::Log2OnePlus(a), "log2_1p", |x| x.ln_1p() / LN_2)
    }

    /// ReLU; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), "relu", |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.value(a).len(), rows * cols, "reshape: element count");
        let out = self.value(a).to_vec();
        self.push(Cow::Owned(out), rows, cols, Op::Reshape(a), "reshape")
    }

    /// `out[i] = a.flat[idx[i]]`, shaped `rows`×`cols`.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>, rows: usize, cols: usize) -> Var {
        assert_eq!(idx.len(), rows * cols, "gather: index count");
        let src = self.value(a);
        let out: Vec<f64> = idx.iter().map(|&i| src[i]).collect();
        self.push(Cow::Owned(out), rows, cols, Op::Gather(a, idx), "gather")
    }

    /// Row `r` of the output is row `idx[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let (_, c) = self.shape(a);
        let src = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rows = idx.len();
        self.push(Cow::Owned(out), rows, c, Op::GatherRows(a, idx), "gather_rows")
    }

    /// Sums row `r` of `a` into output row `idx[r]`; the output has `out_rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Vec<usize>, out_rows: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(idx.len(), r, "scatter_add_rows: one target per row");
        let src = self.value(a);
        let mut out = vec![0.0; out_rows * c];
        for (row, &t) in idx.iter().enumerate() {
            let dst = &mut out[t * c..(t + 1) * c];
            for (d, s) in dst.iter_mut().zip(&src[row * c..(row + 1) * c]) {
                *d += s;
            }
        }
        self.push(Cow::Owned(out), out_rows, c, Op::ScatterRows(a, idx), "scatter_add_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no operands");
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                assert_eq!(r, rows, "concat_cols: row counts differ");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        self.push(Cow::Owned(out), rows, total, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Cow::Owned(vec![s]), 1, 1, Op::Sum(a), "sum")
    }

    /// r×c → r×1.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.value(a).chunks(c.max(1)).map(|row| row.iter().sum()).take(r).collect();
        self.push(Cow::Owned(out), r, 1, Op::RowSums(a), "row_sums")
    }

    /// r×c → 1×c.
    pub fn col_sums(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; c];
        for row in self.value(a).chunks(c.max(1)).take(r) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        self.push(Cow::Owned(out), 1, c, Op::ColSums(a), "col_sums")
    }

    /// Smallest entry; ties resolve to the first index.
    pub fn min(&mut self, a: Var) -> Var {
        let vals = self.value(a);
        assert!(!vals.is_empty(), "min of an empty node");
        let mut arg = 0;
        for (i, &x) in vals.iter().enumerate() {
            if x < vals[arg] {
                arg = i;
            }
        }
        let m = vals[arg];
        self.push(Cow::Owned(vec![m]), 1, 1, Op::Min(a, arg), "min")
    }

    /// Solves `S X = B` with `S = (A + Aᵀ)/2` symmetric positive definite.
    ///
    /// The reverse rule uses the adjoint solve, never an explicit inverse.
    pub fn spd_solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, na) = self.shape(a);
        assert_eq!(n, na, "spd_solve: system matrix is not square");
        let (nb, m) = self.shape(b);
        assert_eq!(n, nb, "spd_solve: rhs rows");
        let av = self.value(a);
        let mut sym = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                sym[i * n + j] = 0.5 * (av[i * n + j] + av[j * n + i]);
            }
        }
        let chol = Cholesky::factor(&sym, n)?;
        let mut x = self.value(b).to_vec();
        chol.solve_in_place(&mut x, m);
        Ok(self.push(Cow::Owned(x), n, m, Op::Solve { a, b, chol }, "spd_solve"))
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Affine { x, w, b } => vec![*x, *w, *b],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MulCols(a, b) | Op::MulRows(a, b) => {
            vec![*a, *b]
        }
        Op::Scale(a, _)
        | Op::Shift(a)
        | Op::Recip(a)
        | Op::Sqrt(a)
        | Op::Ln(a)
        | Op::Log2OnePlus(a)
        | Op::Relu(a)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Reshape(a)
        | Op::Gather(a, _)
        | Op::GatherRows(a, _)
        | Op::ScatterRows(a, _)
        | Op::Sum(a)
        | Op::RowSums(a)
        | Op::ColSums(a)
        | Op::Min(a, _) => vec![*a],
        Op::ConcatCols(parts) => parts.clone(),
        Op::Solve { a, b, .. } => vec![*a, *b],
    }
}

impl Tape<'_> {
    /// Reverse sweep from a scalar `loss`.
    ///
    /// Visits every node at or before `loss` exactly once, in reverse order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check()?;
        let (r, c) = self.shape(loss);
        if r * c != 1 {
            return Err(Error::Contract(format!("loss must be scalar, got {r}x{c}")));
        }
        let lens: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, lens })
    }

    fn propagate(&self, node: &Node<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y: &[f64] = &node.value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()])
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (r, i) = self.shape(*x);
                let o = node.cols;
                if wants(*x) {
                    gemm(r, o, i, g, false, val(*w), true, slot!(*x), 1.0);
                }
                if wants(*w) {
                    gemm(i, r, o, val(*x), true, g, false, slot!(*w), 1.0);
                }
                if wants(*b) {
                    let gb = slot!(*b);
                    for row in g.chunks(o) {
                        axpy(gb, 1.0, row);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = node.cols;
                if wants(*a) {
                    gemm(m, n, k, g, false, val(*b), true, slot!(*a), 1.0);
                }
                if wants(*b) {
                    gemm(k, m, n, val(*a), true, g, false, slot!(*b), 1.0);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    axpy(slot!(*a), 1.0, g);
                }
                if wants(*b) {
                    axpy(slot!(*b), 1.0, g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    axpy(slot!(*a), 1.0, g);
                }
                if wants(*b) {
                    axpy(slot!(*b), -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = val(*b);
                    for ((o, gi), bi) in slot!(*a).iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                }
                if wants(*b) {
                    let av = val(*a);
                    for ((o, gi), ai) in slot!(*b).iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                if wants(*a) {
                    for ((o, gi), bi) in slot!(*a).iter_mut().zip(g).zip(bv) {
                        *o += gi / bi;
                    }
                }
                if wants(*b) {
                    for (((o, gi), bi), yi) in slot!(*b).iter_mut().zip(g).zip(bv).zip(y) {
                        *o -= gi * yi / bi;
                    }
                }
            }
            Op::MulCols(x, v) => {
                let c = node.cols;
                if wants(*x) {
                    let vv = val(*v);
                    for (i, (o, gi)) in slot!(*x).iter_mut().zip(g).enumerate() {
                        *o += gi * vv[i % c];
                    }
                }
                if wants(*v) {
                    let xv = val(*x);
                    let gv = slot!(*v);
                    for (i, (gi, xi)) in g.iter().zip(xv).enumerate() {
                        gv[i % c] += gi * xi;
                    }
                }
            }
            Op::MulRows(x, v) => {
                let c = node.cols;
                if wants(*x) {
                    let vv = val(*v);
                    for (i, (o, gi)) in slot!(*x).iter_mut().zip(g).enumerate() {
                        *o += gi * vv[i / c];
                    }
                }
                if wants(*v) {
                    let xv = val(*x);
                    let gv = slot!(*v);
                    for (i, (gi, xi)) in g.iter().zip(xv).enumerate() {
                        gv[i / c] += gi * xi;
                    }
                }
            }
            Op::Scale(a, s) => axpy(slot!(*a), *s, g),
            Op::Shift(a) | Op::Reshape(a) => axpy(slot!(*a), 1.0, g),
            Op::Recip(a) => {
                for ((o, gi), yi) in slot!(*a).iter_mut().zip(g).zip(y) {
                    *o -= gi * yi * yi;
                }
            }
            Op::Sqrt(a) => {
                for ((o, gi), yi) in slot!(*a).iter_mut().zip(g).zip(y) {
                    *o += gi / (2.0 * yi);
                }
            }
            Op::Ln(a) => {
                let av = val(*a);
                for ((o, gi), ai) in slot!(*a).iter_mut().zip(g).zip(av) {
                    *o += gi / ai;
                }
            }
            Op::Log2OnePlus(a) => {
                let av = val(*a);
                for ((o, gi), ai) in slot!(*a).iter_mut().zip(g).zip(av) {
                    *o += gi / ((1.0 + ai) * LN_2);
                }
            }
            Op::Relu(a) => {
                for ((o, gi), yi) in slot!(*a).iter_mut().zip(g).zip(y) {
                    if *yi > 0.0 {
                        *o += gi;
                    }
                }
            }
            Op::Tanh(a) => {
                for ((o, gi), yi) in slot!(*a).iter_mut().zip(g).zip(y) {
                    *o += gi * (1.0 - yi * yi);
                }
            }
            Op::Sigmoid(a) => {
                for ((o, gi), yi) in slot!(*a).iter_mut().zip(g).zip(y) {
                    *o += gi * yi * (1.0 - yi);
                }
            }
            Op::Gather(a, idx) => {
                let ga = slot!(*a);
                for (gi, &i) in g.iter().zip(idx) {
                    ga[i] += gi;
                }
            }
            Op::GatherRows(a, idx) => {
                let c = node.cols;
                let ga = slot!(*a);
                for (row, &i) in idx.iter().enumerate() {
                    axpy(&mut ga[i * c..(i + 1) * c], 1.0, &g[row * c..(row + 1) * c]);
                }
            }
            Op::ScatterRows(a, idx) => {
                let c = node.cols;
                let ga = slot!(*a);
                for (row, &t) in idx.iter().enumerate() {
                    axpy(&mut ga[row * c..(row + 1) * c], 1.0, &g[t * c..(t + 1) * c]);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if wants(p) {
                        let gp = slot!(p);
                        for r in 0..node.rows {
                            axpy(&mut gp[r * w..(r + 1) * w], 1.0, &g[r * total + offset..r * total + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::Sum(a) => slot!(*a).iter_mut().for_each(|o| *o += g[0]),
            Op::RowSums(a) => {
                let c = self.shape(*a).1;
                for (i, o) in slot!(*a).iter_mut().enumerate() {
                    *o += g[i / c];
                }
            }
            Op::ColSums(a) => {
                let c = node.cols;
                for (i, o) in slot!(*a).iter_mut().enumerate() {
                    *o += g[i % c];
                }
            }
            Op::Min(a, arg) => slot!(*a)[*arg] += g[0],
            Op::Solve { a, b, chol } => {
                let n = node.rows;
                let m = node.cols;
                // Adjoint solve: S⁻¹ g, with S symmetric.
                let mut gb = g.to_vec();
                chol.solve_in_place(&mut gb, m);
                if wants(*a) {
                    // ∂/∂S = −(S⁻¹g) Xᵀ, folded back through S = (A + Aᵀ)/2.
                    let mut gs = vec![0.0; n * n];
                    gemm(n, m, n, &gb, false, y, true, &mut gs, 0.0);
                    let ga = slot!(*a);
                    for i in 0..n {
                        for j in 0..n {
                            ga[i * n + j] -= 0.5 * (gs[i * n + j] + gs[j * n + i]);
                        }
                    }
                }
                if wants(*b) {
                    axpy(slot!(*b), 1.0, &gb);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    /// Compares reverse-mode gradients of `f` against central differences at `x`.
    fn check_grad(x: &[f64], rows: usize, cols: usize, f: impl Fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let v = tape.leaf(x.to_vec(), rows, cols, true);
        let out = f(&mut tape, v);
        let g = tape.backward(out).unwrap().wrt(v);
        let eval = |x: Vec<f64>| {
            let mut t = Tape::new();
            let v = t.leaf(x, rows, cols, true);
            let o = f(&mut t, v);
            t.scalar(o)
        };
        let h = 1e-6;
        for i in 0..x.len() {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[i] += h;
            dn[i] -= h;
            let fd = (eval(up) - eval(dn)) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1.0);
            assert!(err <= 1e-4, "entry {i}: reverse {} vs fd {fd}", g[i]);
        }
    }

    /// Weighted sum so that every output entry contributes a distinct slope.
    fn weigh(t: &mut Tape, y: Var) -> Var {
        let (r, c) = t.shape(y);
        let w: Vec<f64> = (0..r * c).map(|i| 0.3 + 0.17 * i as f64).collect();
        let w = t.constant(w, r, c);
        let p = t.mul(y, w);
        t.sum(p)
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut t = Tape::new();
        let x = t.leaf(vec![3.0], 1, 1, true);
        let y = t.mul(x, x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x), vec![6.0]);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(vec![0.0], 1, 1, true);
        let y = t.sigmoid(x);
        assert_eq!(t.scalar(y), 0.5);
        assert_eq!(t.backward(y).unwrap().wrt(x), vec![0.25]);
    }

    #[test]
    fn relu_at_zero_passes_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vec![0.0, 1.0, -1.0], 1, 3, true);
        let y = t.relu(x);
        let s = t.sum(y);
        assert_eq!(t.backward(s).unwrap().wrt(x), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0], 1, 2, true);
        let y = t.tanh(x);
        assert!(matches!(t.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_values_poison_the_tape() {
        let mut t = Tape::new();
        let x = t.leaf(vec![-1.0], 1, 1, true);
        let y = t.sqrt(x);
        assert!(matches!(t.check(), Err(Error::NonFinite { op: "sqrt", .. })));
        assert!(t.backward(y).is_err());
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0], 1, 2, true);
        let z = t.leaf(vec![5.0], 1, 1, true);
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(z), vec![0.0]);
        assert!(g.get(z).is_none());
    }

    #[test]
    fn repeated_backward_is_bitwise_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = uniform(&mut rng, 12);
        let build = |t: &mut Tape, v: Var| {
            let a = t.tanh(v);
            let b = t.reshape(a, 4, 3);
            let m = t.matmul(v, b);
            weigh(t, m)
        };
        let run = || {
            let mut t = Tape::new();
            let v = t.leaf(x.clone(), 3, 4, true);
            let o = build(&mut t, v);
            t.backward(o).unwrap().wrt(v)
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn elementwise_primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = uniform(&mut rng, 6);
        let pos: Vec<f64> = x.iter().map(|v| v.abs() + 0.5).collect();
        check_grad(&x, 2, 3, |t, v| {
            let y = t.tanh(v);
            weigh(t, y)
        });
        check_grad(&x, 2, 3, |t, v| {
            let y = t.sigmoid(v);
            weigh(t, y)
        });
        check_grad(&x, 2, 3, |t, v| {
            let y = t.scale(v, -1.7);
            let y = t.shift(y, 0.4);
            weigh(t, y)
        });
        check_grad(&x, 2, 3, |t, v| {
            let y = t.mul(v, v);
            let y = t.sub(y, v);
            let y = t.add(y, v);
            weigh(t, y)
        });
        check_grad(&pos, 2, 3, |t, v| {
            let y = t.sqrt(v);
            let z = t.ln(v);
            let w = t.recip(v);
            let u = t.log2_1p(v);
            let a = t.add(y, z);
            let b = t.add(w, u);
            let c = t.div(a, b);
            weigh(t, c)
        });
        // Keep away from the kink.
        let off: Vec<f64> = x.iter().map(|v| if v.abs() < 0.1 { v + 0.3 } else { *v }).collect();
        check_grad(&off, 2, 3, |t, v| {
            let y = t.relu(v);
            weigh(t, y)
        });
    }

    #[test]
    fn structural_primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = uniform(&mut rng, 12);
        check_grad(&x, 3, 4, |t, v| {
            let w = t.reshape(v, 4, 3);
            let m = t.matmul(v, w);
            weigh(t, m)
        });
        check_grad(&x, 3, 4, |t, v| {
            let w = t.gather(v, vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 0, 1, 2, 3], 4, 4);
            let b = t.gather(v, vec![5, 6, 7, 8], 1, 4);
            let y = t.affine(v, w, b);
            weigh(t, y)
        });
        check_grad(&x, 3, 4, |t, v| {
            let c = t.col_sums(v);
            let y = t.mul_cols(v, c);
            let r = t.row_sums(v);
            let z = t.mul_rows(y, r);
            weigh(t, z)
        });
        check_grad(&x, 3, 4, |t, v| {
            let g = t.gather_rows(v, vec![2, 0, 2, 1]);
            let s = t.scatter_add_rows(g, vec![1, 1, 0, 2], 3);
            let c = t.concat_cols(&[s, v, s]);
            let c = t.tanh(c);
            let c = t.reshape(c, 1, 36);
            let g = t.reshape(g, 1, 16);
            let both = t.concat_cols(&[c, g]);
            weigh(t, both)
        });
    }

    #[test]
    fn min_routes_gradient_to_first_smallest() {
        let mut t = Tape::new();
        let x = t.leaf(vec![3.0, 1.0, 2.0, 1.0], 1, 4, true);
        let m = t.min(x);
        assert_eq!(t.scalar(m), 1.0);
        assert_eq!(t.backward(m).unwrap().wrt(x), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn spd_solve_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 3;
        let x = uniform(&mut rng, n * n + n * 2);
        // x packs a generator G (n×n) and the right-hand side B (n×2);
        // the system matrix is G Gᵀ + I, which is positive definite.
        check_grad(&x, 1, n * n + n * 2, |t, v| {
            let g = t.gather(v, (0..n * n).collect(), n, n);
            let gt = t.gather(v, (0..n * n).map(|k| (k % n) * n + k / n).collect(), n, n);
            let a = t.matmul(g, gt);
            let eye: Vec<f64> = (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
            let eye = t.constant(eye, n, n);
            let a = t.add(a, eye);
            let b = t.gather(v, (n * n..n * n + n * 2).collect(), n, 2);
            let s = t.spd_solve(a, b).unwrap();
            weigh(t, s)
        });
    }

    #[test]
    fn spd_solve_rejects_indefinite_systems() {
        let mut t = Tape::new();
        let a = t.leaf(vec![1.0, 2.0, 2.0, 1.0], 2, 2, true);
        let b = t.constant(vec![1.0, 1.0], 2, 1);
        assert!(matches!(t.spd_solve(a, b), Err(Error::NotPositiveDefinite { .. })));
    }
}
