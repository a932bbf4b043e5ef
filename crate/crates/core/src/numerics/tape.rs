//! Tensor-level reverse-mode differentiation.
//!
//! Every differentiable operation appends one node to a [`Tape`]; a node only
//! refers to nodes recorded before it, so the node order is a topological
//! order and [`Tape::backward`] is a single reverse sweep.

use super::kernels::{log_softmax_into, matmul_into, softmax_into, MASK_LOGIT};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    AddBias(Var, Var),
    Tanh(Var),
    Log(Var),
    Hinge(Var),
    ConcatCols(Vec<Var>),
    ShiftRows(Var, isize),
    GatherRows(Var, Vec<usize>),
    RepeatRows(Var, usize),
    Reshape(Var),
    RowSoftmax {
        x: Var,
        tau: f64,
        mask: Option<Vec<bool>>,
    },
    RowLogSoftmax {
        x: Var,
        tau: f64,
        mask: Option<Vec<bool>>,
    },
    Pick(Var, usize),
    Sum(Var),
    DotConst(Var, Vec<f64>),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` if no path connects them.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`] but materializes zeros for disconnected vars.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

/// Ordered record of executed operations. Confined to one thread.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// Interprets a tensor as `rows x cols`, with vectors as a single row.
fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.item()
    }

    /// Trainable input; gradients flow into it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Fixed input; no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn new_tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::from_raw(shape, data)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let (r, k, c) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; r * c];
        matmul_into(av.data(), bv.data(), r, k, c, &mut out);
        self.push("matmul", Self::new_tensor(vec![r, c], out), Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(shape_err("transpose", av.shape(), &[]));
        }
        let (r, c) = (av.shape()[0], av.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av.data()[i * c + j];
            }
        }
        self.push("transpose", Self::new_tensor(vec![c, r], out), Op::Transpose(a), &[a])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = av.shape().to_vec();
        self.push(name, Self::new_tensor(shape, out), op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let av = self.value(a);
        let out: Vec<f64> = av.data().iter().map(|&x| f(x)).collect();
        let shape = av.shape().to_vec();
        self.push(name, Self::new_tensor(shape, out), op, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("offset", a, |x| x + c, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::NonFinite("log of a non-positive value".into()));
        }
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn hinge(&mut self, a: Var) -> Result<Var> {
        self.unary("hinge", a, |x| x.max(0.0), Op::Hinge(a))
    }

    /// Adds a `[c]` bias to every row of an `[r, c]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let (r, c) = as_matrix(av);
        if av.shape().len() != 2 || bv.len() != c {
            return Err(shape_err("add_bias", av.shape(), bv.shape()));
        }
        let mut out = av.data().to_vec();
        for i in 0..r {
            for (o, &b) in out[i * c..(i + 1) * c].iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let shape = av.shape().to_vec();
        self.push("add_bias", Self::new_tensor(shape, out), Op::AddBias(a, bias), &[a, bias])
    }

    /// Concatenates 2-D inputs with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat_cols", &[], &[]))?;
        let rows = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 2 || v.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first).shape(), v.shape()));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(
            "concat_cols",
            Self::new_tensor(vec![rows, total], out),
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    /// Row `i` of the output is row `i - offset` of the input, zero outside range.
    pub fn shift_rows(&mut self, a: Var, offset: isize) -> Result<Var> {
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(shape_err("shift_rows", av.shape(), &[]));
        }
        let (r, c) = as_matrix(av);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let src = i as isize - offset;
            if src >= 0 && (src as usize) < r {
                out[i * c..(i + 1) * c].copy_from_slice(av.row(src as usize));
            }
        }
        let shape = av.shape().to_vec();
        self.push("shift_rows", Self::new_tensor(shape, out), Op::ShiftRows(a, offset), &[a])
    }

    /// Selects rows of a 2-D table (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(shape_err("gather_rows", tv.shape(), &[]));
        }
        let (r, c) = as_matrix(tv);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::Internal(format!("row index {id} out of range for table with {r} rows")));
            }
            out.extend_from_slice(tv.row(id));
        }
        self.push(
            "gather_rows",
            Self::new_tensor(vec![ids.len(), c], out),
            Op::GatherRows(table, ids.to_vec()),
            &[table],
        )
    }

    /// Stacks a single row (`[c]` or `[1, c]`) `times` times into `[times, c]`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != 1 || av.shape().len() > 2 {
            return Err(shape_err("repeat_rows", av.shape(), &[1]));
        }
        let c = av.cols();
        let out: Vec<f64> = (0..times).flat_map(|_| av.data().iter().copied()).collect();
        self.push("repeat_rows", Self::new_tensor(vec![times, c], out), Op::RepeatRows(a, times), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let av = self.value(a);
        if shape.iter().product::<usize>() != av.len() {
            return Err(shape_err("reshape", av.shape(), &shape));
        }
        let out = av.data().to_vec();
        self.push("reshape", Self::new_tensor(shape, out), Op::Reshape(a), &[a])
    }

    fn check_row_mask(&self, name: &'static str, a: Var, tau: f64, mask: Option<&[bool]>) -> Result<(usize, usize)> {
        let av = self.value(a);
        if av.shape().len() > 2 || av.is_empty() {
            return Err(shape_err(name, av.shape(), &[]));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        let (r, c) = as_matrix(av);
        if let Some(m) = mask {
            if m.len() != c {
                return Err(shape_err(name, av.shape(), &[m.len()]));
            }
            if !m.iter().any(|&k| k) {
                return Err(Error::Degenerate("every softmax position is masked".into()));
            }
        }
        Ok((r, c))
    }

    /// Softmax of each row at temperature `tau`. `mask` (one flag per column,
    /// true = keep) applies to every row; masked entries are exactly zero.
    /// Vectors are treated as a single row.
    pub fn row_softmax(&mut self, a: Var, tau: f64, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.check_row_mask("row_softmax", a, tau, mask)?;
        let av = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            softmax_into(av.row(i), tau, mask, &mut out[i * c..(i + 1) * c]);
        }
        let shape = av.shape().to_vec();
        self.push(
            "row_softmax",
            Self::new_tensor(shape, out),
            Op::RowSoftmax {
                x: a,
                tau,
                mask: mask.map(<[bool]>::to_vec),
            },
            &[a],
        )
    }

    /// Log-softmax of each row at temperature `tau`; masked entries hold
    /// [`MASK_LOGIT`] and receive no gradient.
    pub fn row_log_softmax(&mut self, a: Var, tau: f64, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.check_row_mask("row_log_softmax", a, tau, mask)?;
        let av = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            log_softmax_into(av.row(i), tau, mask, &mut out[i * c..(i + 1) * c]);
        }
        let shape = av.shape().to_vec();
        self.push(
            "row_log_softmax",
            Self::new_tensor(shape, out),
            Op::RowLogSoftmax {
                x: a,
                tau,
                mask: mask.map(<[bool]>::to_vec),
            },
            &[a],
        )
    }

    /// Scalar at flat index `idx`.
    pub fn pick(&mut self, a: Var, idx: usize) -> Result<Var> {
        let av = self.value(a);
        if idx >= av.len() {
            return Err(shape_err("pick", av.shape(), &[idx]));
        }
        let v = av.data()[idx];
        self.push("pick", Tensor::scalar(v), Op::Pick(a, idx), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v: f64 = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(v), Op::Sum(a), &[a])
    }

    /// `sum_i w_i * a_i` against constant weights.
    pub fn dot_const(&mut self, a: Var, weights: &[f64]) -> Result<Var> {
        let av = self.value(a);
        if av.len() != weights.len() {
            return Err(shape_err("dot_const", av.shape(), &[weights.len()]));
        }
        let v: f64 = av.data().iter().zip(weights).map(|(x, w)| x * w).sum();
        self.push("dot_const", Tensor::scalar(v), Op::DotConst(a, weights.to_vec()), &[a])
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mse", av.shape(), bv.shape()));
        }
        let n = av.len().max(1) as f64;
        let v: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        self.push("mse", Tensor::scalar(v), Op::Mse(a, b), &[a, b])
    }

    /// Sums scalar vars; an empty slice is rejected.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Internal("add_all over no terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", self.value(loss).shape(), &[1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (r, k, c) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                // dA = G B^T, dB = A^T G
                self.accumulate(grads, *a, |da| {
                    for i in 0..r {
                        for p in 0..k {
                            let mut s = 0.0;
                            let brow = &bv.data()[p * c..(p + 1) * c];
                            for (gv, bvv) in g[i * c..(i + 1) * c].iter().zip(brow) {
                                s += gv * bvv;
                            }
                            da[i * k + p] += s;
                        }
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            let aip = av.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * c..(p + 1) * c].iter_mut().zip(grow) {
                                *d += aip * gv;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                self.accumulate(grads, *a, |da| {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                self.accumulate(grads, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    for ((x, gv), bb) in d.iter_mut().zip(g).zip(bv) {
                        *x += gv * bb;
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for ((x, gv), aa) in d.iter_mut().zip(g).zip(av) {
                        *x += gv * aa;
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
            }
            Op::Offset(a) | Op::Reshape(a) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                let c = self.value(*bias).len();
                self.accumulate(grads, *bias, |d| {
                    for row in g.chunks(c) {
                        add_into(d, row);
                    }
                });
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, |d| {
                    for ((x, gv), y) in d.iter_mut().zip(g).zip(out) {
                        *x += gv * (1.0 - y * y);
                    }
                });
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for ((x, gv), v) in d.iter_mut().zip(g).zip(av) {
                        *x += gv / v;
                    }
                });
            }
            Op::Hinge(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for ((x, gv), v) in d.iter_mut().zip(g).zip(av) {
                        if *v > 0.0 {
                            *x += gv;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accumulate(grads, p, |d| {
                        for i in 0..rows {
                            add_into(&mut d[i * w..(i + 1) * w], &g[i * total + col..i * total + col + w]);
                        }
                    });
                    col += w;
                }
            }
            Op::ShiftRows(a, offset) => {
                let (r, c) = as_matrix(&node.value);
                self.accumulate(grads, *a, |d| {
                    for i in 0..r {
                        let src = i as isize - offset;
                        if src >= 0 && (src as usize) < r {
                            let s = src as usize;
                            add_into(&mut d[s * c..(s + 1) * c], &g[i * c..(i + 1) * c]);
                        }
                    }
                });
            }
            Op::GatherRows(table, ids) => {
                let c = self.value(*table).cols();
                self.accumulate(grads, *table, |d| {
                    for (i, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * c..(id + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::RepeatRows(a, times) => {
                let c = self.value(*a).len();
                self.accumulate(grads, *a, |d| {
                    for i in 0..*times {
                        add_into(d, &g[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::RowSoftmax { x, tau, mask } => {
                let (r, c) = as_matrix(&node.value);
                self.accumulate(grads, *x, |d| {
                    for i in 0..r {
                        let y = &out[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            if mask.as_ref().map_or(true, |m| m[j]) {
                                d[i * c + j] += y[j] * (gr[j] - dot) / tau;
                            }
                        }
                    }
                });
            }
            Op::RowLogSoftmax { x, tau, mask } => {
                let (r, c) = as_matrix(&node.value);
                let keep = |j: usize| mask.as_ref().map_or(true, |m| m[j]);
                self.accumulate(grads, *x, |d| {
                    for i in 0..r {
                        let y = &out[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let gsum: f64 = (0..c).filter(|&j| keep(j)).map(|j| gr[j]).sum();
                        for j in 0..c {
                            if keep(j) {
                                debug_assert!(y[j] > MASK_LOGIT);
                                d[i * c + j] += (gr[j] - y[j].exp() * gsum) / tau;
                            }
                        }
                    }
                });
            }
            Op::Pick(a, idx) => {
                self.accumulate(grads, *a, |d| d[*idx] += g[0]);
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |d| d.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::DotConst(a, w) => {
                self.accumulate(grads, *a, |d| {
                    for (x, wv) in d.iter_mut().zip(w) {
                        *x += g[0] * wv;
                    }
                });
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let scale = 2.0 * g[0] / av.len().max(1) as f64;
                self.accumulate(grads, *a, |d| {
                    for ((x, p), q) in d.iter_mut().zip(av).zip(bv) {
                        *x += scale * (p - q);
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for ((x, p), q) in d.iter_mut().zip(av).zip(bv) {
                        *x -= scale * (p - q);
                    }
                });
            }
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(r, c, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul_is_identity() {
        let mut tape = Tape::new();
        let x = mat(3, 2, &[1.0, -2.0, 0.5, 4.0, 3.0, 0.25]);
        let i = tape.constant(Tensor::identity(3));
        let xv = tape.leaf(x.clone());
        let y = tape.matmul(i, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn mse_of_equal_inputs_is_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let m = tape.mse(a, a).unwrap();
        assert_eq!(tape.scalar(m), 0.0);
    }

    #[test]
    fn sum_backward_is_all_ones() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(2, 3, &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]));
        let s = tape.sum(a).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        match tape.matmul(a, b).unwrap_err() {
            Error::Shape { op, left, right } => {
                assert_eq!(op, "matmul");
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected error {other:?}"),
        }
        let c = tape.leaf(Tensor::zeros(vec![3, 2]));
        assert!(matches!(tape.add(a, c), Err(Error::Shape { .. })));
    }

    #[test]
    fn hinge_kink_has_zero_subgradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap());
        let h = tape.hinge(a).unwrap();
        let s = tape.sum(h).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::vector(vec![3.0, 4.0]).unwrap());
        let m = tape.mul(a, b).unwrap();
        let s = tape.sum(m).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[3.0, 4.0]);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn gather_scatters_gradient_back() {
        let mut tape = Tape::new();
        let table = tape.leaf(mat(3, 2, &[0.0; 6]));
        let rows = tape.gather_rows(table, &[2, 0, 2]).unwrap();
        let s = tape.sum(rows).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(table).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(matches!(tape.gather_rows(table, &[3]), Err(Error::Internal(_))));
    }

    #[test]
    fn masked_row_softmax_rows_are_distributions() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(2, 3, &[0.3, 9.0, -1.0, 2.0, 1.0, 0.0]));
        let s = tape.row_softmax(a, 1.0, Some(&[true, false, true])).unwrap();
        let v = tape.value(s);
        for i in 0..2 {
            assert_eq!(v.get2(i, 1), 0.0);
            assert!((v.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut tape = Tape::new();
            let a = tape.leaf(mat(2, 2, &[0.1, 0.7, -0.3, 0.2]));
            let b = tape.leaf(mat(2, 2, &[0.5, -0.1, 0.9, 0.4]));
            let m = tape.matmul(a, b).unwrap();
            let t = tape.tanh(m).unwrap();
            let sm = tape.row_softmax(t, 2.0, None).unwrap();
            let l = tape.sum(sm).unwrap();
            let lp = tape.row_log_softmax(t, 1.0, None).unwrap();
            let l2 = tape.pick(lp, 1).unwrap();
            let tot = tape.add(l, l2).unwrap();
            let g = tape.backward(tot).unwrap();
            (g.get(a).unwrap().to_vec(), g.get(b).unwrap().to_vec())
        };
        let (a1, b1) = build();
        let (a2, b2) = build();
        assert_eq!(a1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), a2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(b1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
