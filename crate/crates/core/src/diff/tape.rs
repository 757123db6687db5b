//! Operation recording and reverse sweep.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Ops take
//! and return [`Var`] handles; [`Tape::backward`] walks the record in
//! reverse from a scalar and leaves gradients on the leaf variables.

use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, keeping columns: `r x c -> 1 x c`.
    Rows,
    /// Reduce over columns, keeping rows: `r x c -> r x 1`.
    Cols,
}

/// Fixed row-normalized sparse operator `y_i = mean_{j in N(i)} x_j`,
/// with empty rows producing zeros.
#[derive(Clone, Debug)]
pub struct NeighborMean {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl NeighborMean {
    pub fn new(lists: impl IntoIterator<Item = impl AsRef<[usize]>>) -> Self {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        for list in lists {
            indices.extend_from_slice(list.as_ref());
            offsets.push(indices.len());
        }
        NeighborMean { offsets, indices }
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    fn row(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// 1 for rows with at least one neighbor, 0 otherwise.
    pub fn nonempty_mask(&self) -> Tensor {
        Tensor::column(
            (0..self.num_rows())
                .map(|i| if self.row(i).is_empty() { 0.0 } else { 1.0 })
                .collect(),
        )
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Mean(Var, Axis),
    Sum(Var),
    Square(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    ReverseGrad(Var),
    NeighborMean(Var, Arc<NeighborMean>),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Leaf that receives a gradient on backward.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let [r, c] = t.shape();
        self.push(r, c, t.into_data(), true, Op::Leaf)
    }

    /// Leaf that never accumulates a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let [r, c] = t.shape();
        self.push(r, c, t.into_data(), false, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        let n = self.node(v);
        [n.rows, n.cols]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.rows, n.cols, n.value.clone()).expect("node shape is consistent")
    }

    /// Value of a `1 x 1` variable.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        debug_assert_eq!(n.value.len(), 1);
        n.value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Gradient left on a leaf by the last [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, &sa, &sb));
        }
        Ok((sa[0], sa[1]))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ([m, k], [k2, n]) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::dim("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(m, n, out, rg, Op::MatMul(a, b)))
    }

    fn zip(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (r, c) = self.same_shape(op_name, a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(r, c, out, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x + 1 * row`, broadcasting a `1 x c` row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let ([r, c], sb) = (self.shape(x), self.shape(row));
        if sb != [1, c] {
            return Err(Error::dim("add_row", &[r, c], &sb));
        }
        let bias = self.value(row);
        let out = self
            .value(x)
            .chunks_exact(c.max(1))
            .flat_map(|xr| xr.iter().zip(bias).map(|(a, b)| a + b))
            .collect();
        let rg = self.rg(&[x, row]);
        Ok(self.push(r, c, out, rg, Op::AddRow(x, row)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let [r, c] = self.shape(x);
        let out = self.value(x).iter().map(|v| v * s).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(r, c, out, rg, Op::Scale(x, s)))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::param("concat of zero tensors"));
        };
        let rows = self.shape(first)[0];
        for &p in parts {
            if self.shape(p)[0] != rows {
                return Err(Error::dim("concat", &self.shape(first), &self.shape(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(rows, cols, out, rg, Op::Concat(parts.to_vec())))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let [r, c] = self.shape(x);
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::dim("select_rows", &[r, c], &[bad]));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(rows.len(), c, out, rg, Op::SelectRows(x, rows.to_vec())))
    }

    pub fn mean(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let [r, c] = self.shape(x);
        let v = self.value(x);
        let (shape, out) = match axis {
            Axis::Rows => {
                if r == 0 {
                    return Err(Error::dim("mean(rows)", &[r, c], &[]));
                }
                let mut acc = vec![0.0; c];
                for row in v.chunks_exact(c.max(1)) {
                    for (a, b) in acc.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= r as f64);
                ([1, c], acc)
            }
            Axis::Cols => {
                if c == 0 {
                    return Err(Error::dim("mean(cols)", &[r, c], &[]));
                }
                let out = v.chunks_exact(c).map(|row| row.iter().sum::<f64>() / c as f64).collect();
                ([r, 1], out)
            }
        };
        let rg = self.rg(&[x]);
        Ok(self.push(shape[0], shape[1], out, rg, Op::Mean(x, axis)))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::dim("mean_all", &self.shape(x), &[]));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        Ok(self.push(1, 1, vec![total], rg, Op::Sum(x)))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let [r, c] = self.shape(x);
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.rg(&[x]);
        self.push(r, c, out, rg, op)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        Ok(self.map(x, |v| v * v, Op::Square(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        Ok(self.map(x, sigmoid, Op::Sigmoid(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        Ok(self.map(x, f64::tanh, Op::Tanh(x)))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        Ok(self.map(x, f64::ln, Op::Log(x)))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let [r, c] = self.shape(x);
        if c == 0 {
            return Err(Error::dim("softmax", &[r, c], &[]));
        }
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(r, c, out, rg, Op::Softmax(x)))
    }

    /// Row-wise `x - logsumexp(x)`, stable for confident logits.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let [r, c] = self.shape(x);
        if c == 0 {
            return Err(Error::dim("log_softmax", &[r, c], &[]));
        }
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(r, c, out, rg, Op::LogSoftmax(x)))
    }

    /// Identity forward; the incoming gradient is negated on the way back.
    pub fn reverse_grad(&mut self, x: Var) -> Var {
        let [r, c] = self.shape(x);
        let out = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(r, c, out, rg, Op::ReverseGrad(x))
    }

    pub fn neighbor_mean(&mut self, x: Var, agg: &Arc<NeighborMean>) -> Result<Var> {
        let [r, c] = self.shape(x);
        if agg.num_rows() != r || agg.indices.iter().any(|&j| j >= r) {
            return Err(Error::dim("neighbor_mean", &[r, c], &[agg.num_rows()]));
        }
        let src = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let list = agg.row(i);
            if list.is_empty() {
                continue;
            }
            let dst = &mut out[i * c..(i + 1) * c];
            for &j in list {
                for (d, s) in dst.iter_mut().zip(&src[j * c..(j + 1) * c]) {
                    *d += s;
                }
            }
            let w = 1.0 / list.len() as f64;
            dst.iter_mut().for_each(|d| *d *= w);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(r, c, out, rg, Op::NeighborMean(x, Arc::clone(agg))))
    }

    /// Reverse sweep from a `1 x 1` root. Gradients of earlier backward
    /// calls on this tape are overwritten.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.shape(root) != [1, 1] {
            return Err(Error::dim("backward", &self.shape(root), &[1, 1]));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.node(root).requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf => {
                    leaf_grads.push((id, g));
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ([m, k], n) = (self.shape(*a), cols);
                    if self.requires_grad(*a) {
                        let ga = acc(&mut grads, &self.nodes, *a);
                        gemm(m, n, k, &g, false, &self.nodes[b.0].value, true, ga, 1.0);
                    }
                    if self.requires_grad(*b) {
                        let gb = acc(&mut grads, &self.nodes, *b);
                        gemm(k, m, n, &self.nodes[a.0].value, true, &g, false, gb, 1.0);
                    }
                }
                Op::Add(a, b) => {
                    add_into(&mut grads, &self.nodes, *a, &g, 1.0);
                    add_into(&mut grads, &self.nodes, *b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads, &self.nodes, *a, &g, 1.0);
                    add_into(&mut grads, &self.nodes, *b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires_grad(a) {
                        let bv = &self.nodes[b.0].value;
                        let ga = acc(&mut grads, &self.nodes, a);
                        for ((d, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                            *d += gi * bi;
                        }
                    }
                    if self.requires_grad(b) {
                        let av = &self.nodes[a.0].value;
                        let gb = acc(&mut grads, &self.nodes, b);
                        for ((d, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                            *d += gi * ai;
                        }
                    }
                }
                Op::AddRow(x, row) => {
                    add_into(&mut grads, &self.nodes, *x, &g, 1.0);
                    if self.requires_grad(*row) {
                        let gr = acc(&mut grads, &self.nodes, *row);
                        for grow in g.chunks_exact(cols.max(1)) {
                            for (d, v) in gr.iter_mut().zip(grow) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::Scale(x, s) => add_into(&mut grads, &self.nodes, *x, &g, *s),
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.shape(p)[1];
                        if self.requires_grad(p) {
                            let gp = acc(&mut grads, &self.nodes, p);
                            for r in 0..rows {
                                let src = &g[r * cols + offset..r * cols + offset + pc];
                                for (d, v) in gp[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                    *d += v;
                                }
                            }
                        }
                        offset += pc;
                    }
                }
                Op::SelectRows(x, idx) => {
                    if self.requires_grad(*x) {
                        let gx = acc(&mut grads, &self.nodes, *x);
                        for (k, &i) in idx.iter().enumerate() {
                            for (d, v) in gx[i * cols..(i + 1) * cols].iter_mut().zip(&g[k * cols..(k + 1) * cols]) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::Mean(x, axis) => {
                    let [xr, xc] = self.shape(*x);
                    let gx = acc(&mut grads, &self.nodes, *x);
                    match axis {
                        Axis::Rows => {
                            let w = 1.0 / xr as f64;
                            for row in gx.chunks_exact_mut(xc.max(1)) {
                                for (d, v) in row.iter_mut().zip(&g) {
                                    *d += v * w;
                                }
                            }
                        }
                        Axis::Cols => {
                            let w = 1.0 / xc as f64;
                            for (row, v) in gx.chunks_exact_mut(xc).zip(&g) {
                                row.iter_mut().for_each(|d| *d += v * w);
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    let gx = acc(&mut grads, &self.nodes, *x);
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Square(x) => unary_back(&mut grads, &self.nodes, *x, &g, |xi, _| 2.0 * xi, id),
                Op::Sigmoid(x) => unary_back(&mut grads, &self.nodes, *x, &g, |_, y| y * (1.0 - y), id),
                Op::Tanh(x) => unary_back(&mut grads, &self.nodes, *x, &g, |_, y| 1.0 - y * y, id),
                Op::Log(x) => unary_back(&mut grads, &self.nodes, *x, &g, |xi, _| 1.0 / xi, id),
                Op::Softmax(x) => {
                    let y = &self.nodes[id].value;
                    let gx = acc(&mut grads, &self.nodes, *x);
                    for ((grow, yrow), drow) in g.chunks_exact(cols).zip(y.chunks_exact(cols)).zip(gx.chunks_exact_mut(cols)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yi * (gi - dot);
                        }
                    }
                }
                Op::LogSoftmax(x) => {
                    let y = &self.nodes[id].value;
                    let gx = acc(&mut grads, &self.nodes, *x);
                    for ((grow, yrow), drow) in g.chunks_exact(cols).zip(y.chunks_exact(cols)).zip(gx.chunks_exact_mut(cols)) {
                        let total: f64 = grow.iter().sum();
                        for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += gi - yi.exp() * total;
                        }
                    }
                }
                Op::ReverseGrad(x) => add_into(&mut grads, &self.nodes, *x, &g, -1.0),
                Op::NeighborMean(x, agg) => {
                    let agg = Arc::clone(agg);
                    let gx = acc(&mut grads, &self.nodes, *x);
                    for i in 0..rows {
                        let list = agg.row(i);
                        if list.is_empty() {
                            continue;
                        }
                        let w = 1.0 / list.len() as f64;
                        let gi = &g[i * cols..(i + 1) * cols];
                        for &j in list {
                            for (d, v) in gx[j * cols..(j + 1) * cols].iter_mut().zip(gi) {
                                *d += v * w;
                            }
                        }
                    }
                }
            }
        }
        for (id, g) in leaf_grads {
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'g mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
}

fn add_into(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, g: &[f64], s: f64) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let dst = acc(grads, nodes, v);
    if s == 1.0 {
        dst.iter_mut().zip(g).for_each(|(d, x)| *d += x);
    } else if s == -1.0 {
        dst.iter_mut().zip(g).for_each(|(d, x)| *d -= x);
    } else {
        dst.iter_mut().zip(g).for_each(|(d, x)| *d += x * s);
    }
}

fn unary_back(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    x: Var,
    g: &[f64],
    local: impl Fn(f64, f64) -> f64,
    out: usize,
) {
    if !nodes[x.0].requires_grad {
        return;
    }
    let xv = &nodes[x.0].value;
    let yv = &nodes[out].value;
    let dst = acc(grads, nodes, x);
    for (((d, gi), xi), yi) in dst.iter_mut().zip(g).zip(xv).zip(yv) {
        *d += gi * local(*xi, *yi);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = a' * b' + beta * c` for row-major operands, where `'` is an optional
/// transpose. `a'` is `m x k`, `b'` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the m*k, k*n and m*n buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
