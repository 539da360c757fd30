//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order. [`Var`] is a cheap
//! handle into it. Calling [`Graph::backward`] on a scalar walks the record
//! once in reverse and adds the resulting gradients into the persistent grad
//! buffer of every node that tracks gradients, so repeated calls accumulate.

use std::cell::RefCell;
use std::fmt;

use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    AddScalar(usize),
    Scale(usize, f64),
    Neg(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    ClampMin(usize, f64),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    Softmax(usize),
    LogSoftmax(usize),
    /// Row-wise gather of one column per row; the indices are stored.
    Pick(usize, Vec<usize>),
    /// Row-wise maximum over all columns except the excluded one; stores the
    /// winning column per row.
    MaxExcluding(usize, Vec<usize>),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    tracked: bool,
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.nodes.borrow().len()).finish()
    }
}

/// Handle to a tensor recorded in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf flagged for gradient (parameter or input being differentiated).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            grad: None,
            op,
            tracked,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Reset every accumulated gradient buffer.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Back-propagate from a scalar root. Gradients are added to any that are
    /// already stored.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        if !std::ptr::eq(root.graph, self) {
            return Err(Error::Contract("backward root belongs to another graph".into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        let root_shape = nodes[root.id].value.shape().to_vec();
        if !root_shape.is_empty() {
            return Err(Error::Contract(format!("backward needs a scalar root, got shape {root_shape:?}")));
        }

        let mut pending: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        pending[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let Some(g) = pending[id].take() else { continue };
            if !nodes[id].tracked {
                continue;
            }
            propagate(&nodes, id, &g, &mut pending);
            let node = &mut nodes[id];
            match node.grad.as_mut() {
                Some(buf) => {
                    for (b, v) in buf.data_mut().iter_mut().zip(&g) {
                        *b += v;
                    }
                }
                None => {
                    node.grad = Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(pending: &mut [Option<Vec<f64>>], id: usize, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = pending[id].get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], pending: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out = &node.value;
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].tracked;

    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if wants(*a) {
                accumulate(pending, *a, m * k, |buf| matmul_nt_into(g, bv.data(), buf, m, n, k));
            }
            if wants(*b) {
                accumulate(pending, *b, k * n, |buf| matmul_tn_into(av.data(), g, buf, m, k, n));
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if wants(*a) {
                accumulate(pending, *a, g.len(), |buf| add_into(buf, g, 1.0));
            }
            if wants(*b) {
                accumulate(pending, *b, g.len(), |buf| add_into(buf, g, sign));
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if wants(*a) {
                accumulate(pending, *a, g.len(), |buf| {
                    for ((o, gi), bi) in buf.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                });
            }
            if wants(*b) {
                accumulate(pending, *b, g.len(), |buf| {
                    for ((o, gi), ai) in buf.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                });
            }
        }
        Op::AddRow(a, b) => {
            if wants(*a) {
                accumulate(pending, *a, g.len(), |buf| add_into(buf, g, 1.0));
            }
            if wants(*b) {
                let n = val(*b).len();
                accumulate(pending, *b, n, |buf| {
                    for row in g.chunks(n) {
                        add_into(buf, row, 1.0);
                    }
                });
            }
        }
        Op::AddScalar(a) => {
            if wants(*a) {
                accumulate(pending, *a, g.len(), |buf| add_into(buf, g, 1.0));
            }
        }
        Op::Scale(a, c) => {
            if wants(*a) {
                accumulate(pending, *a, g.len(), |buf| add_into(buf, g, *c));
            }
        }
        Op::Neg(a) => {
            if wants(*a) {
                accumulate(pending, *a, g.len(), |buf| add_into(buf, g, -1.0));
            }
        }
        Op::Relu(a) => {
            if wants(*a) {
                let x = val(*a).data();
                accumulate(pending, *a, g.len(), |buf| {
                    for ((o, gi), xi) in buf.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
        }
        Op::Exp(a) => {
            if wants(*a) {
                accumulate(pending, *a, g.len(), |buf| {
                    for ((o, gi), yi) in buf.iter_mut().zip(g).zip(out.data()) {
                        *o += gi * yi;
                    }
                });
            }
        }
        Op::Log(a) => {
            if wants(*a) {
                let x = val(*a).data();
                accumulate(pending, *a, g.len(), |buf| {
                    for ((o, gi), xi) in buf.iter_mut().zip(g).zip(x) {
                        *o += gi / xi;
                    }
                });
            }
        }
        Op::ClampMin(a, floor) => {
            if wants(*a) {
                let x = val(*a).data();
                accumulate(pending, *a, g.len(), |buf| {
                    for ((o, gi), xi) in buf.iter_mut().zip(g).zip(x) {
                        if *xi > *floor {
                            *o += gi;
                        }
                    }
                });
            }
        }
        Op::Sum(a) | Op::Mean(a) => {
            if wants(*a) {
                let n = val(*a).len();
                let scale = if matches!(node.op, Op::Mean(_)) { g[0] / n as f64 } else { g[0] };
                accumulate(pending, *a, n, |buf| {
                    for o in buf.iter_mut() {
                        *o += scale;
                    }
                });
            }
        }
        Op::SumRows(a) => {
            if wants(*a) {
                let n = val(*a).cols();
                accumulate(pending, *a, g.len() * n, |buf| {
                    for (row, gi) in buf.chunks_mut(n).zip(g) {
                        for o in row {
                            *o += gi;
                        }
                    }
                });
            }
        }
        Op::Softmax(a) => {
            if wants(*a) {
                let n = out.cols();
                accumulate(pending, *a, g.len(), |buf| {
                    for ((o, gr), pr) in buf.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                        let dot: f64 = gr.iter().zip(pr).map(|(x, y)| x * y).sum();
                        for ((oi, gi), pi) in o.iter_mut().zip(gr).zip(pr) {
                            *oi += pi * (gi - dot);
                        }
                    }
                });
            }
        }
        Op::LogSoftmax(a) => {
            if wants(*a) {
                let n = out.cols();
                accumulate(pending, *a, g.len(), |buf| {
                    for ((o, gr), lr) in buf.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                        let total: f64 = gr.iter().sum();
                        for ((oi, gi), li) in o.iter_mut().zip(gr).zip(lr) {
                            *oi += gi - li.exp() * total;
                        }
                    }
                });
            }
        }
        Op::Pick(a, cols) | Op::MaxExcluding(a, cols) => {
            if wants(*a) {
                let n = val(*a).cols();
                accumulate(pending, *a, g.len() * n, |buf| {
                    for (r, (&c, gi)) in cols.iter().zip(g).enumerate() {
                        buf[r * n + c] += gi;
                    }
                });
            }
        }
    }
}

fn add_into(buf: &mut [f64], g: &[f64], scale: f64) {
    if scale == 1.0 {
        for (o, v) in buf.iter_mut().zip(g) {
            *o += v;
        }
    } else {
        for (o, v) in buf.iter_mut().zip(g) {
            *o += scale * v;
        }
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let n = x.cols();
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e /= total;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("softmax shape")
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let n = x.cols();
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    Tensor::new(x.shape().to_vec(), out).expect("log_softmax shape")
}

/// Row-stable softmax of a plain tensor (no recording).
pub fn softmax(x: &Tensor) -> Tensor {
    softmax_rows(x)
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.graph.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    /// Value of a scalar node.
    pub fn item(&self) -> f64 {
        self.with_value(Tensor::item)
    }

    /// Accumulated gradient, if a backward pass reached this node.
    pub fn grad(&self) -> Option<Tensor> {
        self.graph.nodes.borrow()[self.id].grad.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.tracked(self.id)
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'g> {
        let value = self.with_value(f);
        let tracked = self.requires_grad();
        self.graph.push(value, op, tracked)
    }

    fn same_graph(&self, other: &Var<'g>) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(Error::Contract("operands belong to different graphs".into()))
        }
    }

    fn binary(&self, other: Var<'g>, op: Op, f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>) -> Result<Var<'g>> {
        self.same_graph(&other)?;
        let value = {
            let nodes = self.graph.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        let tracked = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(value, op, tracked))
    }

    pub fn matmul(&self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::MatMul(self.id, rhs.id), |a, b| {
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::shape("matmul", a.shape(), b.shape()));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; m * n];
            matmul_into(a.data(), b.data(), &mut out, m, k, n);
            Tensor::matrix(m, n, out)
        })
    }

    pub fn add(&self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::Add(self.id, rhs.id), |a, b| a.zip_map(b, "add", |x, y| x + y))
    }

    pub fn sub(&self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::Sub(self.id, rhs.id), |a, b| a.zip_map(b, "sub", |x, y| x - y))
    }

    pub fn mul(&self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::Mul(self.id, rhs.id), |a, b| a.zip_map(b, "mul", |x, y| x * y))
    }

    /// Broadcast a length-n vector over every row of an m×n matrix.
    pub fn add_row(&self, row: Var<'g>) -> Result<Var<'g>> {
        self.binary(row, Op::AddRow(self.id, row.id), |a, b| {
            if a.rank() != 2 || b.rank() != 1 || a.cols() != b.len() {
                return Err(Error::shape("add_row", a.shape(), b.shape()));
            }
            let mut out = a.clone();
            for r in out.data_mut().chunks_mut(b.len()) {
                for (o, v) in r.iter_mut().zip(b.data()) {
                    *o += v;
                }
            }
            Ok(out)
        })
    }

    pub fn add_scalar(&self, c: f64) -> Var<'g> {
        self.unary(Op::AddScalar(self.id), |t| t.map(|v| v + c))
    }

    pub fn scale(&self, c: f64) -> Var<'g> {
        self.unary(Op::Scale(self.id, c), |t| t.map(|v| v * c))
    }

    pub fn neg(&self) -> Var<'g> {
        self.unary(Op::Neg(self.id), |t| t.map(|v| -v))
    }

    /// `max(x, 0)`; the derivative at exactly 0 is 0.
    pub fn relu(&self) -> Var<'g> {
        self.unary(Op::Relu(self.id), |t| t.map(|v| if v > 0.0 { v } else { 0.0 }))
    }

    pub fn exp(&self) -> Var<'g> {
        self.unary(Op::Exp(self.id), |t| t.map(f64::exp))
    }

    pub fn log(&self) -> Result<Var<'g>> {
        if let Some(bad) = self.with_value(|t| t.data().iter().copied().find(|v| !(*v > 0.0))) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("argument {bad} is not positive"),
            });
        }
        Ok(self.unary(Op::Log(self.id), |t| t.map(f64::ln)))
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&self, floor: f64) -> Var<'g> {
        self.unary(Op::ClampMin(self.id, floor), |t| {
            t.map(|v| if v > floor || v.is_nan() { v } else { floor })
        })
    }

    pub fn sum(&self) -> Var<'g> {
        self.unary(Op::Sum(self.id), |t| Tensor::scalar(t.sum()))
    }

    pub fn mean(&self) -> Var<'g> {
        self.unary(Op::Mean(self.id), |t| Tensor::scalar(t.sum() / t.len() as f64))
    }

    /// Per-row sum of a matrix, giving a vector.
    pub fn sum_rows(&self) -> Var<'g> {
        self.unary(Op::SumRows(self.id), |t| {
            Tensor::vector(t.row_iter().map(|r| r.iter().sum()).collect())
        })
    }

    pub fn softmax(&self) -> Var<'g> {
        self.unary(Op::Softmax(self.id), softmax_rows)
    }

    pub fn log_softmax(&self) -> Var<'g> {
        self.unary(Op::LogSoftmax(self.id), log_softmax_rows)
    }

    /// Take column `cols[r]` from each row `r`.
    pub fn pick(&self, cols: &[usize]) -> Result<Var<'g>> {
        let value = self.with_value(|t| -> Result<Tensor> {
            check_row_indices(t, cols, "pick")?;
            Ok(Tensor::vector(cols.iter().enumerate().map(|(r, &c)| t.row(r)[c]).collect()))
        })?;
        let tracked = self.requires_grad();
        Ok(self.graph.push(value, Op::Pick(self.id, cols.to_vec()), tracked))
    }

    /// Row-wise maximum over every column except `excluded[r]`. Ties go to the
    /// lowest column index.
    pub fn max_excluding(&self, excluded: &[usize]) -> Result<Var<'g>> {
        let (value, winners) = self.with_value(|t| -> Result<(Tensor, Vec<usize>)> {
            check_row_indices(t, excluded, "max_excluding")?;
            if t.cols() < 2 {
                return Err(Error::Contract("max_excluding needs at least two columns".into()));
            }
            let mut vals = Vec::with_capacity(excluded.len());
            let mut winners = Vec::with_capacity(excluded.len());
            for (r, &skip) in excluded.iter().enumerate() {
                let (mut best, mut best_v) = (usize::MAX, f64::NEG_INFINITY);
                for (c, &v) in t.row(r).iter().enumerate() {
                    if c != skip && (best == usize::MAX || v > best_v) {
                        best = c;
                        best_v = v;
                    }
                }
                vals.push(best_v);
                winners.push(best);
            }
            Ok((Tensor::vector(vals), winners))
        })?;
        let tracked = self.requires_grad();
        Ok(self.graph.push(value, Op::MaxExcluding(self.id, winners), tracked))
    }
}

fn check_row_indices(t: &Tensor, cols: &[usize], op: &'static str) -> Result<()> {
    if t.rank() != 2 || t.rows() != cols.len() {
        return Err(Error::shape(op, t.shape(), &[cols.len()]));
    }
    if let Some(&bad) = cols.iter().find(|&&c| c >= t.cols()) {
        return Err(Error::Label {
            label: bad,
            classes: t.cols(),
        });
    }
    Ok(())
}
