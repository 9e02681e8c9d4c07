//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its output value and the ids of its
//! inputs. Node ids increase in execution order, so a reverse sweep over ids is
//! a valid topological order for backpropagation.

use std::cell::{Ref, RefCell};

use super::dense::Tensor;
use crate::error::{Error, Result};

/// Additive mask value standing in for negative infinity.
pub const MASK_SENTINEL: f64 = -1e9;

/// Floor applied before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, producing `1×cols`.
    Rows,
    /// Reduce over columns, producing `rows×1`.
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary(BinaryKind, usize, usize),
    Affine { x: usize, scale: f64 },
    Transpose(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Relu(usize),
    Exp(usize),
    Ln(usize),
    Sum(usize),
    SumAxis(usize, Axis),
    Rows { x: usize, start: usize },
    ConcatRows(Vec<usize>),
    NormalizeRows(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of executed operations. Confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf; receives a gradient on [`Var::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value_of(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn unary(&self, x: usize, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.requires(&[x]);
        self.push(value, op, rg)
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

/// Sums `g` down to `shape`, undoing a broadcast.
fn reduce_to(g: &Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let oi = if shape.0 == 1 { 0 } else { i };
            let oj = if shape.1 == 1 { 0 } else { j };
            out[(oi, oj)] += g[(i, j)];
        }
    }
    out
}

fn at(t: &Tensor, i: usize, j: usize) -> f64 {
    t[(
        if t.rows() == 1 { 0 } else { i },
        if t.cols() == 1 { 0 } else { j },
    )]
}

fn softmax_forward(x: &Tensor, mask: Option<&Tensor>) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for i in 0..x.rows() {
        let row = &mut out.data_mut()[i * cols..(i + 1) * cols];
        if let Some(m) = mask {
            for (v, &mv) in row.iter_mut().zip(m.row_slice(i)) {
                *v += mv;
            }
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn log_softmax_forward(x: &Tensor, mask: Option<&Tensor>) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for i in 0..x.rows() {
        let row = &mut out.data_mut()[i * cols..(i + 1) * cols];
        if let Some(m) = mask {
            for (v, &mv) in row.iter_mut().zip(m.row_slice(i)) {
                *v += mv;
            }
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

fn check_mask(x: &Tensor, mask: Option<&Tensor>, op: &'static str) -> Result<()> {
    let Some(m) = mask else { return Ok(()) };
    if m.shape() != x.shape() {
        return Err(Error::Dimension {
            op,
            left: x.shape(),
            right: m.shape(),
        });
    }
    for i in 0..m.rows() {
        if m.row_slice(i).iter().all(|&v| v != 0.0) {
            return Err(Error::Contract(format!("{op}: row {i} is fully masked")));
        }
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id).clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.value_of(self.id).shape()
    }

    pub fn item(&self) -> f64 {
        self.tape.value_of(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(&[self.id])
    }

    /// Gradient accumulated by the last [`Var::backward`] call.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grads.borrow().get(self.id).cloned().flatten()
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self
            .tape
            .value_of(self.id)
            .matmul(&other.tape.value_of(other.id))?;
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    fn binary(self, other: Var<'t>, kind: BinaryKind, name: &'static str) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value_of(self.id);
            let b = self.tape.value_of(other.id);
            let (ra, ca) = a.shape();
            let (rb, cb) = b.shape();
            let dims = broadcast_dim(ra, rb).zip(broadcast_dim(ca, cb));
            let Some((r, c)) = dims else {
                return Err(Error::Dimension {
                    op: name,
                    left: a.shape(),
                    right: b.shape(),
                });
            };
            Tensor::from_fn(r, c, |i, j| {
                let (x, y) = (at(&a, i, j), at(&b, i, j));
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self
            .tape
            .push(value, Op::Binary(kind, self.id, other.id), rg))
    }

    /// Elementwise sum; either side may broadcast along a unit dimension.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Add, "add")
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Sub, "sub")
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Mul, "mul")
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Div, "div")
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        let value = self.tape.value_of(self.id).map(|v| scale * v + shift);
        self.tape
            .unary(self.id, value, Op::Affine { x: self.id, scale })
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        self.affine(factor, 0.0)
    }

    pub fn transpose(self) -> Var<'t> {
        let value = self.tape.value_of(self.id).transpose();
        self.tape.unary(self.id, value, Op::Transpose(self.id))
    }

    /// Row-wise softmax of `self + mask`. The mask is a constant.
    pub fn softmax_rows(self, mask: Option<&Tensor>) -> Result<Var<'t>> {
        let value = {
            let x = self.tape.value_of(self.id);
            check_mask(&x, mask, "softmax_rows")?;
            softmax_forward(&x, mask)
        };
        Ok(self.tape.unary(self.id, value, Op::Softmax(self.id)))
    }

    /// Row-wise log-softmax of `self + mask`.
    pub fn log_softmax_rows(self, mask: Option<&Tensor>) -> Result<Var<'t>> {
        let value = {
            let x = self.tape.value_of(self.id);
            check_mask(&x, mask, "log_softmax_rows")?;
            log_softmax_forward(&x, mask)
        };
        Ok(self.tape.unary(self.id, value, Op::LogSoftmax(self.id)))
    }

    pub fn relu(self) -> Var<'t> {
        let value = self.tape.value_of(self.id).map(|v| v.max(0.0));
        self.tape.unary(self.id, value, Op::Relu(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        let value = self.tape.value_of(self.id).map(f64::exp);
        self.tape.unary(self.id, value, Op::Exp(self.id))
    }

    /// Natural log with inputs floored at [`LOG_FLOOR`].
    pub fn ln(self) -> Var<'t> {
        let value = self.tape.value_of(self.id).map(|v| v.max(LOG_FLOOR).ln());
        self.tape.unary(self.id, value, Op::Ln(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let value = Tensor::scalar(self.tape.value_of(self.id).sum());
        self.tape.unary(self.id, value, Op::Sum(self.id))
    }

    pub fn sum_axis(self, axis: Axis) -> Var<'t> {
        let value = {
            let x = self.tape.value_of(self.id);
            match axis {
                Axis::Rows => {
                    Tensor::from_fn(1, x.cols(), |_, j| (0..x.rows()).map(|i| x[(i, j)]).sum())
                }
                Axis::Cols => Tensor::from_fn(x.rows(), 1, |i, _| x.row_slice(i).iter().sum()),
            }
        };
        self.tape.unary(self.id, value, Op::SumAxis(self.id, axis))
    }

    /// Rows `start..end` as a new `(end-start)×cols` value.
    pub fn rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = {
            let x = self.tape.value_of(self.id);
            if start >= end || end > x.rows() {
                return Err(Error::Contract(format!(
                    "row range {start}..{end} invalid for {} rows",
                    x.rows()
                )));
            }
            Tensor::new(
                end - start,
                x.cols(),
                x.data()[start * x.cols()..end * x.cols()].to_vec(),
            )?
        };
        Ok(self
            .tape
            .unary(self.id, value, Op::Rows { x: self.id, start }))
    }

    /// Mean of rows `start..end`, as `1×cols`.
    pub fn mean_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let count = end.saturating_sub(start) as f64;
        Ok(self
            .rows(start, end)?
            .sum_axis(Axis::Rows)
            .scale(1.0 / count))
    }

    /// Divides each row by its Euclidean norm.
    pub fn normalize_rows(self) -> Result<Var<'t>> {
        let value = {
            let x = self.tape.value_of(self.id);
            let mut out = x.clone();
            for i in 0..x.rows() {
                let norm = x.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::Degenerate(format!("row {i} has zero norm")));
                }
                for j in 0..x.cols() {
                    out[(i, j)] /= norm;
                }
            }
            out
        };
        Ok(self.tape.unary(self.id, value, Op::NormalizeRows(self.id)))
    }

    /// Runs reverse-mode accumulation from this scalar.
    pub fn backward(&self) -> Result<()> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.id];
        if root.value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar, got {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[self.id] = Some(Tensor::scalar(1.0));

        for id in (0..=self.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, contribution) in local_grads(&nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }

        for (id, node) in nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[id].is_none() {
                let (r, c) = node.value.shape();
                grads[id] = Some(Tensor::zeros(r, c));
            }
        }
        let mut out = self.tape.grads.borrow_mut();
        *out = grads;
        Ok(())
    }
}

fn local_grads(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let val = |id: usize| &nodes[id].value;
    let y = &node.value;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::MatMul(a, b) => {
            let ga = g.matmul(&val(*b).transpose()).expect("matmul grad shape");
            let gb = val(*a).transpose().matmul(g).expect("matmul grad shape");
            vec![(*a, ga), (*b, gb)]
        }
        Op::Binary(kind, a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (ga, gb) = match kind {
                BinaryKind::Add => (g.clone(), g.clone()),
                BinaryKind::Sub => (g.clone(), g.map(|v| -v)),
                BinaryKind::Mul => (
                    Tensor::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * at(bv, i, j)),
                    Tensor::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * at(av, i, j)),
                ),
                BinaryKind::Div => (
                    Tensor::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] / at(bv, i, j)),
                    Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                        let d = at(bv, i, j);
                        -g[(i, j)] * at(av, i, j) / (d * d)
                    }),
                ),
            };
            vec![
                (*a, reduce_to(&ga, av.shape())),
                (*b, reduce_to(&gb, bv.shape())),
            ]
        }
        Op::Affine { x, scale } => vec![(*x, g.map(|v| v * scale))],
        Op::Transpose(x) => vec![(*x, g.transpose())],
        Op::Softmax(x) => {
            let mut gx = g.clone();
            for i in 0..y.rows() {
                let dot: f64 = y
                    .row_slice(i)
                    .iter()
                    .zip(g.row_slice(i))
                    .map(|(a, b)| a * b)
                    .sum();
                for j in 0..y.cols() {
                    gx[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                }
            }
            vec![(*x, gx)]
        }
        Op::LogSoftmax(x) => {
            let mut gx = g.clone();
            for i in 0..y.rows() {
                let total: f64 = g.row_slice(i).iter().sum();
                for j in 0..y.cols() {
                    gx[(i, j)] = g[(i, j)] - y[(i, j)].exp() * total;
                }
            }
            vec![(*x, gx)]
        }
        Op::Relu(x) => {
            let xv = val(*x);
            let gx = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                if xv[(i, j)] > 0.0 {
                    g[(i, j)]
                } else {
                    0.0
                }
            });
            vec![(*x, gx)]
        }
        Op::Exp(x) => {
            let gx = Tensor::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * y[(i, j)]);
            vec![(*x, gx)]
        }
        Op::Ln(x) => {
            let xv = val(*x);
            let gx = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                let v = xv[(i, j)];
                if v > LOG_FLOOR {
                    g[(i, j)] / v
                } else {
                    0.0
                }
            });
            vec![(*x, gx)]
        }
        Op::Sum(x) => {
            let (r, c) = val(*x).shape();
            vec![(*x, Tensor::full(r, c, g.item()))]
        }
        Op::SumAxis(x, axis) => {
            let (r, c) = val(*x).shape();
            let gx = match axis {
                Axis::Rows => Tensor::from_fn(r, c, |_, j| g[(0, j)]),
                Axis::Cols => Tensor::from_fn(r, c, |i, _| g[(i, 0)]),
            };
            vec![(*x, gx)]
        }
        Op::Rows { x, start } => {
            let (r, c) = val(*x).shape();
            let mut gx = Tensor::zeros(r, c);
            for i in 0..g.rows() {
                for j in 0..c {
                    gx[(start + i, j)] = g[(i, j)];
                }
            }
            vec![(*x, gx)]
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            parts
                .iter()
                .map(|&p| {
                    let (r, c) = val(p).shape();
                    let part = Tensor::from_fn(r, c, |i, j| g[(offset + i, j)]);
                    offset += r;
                    (p, part)
                })
                .collect()
        }
        Op::NormalizeRows(x) => {
            let xv = val(*x);
            let mut gx = g.clone();
            for i in 0..y.rows() {
                let norm = xv.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = y
                    .row_slice(i)
                    .iter()
                    .zip(g.row_slice(i))
                    .map(|(a, b)| a * b)
                    .sum();
                for j in 0..y.cols() {
                    gx[(i, j)] = (g[(i, j)] - y[(i, j)] * dot) / norm;
                }
            }
            vec![(*x, gx)]
        }
    }
}

/// Stacks values with equal column counts vertically.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
    let tape = first.tape;
    let cols = first.shape().1;
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        let v = tape.value_of(p.id);
        if v.cols() != cols {
            return Err(Error::Dimension {
                op: "concat_rows",
                left: first.shape(),
                right: v.shape(),
            });
        }
        rows += v.rows();
        data.extend_from_slice(v.data());
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = tape.requires(&ids);
    Ok(tape.push(Tensor::new(rows, cols, data)?, Op::ConcatRows(ids), rg))
}

/// Mean of several same-shaped values.
pub fn mean_of<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::Contract("mean of nothing".into()))?;
    let mut acc = *first;
    for p in rest {
        acc = acc.add(*p)?;
    }
    Ok(acc.scale(1.0 / parts.len() as f64))
}
