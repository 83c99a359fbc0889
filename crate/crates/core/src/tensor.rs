//! Dense row-major tensors with a reverse-mode differentiation tape.
//!
//! Every operation records its inputs. Node ids grow monotonically with
//! creation order, so sorting reachable nodes by descending id yields a valid
//! reverse topological order for [`Tensor::backward`]. Only leaves created with
//! [`Tensor::param`] retain gradients; intermediate gradients are discarded
//! once propagated.
//!
//! A graph is built from `Rc` handles and is therefore confined to the thread
//! that built it. Run independent graphs on separate threads and merge their
//! gradients explicitly.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: axis {axis} invalid for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero extent")]
    EmptyShape(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Reduction applied along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Max,
    Mean,
}

/// Binary combination of two tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    /// Elementwise sum; extents of 1 broadcast against the other operand.
    Add,
    ConcatLastAxis,
}

enum Op {
    Leaf,
    Linear { bias: bool },
    Relu,
    Gather { idx: Vec<usize> },
    Reduce { axis: usize, mode: Reduce, argmax: Vec<usize> },
    Add,
    Concat,
    Mul,
    Scale(f64),
    Reshape,
    SumAll,
    Custom { grad: Vec<f64> },
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Op,
    parents: Vec<Tensor>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(TensorError::EmptyShape(shape.to_vec()));
    }
    if numel(shape) != len {
        return Err(TensorError::DataLength {
            shape: shape.to_vec(),
            len,
        });
    }
    Ok(())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op, parents: Vec<Tensor>) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        // Constant subgraphs do not need their inputs kept alive.
        let parents = if requires_grad { parents } else { Vec::new() };
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op,
            parents,
        }))
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        check_shape(&shape, data.len())?;
        Ok(Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op: Op::Leaf,
            parents: Vec::new(),
        })))
    }

    /// Constant tensor that never receives gradients.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape.to_vec(), data, false)
    }

    /// Trainable leaf; gradients accumulate into it on every `backward`.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape.to_vec(), data, true)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(Vec::new(), vec![value], false).expect("scalar shape")
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, vec![0.0; numel(shape)])
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// `x[n×c_in] · w[c_in×c_out] (+ b[c_out])`.
    pub fn linear(&self, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), w.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                left: xs.to_vec(),
                right: ws.to_vec(),
            });
        }
        let (n, cin, cout) = (xs[0], xs[1], ws[1]);
        if let Some(b) = b {
            if b.shape() != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear bias",
                    left: ws.to_vec(),
                    right: b.shape().to_vec(),
                });
            }
        }
        let (x, wd) = (self.data(), w.data());
        let mut out = vec![0.0; n * cout];
        for i in 0..n {
            let row = &mut out[i * cout..(i + 1) * cout];
            if let Some(b) = b {
                row.copy_from_slice(b.data());
            }
            for kk in 0..cin {
                let xv = x[i * cin + kk];
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wd[kk * cout..(kk + 1) * cout];
                for (o, &wv) in row.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        let mut parents = vec![self.clone(), w.clone()];
        if let Some(b) = b {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            vec![n, cout],
            out,
            Op::Linear { bias: b.is_some() },
            parents,
        ))
    }

    pub fn relu(&self) -> Tensor {
        let out = self.data().iter().map(|&v| v.max(0.0)).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::Relu, vec![self.clone()])
    }

    /// Gathers rows of `x[n×c]` through an index table with `k` columns,
    /// producing `[rows×k×c]`.
    pub fn group_gather(&self, idx: &[usize], k: usize) -> Result<Tensor> {
        let xs = self.shape();
        if xs.len() != 2 || k == 0 || idx.is_empty() || idx.len() % k != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "group_gather",
                left: xs.to_vec(),
                right: vec![idx.len(), k],
            });
        }
        let (n, c) = (xs[0], xs[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(TensorError::IndexOutOfRange {
                op: "group_gather",
                index: bad,
                len: n,
            });
        }
        let x = self.data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&x[i * c..(i + 1) * c]);
        }
        Ok(Tensor::from_op(
            vec![idx.len() / k, k, c],
            out,
            Op::Gather { idx: idx.to_vec() },
            vec![self.clone()],
        ))
    }

    /// Selects rows of `x[n×c]`, producing `[m×c]`.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let g = self.group_gather(idx, 1)?;
        let c = self.shape()[1];
        g.reshape(&[idx.len(), c])
    }

    pub fn reduce(&self, axis: usize, mode: Reduce) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "reduce",
                axis,
                rank: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let d = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        match mode {
            Reduce::Sum | Reduce::Mean => {
                for o in 0..outer {
                    for j in 0..d {
                        let base = (o * d + j) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += x[base + i];
                        }
                    }
                }
                if mode == Reduce::Mean {
                    out.iter_mut().for_each(|v| *v /= d as f64);
                }
            }
            Reduce::Max => {
                argmax = vec![0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = o * d * inner + i;
                        for j in 1..d {
                            let at = (o * d + j) * inner + i;
                            // strict: ties keep the lowest index
                            if x[at] > x[best] {
                                best = at;
                            }
                        }
                        out[o * inner + i] = x[best];
                        argmax[o * inner + i] = best;
                    }
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        Ok(Tensor::from_op(
            out_shape,
            out,
            Op::Reduce { axis, mode, argmax },
            vec![self.clone()],
        ))
    }

    pub fn combine(&self, other: &Tensor, mode: Combine) -> Result<Tensor> {
        match mode {
            Combine::Add => self.add(other),
            Combine::ConcatLastAxis => self.concat(other),
        }
    }

    /// Elementwise sum. Operands must share rank; an extent of 1 broadcasts.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let out_shape = broadcast_shape(self.shape(), other.shape()).ok_or_else(|| {
            TensorError::ShapeMismatch {
                op: "add",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            }
        })?;
        let out = if self.shape() == other.shape() {
            self.data()
                .iter()
                .zip(other.data())
                .map(|(a, b)| a + b)
                .collect()
        } else {
            let map = BroadcastMap::new(&out_shape, self.shape(), other.shape());
            (0..numel(&out_shape))
                .map(|f| {
                    let (ia, ib) = map.source(f);
                    self.data()[ia] + other.data()[ib]
                })
                .collect()
        };
        Ok(Tensor::from_op(
            out_shape,
            out,
            Op::Add,
            vec![self.clone(), other.clone()],
        ))
    }

    pub fn concat(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        let mismatch = || TensorError::ShapeMismatch {
            op: "concat",
            left: a.to_vec(),
            right: b.to_vec(),
        };
        if a.is_empty() || a.len() != b.len() || a[..a.len() - 1] != b[..b.len() - 1] {
            return Err(mismatch());
        }
        let (ca, cb) = (a[a.len() - 1], b[b.len() - 1]);
        let rows = numel(&a[..a.len() - 1]);
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(&self.data()[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&other.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = a.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        Ok(Tensor::from_op(
            shape,
            out,
            Op::Concat,
            vec![self.clone(), other.clone()],
        ))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        let out = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Mul,
            vec![self.clone(), other.clone()],
        ))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let out = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Scale(factor),
            vec![self.clone()],
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            Op::Reshape,
            vec![self.clone()],
        ))
    }

    pub fn sum_all(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(Vec::new(), vec![s], Op::SumAll, vec![self.clone()])
    }

    /// Scalar node whose value and gradient with respect to `self` were
    /// computed outside the tape (closed-form loss gradients).
    pub fn custom_scalar(&self, value: f64, grad: Vec<f64>) -> Result<Tensor> {
        if grad.len() != self.len() {
            return Err(TensorError::DataLength {
                shape: self.shape().to_vec(),
                len: grad.len(),
            });
        }
        Ok(Tensor::from_op(
            Vec::new(),
            vec![value],
            Op::Custom { grad },
            vec![self.clone()],
        ))
    }

    /// Propagates d(self)/d(leaf) into every reachable trainable leaf,
    /// adding to whatever gradient the leaf already holds.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        let mut order = Vec::new();
        while let Some(t) = stack.pop() {
            if !seen.insert(t.0.id) {
                continue;
            }
            for p in &t.0.parents {
                if p.requires_grad() && !seen.contains(&p.0.id) {
                    stack.push(p.clone());
                }
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.0.id, vec![1.0]);
        for node in order {
            let Some(g) = grads.remove(&node.0.id) else {
                continue;
            };
            if let Op::Leaf = node.0.op {
                let mut slot = node.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                    None => *slot = Some(g),
                }
                continue;
            }
            for (parent, pg) in node.0.parents.iter().zip(node.local_grads(&g)) {
                let Some(pg) = pg else { continue };
                match grads.get_mut(&parent.0.id) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, v)| *a += v),
                    None => {
                        grads.insert(parent.0.id, pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products for each parent; `None` where the parent
    /// does not require a gradient.
    fn local_grads(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let node = &self.0;
        let p = &node.parents;
        let need = |i: usize| p[i].requires_grad();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Linear { bias } => {
                let (x, w) = (&p[0], &p[1]);
                let (n, cin) = (x.shape()[0], x.shape()[1]);
                let cout = w.shape()[1];
                let gx = need(0).then(|| {
                    let mut gx = vec![0.0; n * cin];
                    for i in 0..n {
                        let grow = &g[i * cout..(i + 1) * cout];
                        for kk in 0..cin {
                            let wrow = &w.data()[kk * cout..(kk + 1) * cout];
                            gx[i * cin + kk] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        }
                    }
                    gx
                });
                let gw = need(1).then(|| {
                    let mut gw = vec![0.0; cin * cout];
                    for i in 0..n {
                        let grow = &g[i * cout..(i + 1) * cout];
                        for kk in 0..cin {
                            let xv = x.data()[i * cin + kk];
                            if xv == 0.0 {
                                continue;
                            }
                            let dst = &mut gw[kk * cout..(kk + 1) * cout];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                    gw
                });
                let mut out = vec![gx, gw];
                if *bias {
                    out.push(need(2).then(|| {
                        let mut gb = vec![0.0; cout];
                        for row in g.chunks(cout) {
                            gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                        gb
                    }));
                }
                out
            }
            Op::Relu => vec![Some(
                p[0].data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                    .collect(),
            )],
            Op::Gather { idx } => {
                let c = p[0].shape()[1];
                let mut gx = vec![0.0; p[0].len()];
                for (slot, &src) in idx.iter().enumerate() {
                    let dst = &mut gx[src * c..(src + 1) * c];
                    dst.iter_mut()
                        .zip(&g[slot * c..(slot + 1) * c])
                        .for_each(|(a, v)| *a += v);
                }
                vec![Some(gx)]
            }
            Op::Reduce { axis, mode, argmax } => {
                let shape = p[0].shape();
                let outer: usize = shape[..*axis].iter().product();
                let d = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let mut gx = vec![0.0; p[0].len()];
                match mode {
                    Reduce::Max => {
                        for (o, &src) in argmax.iter().enumerate() {
                            gx[src] += g[o];
                        }
                    }
                    Reduce::Sum | Reduce::Mean => {
                        let s = if *mode == Reduce::Mean { 1.0 / d as f64 } else { 1.0 };
                        for o in 0..outer {
                            for j in 0..d {
                                for i in 0..inner {
                                    gx[(o * d + j) * inner + i] = g[o * inner + i] * s;
                                }
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }
            Op::Add => {
                let (a, b) = (&p[0], &p[1]);
                if a.shape() == b.shape() {
                    return vec![need(0).then(|| g.to_vec()), need(1).then(|| g.to_vec())];
                }
                let map = BroadcastMap::new(&node.shape, a.shape(), b.shape());
                let mut ga = vec![0.0; a.len()];
                let mut gb = vec![0.0; b.len()];
                for (f, &gv) in g.iter().enumerate() {
                    let (ia, ib) = map.source(f);
                    ga[ia] += gv;
                    gb[ib] += gv;
                }
                vec![need(0).then_some(ga), need(1).then_some(gb)]
            }
            Op::Concat => {
                let ca = *p[0].shape().last().unwrap();
                let cb = *p[1].shape().last().unwrap();
                let mut ga = Vec::with_capacity(p[0].len());
                let mut gb = Vec::with_capacity(p[1].len());
                for row in g.chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![need(0).then_some(ga), need(1).then_some(gb)]
            }
            Op::Mul => {
                let (a, b) = (&p[0], &p[1]);
                vec![
                    need(0).then(|| g.iter().zip(b.data()).map(|(x, y)| x * y).collect()),
                    need(1).then(|| g.iter().zip(a.data()).map(|(x, y)| x * y).collect()),
                ]
            }
            Op::Scale(s) => vec![Some(g.iter().map(|v| v * s).collect())],
            Op::Reshape => vec![Some(g.to_vec())],
            Op::SumAll => vec![Some(vec![g[0]; p[0].len()])],
            Op::Custom { grad } => vec![Some(grad.iter().map(|v| v * g[0]).collect())],
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// Maps a flat output offset to the flat offsets of both broadcast operands.
struct BroadcastMap {
    out_strides: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

impl BroadcastMap {
    fn new(out: &[usize], a: &[usize], b: &[usize]) -> Self {
        let zero_bcast = |shape: &[usize]| -> Vec<usize> {
            strides(shape)
                .into_iter()
                .zip(shape.iter().zip(out))
                .map(|(s, (&d, &o))| if d == 1 && o != 1 { 0 } else { s })
                .collect()
        };
        BroadcastMap {
            out_strides: strides(out),
            a_strides: zero_bcast(a),
            b_strides: zero_bcast(b),
        }
    }

    fn source(&self, mut flat: usize) -> (usize, usize) {
        let (mut ia, mut ib) = (0, 0);
        for ((&os, &sa), &sb) in self
            .out_strides
            .iter()
            .zip(&self.a_strides)
            .zip(&self.b_strides)
        {
            let coord = flat / os;
            flat %= os;
            ia += coord * sa;
            ib += coord * sb;
        }
        (ia, ib)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn p(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::param(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity_and_bias() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(x.linear(&w, None).unwrap().data(), &[1.0, 2.0]);

        let x = t(&[1, 2], &[1.0, 1.0]);
        let w = t(&[2, 1], &[2.0, 3.0]);
        let b = t(&[1], &[1.0]);
        assert_eq!(x.linear(&w, Some(&b)).unwrap().data(), &[6.0]);
    }

    #[test]
    fn linear_shape_error_names_both_shapes() {
        let x = t(&[1, 3], &[1.0, 2.0, 3.0]);
        let w = t(&[2, 2], &[1.0; 4]);
        let err = x.linear(&w, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn linear_weight_grad_is_column_sums() {
        let x = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = p(&[2, 2], &[0.5, -1.0, 2.0, 0.25]);
        x.linear(&w, None).unwrap().sum_all().backward().unwrap();
        // d/dw[k][j] sum = sum_i x[i][k]
        assert_eq!(w.grad().unwrap(), vec![9.0, 9.0, 12.0, 12.0]);
    }

    #[test]
    fn relu_values() {
        assert_eq!(t(&[3], &[-1.0, 0.0, 2.0]).relu().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(t(&[2], &[-3.0, -0.5]).relu().data(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_subgradient_zero_at_zero() {
        let x = p(&[3], &[-1.0, 0.0, 2.0]);
        x.relu().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn gather_self_index_and_swap() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let g = x.group_gather(&[0, 0, 1, 1], 2).unwrap();
        assert_eq!(g.shape(), &[2, 2, 2]);
        assert_eq!(g.data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
        let s = x.group_gather(&[1, 0], 1).unwrap();
        assert_eq!(s.data(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let x = t(&[2, 1], &[1.0, 2.0]);
        assert!(matches!(
            x.group_gather(&[0, 2], 1),
            Err(TensorError::IndexOutOfRange { index: 2, .. })
        ));
    }

    #[test]
    fn gather_backward_counts_occurrences() {
        let x = p(&[3, 1], &[1.0, 2.0, 3.0]);
        x.group_gather(&[0, 0, 2, 0], 2).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, 0.0, 1.0]);
    }

    #[test]
    fn reduce_modes() {
        let ones = t(&[2, 3], &[1.0; 6]);
        assert_eq!(ones.reduce(1, Reduce::Sum).unwrap().data(), &[3.0, 3.0]);
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let sum = x.reduce(0, Reduce::Sum).unwrap();
        let mean = x.reduce(0, Reduce::Mean).unwrap();
        for (s, m) in sum.data().iter().zip(mean.data()) {
            assert_eq!(s / 2.0, *m);
        }
        assert!(matches!(
            x.reduce(2, Reduce::Sum),
            Err(TensorError::InvalidAxis { axis: 2, rank: 2, .. })
        ));
    }

    #[test]
    fn max_ties_route_to_lowest_index() {
        let x = p(&[3], &[1.0, 5.0, 5.0]);
        let m = x.reduce(0, Reduce::Max).unwrap();
        assert_eq!(m.item(), 5.0);
        m.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn broadcast_add_shifts_every_copy() {
        let t_out = t(&[2, 3, 3], &[0.0; 18]);
        let x = t(&[2, 1, 3], &[1.0, 2.0, 3.0, -1.0, -2.0, -3.0]);
        let y = t_out.add(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        for copy in 0..3 {
            assert_eq!(&y.data()[copy * 3..copy * 3 + 3], &[1.0, 2.0, 3.0]);
            assert_eq!(&y.data()[9 + copy * 3..9 + copy * 3 + 3], &[-1.0, -2.0, -3.0]);
        }
    }

    #[test]
    fn broadcast_add_backward_reduces() {
        let a = p(&[2, 3, 1], &[0.0; 6]);
        let b = p(&[2, 1, 1], &[0.0; 2]);
        a.add(&b).unwrap().sum_all().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![3.0, 3.0]);
        assert_eq!(a.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn combine_concat_and_zero_add() {
        let a = t(&[1, 2], &[1.0, 2.0]);
        let b = t(&[1, 3], &[3.0, 4.0, 5.0]);
        let c = a.combine(&b, Combine::ConcatLastAxis).unwrap();
        assert_eq!(c.shape(), &[1, 5]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let z = Tensor::zeros(&[1, 2]).unwrap();
        assert_eq!(a.combine(&z, Combine::Add).unwrap().data(), a.data());
        assert!(a.combine(&b, Combine::Add).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = p(&[2], &[1.0, 2.0]);
        assert!(matches!(x.relu().backward(), Err(TensorError::NonScalarRoot(_))));
    }

    #[test]
    fn sum_gives_ones_and_two_uses_add() {
        let x = p(&[3], &[1.0, -2.0, 0.5]);
        x.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 3]);
        x.zero_grad();
        let y = x.add(&x).unwrap().sum_all();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = p(&[2], &[1.0, 2.0]);
        let y = x.mul(&x).unwrap().sum_all();
        y.backward().unwrap();
        let once = x.grad().unwrap();
        y.backward().unwrap();
        let twice = x.grad().unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn constant_graphs_do_not_track() {
        let x = t(&[2], &[1.0, 2.0]);
        let y = x.relu().sum_all();
        assert!(!y.requires_grad());
        y.backward().unwrap();
        assert!(x.grad().is_none());
    }
}
