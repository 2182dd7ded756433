//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients for
//! every node that depends on a differentiable leaf; gradients of bound
//! parameters can then be pushed into a [`ParamStore`].
//!
//! ```
//! use paegan::nnsub::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.input(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap().item(), 6.0);
//! ```

use std::sync::Arc;

use super::kernels::{self, ConvGeom, Needs, BCE_CLAMP};
use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Param(String),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, transposed: bool },
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    Reshape(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    GroupMean(Var, usize),
    BatchNorm { x: Var, gamma: Var, beta: Var, stats: kernels::BatchStats<T> },
    ChannelAffine(Var, Vec<T>),
    SumSquaredError(Var, Var),
    MeanBce(Var, Vec<T>),
    AddN(Vec<Var>),
}

struct Node<T: Scalar> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> std::fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("backward_done", &self.backward_done)
            .finish()
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, requires_grad)
    }

    fn push_arc(&mut self, value: Arc<Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a stored parameter. It is differentiable iff it is trainable;
    /// [`Graph::accumulate_into`] routes its gradient back by key.
    pub fn param(&mut self, store: &ParamStore<T>, key: &str) -> Result<Var> {
        let e = store.entry(key)?;
        let trainable = e.trainable();
        Ok(self.push_arc(store.get_arc(key)?, Op::Param(key.to_string()), trainable))
    }

    /// Binds a stored parameter as a constant (no gradient flows to it).
    pub fn frozen(&mut self, store: &ParamStore<T>, key: &str) -> Result<Var> {
        Ok(self.push_arc(store.get_arc(key)?, Op::Leaf, false))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = kernels::linear_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(y, Op::Linear { x, w, b }, rg))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(y, Op::Conv { x, w, b, geom, transposed: false }, rg))
    }

    pub fn deconv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = kernels::deconv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(y, Op::Conv { x, w, b, geom, transposed: true }, rg))
    }

    fn unary(&mut self, a: Var, y: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.rg(a);
        self.push(y, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = kernels::relu(self.value(a));
        self.unary(a, y, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::of(slope);
        let y = kernels::leaky_relu(self.value(a), s);
        self.unary(a, y, Op::LeakyRelu(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = kernels::sigmoid(self.value(a));
        self.unary(a, y, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = kernels::tanh(self.value(a));
        self.unary(a, y, Op::Tanh(a))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (s, c) = (T::of(scale), T::of(shift));
        let y = self.value(a).map(|v| s * v + c);
        self.unary(a, y, Op::Affine(a, s))
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        same_shape(op_name, self.value(a), self.value(b))?;
        let y = self.value(a).zip_map(self.value(b), f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, op, rg))
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

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(a).clone().reshape(shape)?;
        Ok(self.unary(a, y, Op::Reshape(a)))
    }

    /// `[N, Da] ++ [N, Db] -> [N, Da + Db]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.rows() != tb.rows() {
            return Err(Error::shape("concat_cols", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let (n, da, db) = (ta.rows(), ta.row_len(), tb.row_len());
        let mut out = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            out.extend_from_slice(ta.row(i));
            out.extend_from_slice(tb.row(i));
        }
        let y = Tensor::new(&[n, da + db], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::ConcatCols(a, b), rg))
    }

    /// Stacks the parts along the leading dimension.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_rows", "no parts"))?;
        let mut shape = self.value(first).shape().to_vec();
        let mut data = self.value(first).data().to_vec();
        for &p in &parts[1..] {
            let t = self.value(p);
            if t.shape()[1..] != shape[1..] {
                return Err(Error::shape("concat_rows", format!("{:?} vs {:?}", shape, t.shape())));
            }
            shape[0] += t.rows();
            data.extend_from_slice(t.data());
        }
        let y = Tensor::new(&shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(y, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if len == 0 || start + len > t.rows() {
            return Err(Error::shape("slice_rows", format!("{start}+{len} of {} rows", t.rows())));
        }
        let r = t.row_len();
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        let y = Tensor::new(&shape, t.data()[start * r..(start + len) * r].to_vec())?;
        Ok(self.unary(a, y, Op::SliceRows(a, start)))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 || len == 0 || start + len > t.row_len() {
            return Err(Error::shape("slice_cols", format!("{start}+{len} of {:?}", t.shape())));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for i in 0..t.rows() {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let y = Tensor::new(&[t.rows(), len], data)?;
        Ok(self.unary(a, y, Op::SliceCols(a, start)))
    }

    /// `out[i] = src[index[i]]` along the leading dimension.
    pub fn gather_rows(&mut self, src: Var, index: Vec<usize>) -> Result<Var> {
        let t = self.value(src);
        if index.is_empty() || index.iter().any(|&i| i >= t.rows()) {
            return Err(Error::shape("gather_rows", format!("index out of 0..{}", t.rows())));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = index.len();
        let mut data = Vec::with_capacity(index.len() * t.row_len());
        for &i in &index {
            data.extend_from_slice(t.row(i));
        }
        let y = Tensor::new(&shape, data)?;
        Ok(self.unary(src, y, Op::GatherRows(src, index)))
    }

    /// Means over consecutive groups of `group` rows: `[B*group, ..] -> [B, ..]`.
    pub fn group_mean(&mut self, a: Var, group: usize) -> Result<Var> {
        let t = self.value(a);
        if group == 0 || t.rows() % group != 0 {
            return Err(Error::shape("group_mean", format!("{} rows in groups of {group}", t.rows())));
        }
        let (b, r) = (t.rows() / group, t.row_len());
        let inv = T::one() / T::of(group as f64);
        let mut out = vec![T::zero(); b * r];
        for (i, row) in t.data().chunks_exact(r).enumerate() {
            for (o, &v) in out[(i / group) * r..][..r].iter_mut().zip(row) {
                *o += v * inv;
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = b;
        let y = Tensor::new(&shape, out)?;
        Ok(self.unary(a, y, Op::GroupMean(a, group)))
    }

    /// Training-mode batch normalization; returns the output and the batch
    /// mean/variance (for running-statistics updates).
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (y, stats) = kernels::batch_norm_train(self.value(x), self.value(gamma), self.value(beta))?;
        let (mean, var) = (stats.mean.clone(), stats.var.clone());
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(y, Op::BatchNorm { x, gamma, beta, stats }, rg);
        Ok((v, mean, var))
    }

    /// `y[n, c, ..] = scale[c] * x[n, c, ..] + shift[c]` with constant
    /// coefficients (batch norm with fixed statistics).
    pub fn channel_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() < 2 || s[1] != scale.len() || scale.len() != shift.len() {
            return Err(Error::shape("channel_affine", format!("{s:?} with {} channels", scale.len())));
        }
        let c = s[1];
        let plane = t.len() / (s[0] * c);
        let (sc, sh): (Vec<T>, Vec<T>) = (scale.iter().map(|&v| T::of(v)).collect(), shift.iter().map(|&v| T::of(v)).collect());
        let mut y = t.clone();
        for (i, chan) in y.data_mut().chunks_exact_mut(plane).enumerate() {
            let (a, b) = (sc[i % c], sh[i % c]);
            chan.iter_mut().for_each(|v| *v = a * *v + b);
        }
        Ok(self.unary(x, y, Op::ChannelAffine(x, sc)))
    }

    /// `Σ (a - b)²` as a one-element tensor.
    pub fn sum_squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::shape("sum_squared_error", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let s = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::SumSquaredError(a, b), rg))
    }

    /// Mean binary cross-entropy of probabilities `p` against `labels`, with
    /// `p` clamped to `[1e-7, 1 - 1e-7]`.
    pub fn mean_bce(&mut self, p: Var, labels: &[f64]) -> Result<Var> {
        let t = self.value(p);
        if t.len() != labels.len() {
            return Err(Error::shape("mean_bce", format!("{} probabilities, {} labels", t.len(), labels.len())));
        }
        let loss = t
            .data()
            .iter()
            .zip(labels)
            .map(|(&pv, &l)| kernels::bce_loss(pv.f64(), l))
            .sum::<f64>()
            / labels.len() as f64;
        let labels = labels.iter().map(|&l| T::of(l)).collect();
        let rg = self.rg(p);
        Ok(self.push(Tensor::scalar(T::of(loss)), Op::MeanBce(p, labels), rg))
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn add_n(&mut self, terms: &[Var]) -> Result<Var> {
        let first = *terms.first().ok_or_else(|| Error::shape("add_n", "no terms"))?;
        let mut acc = self.value(first).clone();
        for &t in &terms[1..] {
            same_shape("add_n", &acc, self.value(t))?;
            acc.add_assign(self.value(t));
        }
        let rg = terms.iter().any(|&t| self.rg(t));
        Ok(self.push(acc, Op::AddN(terms.to_vec()), rg))
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Allows another [`Graph::backward`] on the same tape.
    pub fn reset_backward(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Back-propagates from a one-element `loss`. Gradients are retained for
    /// leaves and parameters only.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        self.backward_done = true;
        let Graph { nodes, grads, .. } = self;
        grads.clear();
        grads.resize_with(nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), T::one()));

        let acc = |grads: &mut Vec<Option<Tensor<T>>>, v: Var, g: Tensor<T>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = &node.value;
            let val = |v: Var| -> &Tensor<T> { &nodes[v.0].value };
            let needs = |v: Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    let lg = kernels::linear_backward(
                        val(*x),
                        val(*w),
                        &g,
                        Needs {
                            input: needs(*x),
                            weight: needs(*w),
                            bias: b.is_some_and(needs),
                        },
                    )?;
                    if let Some(d) = lg.input {
                        acc(grads, *x, d);
                    }
                    if let Some(d) = lg.weight {
                        acc(grads, *w, d);
                    }
                    if let (Some(b), Some(d)) = (b, lg.bias) {
                        acc(grads, *b, d);
                    }
                }
                Op::Conv { x, w, b, geom, transposed } => {
                    let nd = Needs {
                        input: needs(*x),
                        weight: needs(*w),
                        bias: b.is_some_and(needs),
                    };
                    let lg = if *transposed {
                        kernels::deconv2d_backward(val(*x), val(*w), &g, *geom, nd)?
                    } else {
                        kernels::conv2d_backward(val(*x), val(*w), &g, *geom, nd)?
                    };
                    if let Some(d) = lg.input {
                        acc(grads, *x, d);
                    }
                    if let Some(d) = lg.weight {
                        acc(grads, *w, d);
                    }
                    if let (Some(b), Some(d)) = (b, lg.bias) {
                        acc(grads, *b, d);
                    }
                }
                Op::Relu(a) => {
                    let d = g.zip_map(y, |gv, yv| if yv > T::zero() { gv } else { T::zero() });
                    acc(grads, *a, d);
                }
                Op::LeakyRelu(a, s) => {
                    let d = g.zip_map(val(*a), |gv, xv| if xv > T::zero() { gv } else { *s * gv });
                    acc(grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_map(y, |gv, yv| gv * yv * (T::one() - yv));
                    acc(grads, *a, d);
                }
                Op::Tanh(a) => {
                    let d = g.zip_map(y, |gv, yv| gv * (T::one() - yv * yv));
                    acc(grads, *a, d);
                }
                Op::Affine(a, s) => {
                    let s = *s;
                    acc(grads, *a, g.map(|gv| gv * s));
                }
                Op::Add(a, b) => {
                    acc(grads, *b, g.clone());
                    acc(grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(grads, *b, g.map(|v| -v));
                    acc(grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        acc(grads, *a, g.zip_map(val(*b), |gv, bv| gv * bv));
                    }
                    if needs(*b) {
                        acc(grads, *b, g.zip_map(val(*a), |gv, av| gv * av));
                    }
                }
                Op::Reshape(a) => {
                    let shape = val(*a).shape().to_vec();
                    acc(grads, *a, g.reshape(&shape)?);
                }
                Op::ConcatCols(a, b) => {
                    let (da, db) = (val(*a).row_len(), val(*b).row_len());
                    let n = val(*a).rows();
                    let mut ga = Vec::with_capacity(n * da);
                    let mut gb = Vec::with_capacity(n * db);
                    for row in g.data().chunks_exact(da + db) {
                        ga.extend_from_slice(&row[..da]);
                        gb.extend_from_slice(&row[da..]);
                    }
                    acc(grads, *a, Tensor::new(val(*a).shape(), ga)?);
                    acc(grads, *b, Tensor::new(val(*b).shape(), gb)?);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = val(p).len();
                        if needs(p) {
                            let piece = g.data()[offset..offset + n].to_vec();
                            acc(grads, p, Tensor::new(val(p).shape(), piece)?);
                        }
                        offset += n;
                    }
                }
                Op::SliceRows(src, start) => {
                    // Accumulate in place: slices of one large source are common.
                    let s = val(*src);
                    let off = start * s.row_len();
                    let slot = grads[src.0].get_or_insert_with(|| Tensor::zeros(s.shape()));
                    for (o, &v) in slot.data_mut()[off..off + g.len()].iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
                Op::SliceCols(src, start) => {
                    let s = val(*src);
                    let (c, len) = (s.row_len(), g.row_len());
                    let slot = grads[src.0].get_or_insert_with(|| Tensor::zeros(s.shape()));
                    for (i, row) in g.data().chunks_exact(len).enumerate() {
                        for (o, &v) in slot.data_mut()[i * c + start..][..len].iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
                Op::GatherRows(src, index) => {
                    let s = val(*src);
                    let r = s.row_len();
                    let mut d = Tensor::zeros(s.shape());
                    for (row, &k) in g.data().chunks_exact(r).zip(index) {
                        for (o, &v) in d.data_mut()[k * r..][..r].iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(grads, *src, d);
                }
                Op::GroupMean(a, group) => {
                    let s = val(*a);
                    let r = s.row_len();
                    let inv = T::one() / T::of(*group as f64);
                    let mut d = Vec::with_capacity(s.len());
                    for i in 0..s.rows() {
                        d.extend(g.data()[(i / group) * r..][..r].iter().map(|&v| v * inv));
                    }
                    acc(grads, *a, Tensor::new(s.shape(), d)?);
                }
                Op::BatchNorm { x, gamma, beta, stats } => {
                    let (dx, dg, db) = kernels::batch_norm_backward(val(*x), val(*gamma), stats, &g)?;
                    acc(grads, *x, dx);
                    acc(grads, *gamma, dg);
                    acc(grads, *beta, db);
                }
                Op::ChannelAffine(a, scale) => {
                    let c = scale.len();
                    let plane = g.len() / (g.shape()[0] * c);
                    let mut d = g;
                    for (i, chan) in d.data_mut().chunks_exact_mut(plane).enumerate() {
                        let s = scale[i % c];
                        chan.iter_mut().for_each(|v| *v = *v * s);
                    }
                    acc(grads, *a, d);
                }
                Op::SumSquaredError(a, b) => {
                    let two = T::of(2.0) * g.item();
                    let d = val(*a).zip_map(val(*b), |x, y| two * (x - y));
                    if needs(*b) {
                        acc(grads, *b, d.map(|v| -v).reshape(val(*b).shape())?);
                    }
                    acc(grads, *a, d);
                }
                Op::MeanBce(p, labels) => {
                    let scale = g.item() / T::of(labels.len() as f64);
                    let (lo, hi) = (T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP));
                    // Gradient evaluated at the clamped probability so saturated
                    // outputs still receive a (small) signal.
                    let d = Tensor::new(
                        val(*p).shape(),
                        val(*p)
                            .data()
                            .iter()
                            .zip(labels)
                            .map(|(&pv, &l)| {
                                let pc = pv.max(lo).min(hi);
                                scale * ((T::one() - l) / (T::one() - pc) - l / pc)
                            })
                            .collect(),
                    )?;
                    acc(grads, *p, d);
                }
                Op::AddN(terms) => {
                    for &t in terms {
                        acc(grads, t, g.clone());
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds the gradients of all bound trainable parameters into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        if !self.backward_done {
            return Err(Error::Config("accumulate_into before backward".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(key), Some(g)) = (&node.op, self.grads.get(i).and_then(Option::as_ref)) {
                store.accumulate_grad(key, g)?;
            }
        }
        Ok(())
    }

    /// [`Graph::backward`] followed by [`Graph::accumulate_into`].
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.backward(loss)?;
        self.accumulate_into(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut store = ParamStore::<f64>::new();
        store.insert("theta", Tensor::scalar(3.0), true);
        let mut g = Graph::new();
        let t = g.param(&store, "theta").unwrap();
        let y = g.mul(t, t).unwrap();
        g.backward_into(y, &mut store).unwrap();
        assert_eq!(store.grad("theta").unwrap().item(), 6.0);
    }

    #[test]
    fn second_backward_is_rejected_until_reset() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(2.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(Error::BackwardTwice)));
        g.reset_backward();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 4.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[3]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::scalar(2.0), true);
        let mut g = Graph::new();
        let w = g.frozen(&store, "w").unwrap();
        let x = g.input(Tensor::scalar(5.0));
        let y = g.mul(w, x).unwrap();
        g.backward_into(y, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().item(), 0.0);
        assert_eq!(g.grad(x).unwrap().item(), 2.0);
    }

    #[test]
    fn shared_node_gradients_accumulate() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
        let a = g.affine(x, 3.0, 1.0);
        let b = g.add(a, x).unwrap();
        let t = g.constant(Tensor::zeros(&[2]));
        let l = g.sum_squared_error(b, t).unwrap();
        g.backward(l).unwrap();
        // l = Σ (4x + 1)², dl/dx = 8 (4x + 1)
        assert_eq!(g.grad(x).unwrap().data(), &[40.0, -56.0]);
    }
}
