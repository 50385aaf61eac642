//! Reverse-mode differentiation over an explicit operation tape.
//!
//! Every operation evaluates eagerly and appends a node holding its value and
//! the handles of its inputs. [`Tape::backward`] walks the nodes in reverse,
//! accumulating adjoints, and returns one gradient per parameter of the
//! [`ParamStore`] the tape read from. A tape can be differentiated once.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatVec(Var, Var),
    VecMat(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRows(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Dot(Var, Var),
    Softmax(Var),
    Mask(Var, Vec<f64>),
    Sum(Var),
    CrossEntropy(Var, usize),
    Bce(Var, f64, bool),
    AddScalars(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Probability clamp used by the binary cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant; it receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Reads a parameter. Repeated reads of the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    /// `W x` for `W: [m, n]`, `x: [n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (ws, xs) = (self.shape(w), self.shape(x));
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::dim("matvec", ws, xs));
        }
        let (m, n) = (ws[0], ws[1]);
        let wv = self.value(w).data();
        let xv = self.value(x).data();
        let out: Vec<f64> = (0..m).map(|i| dot(&wv[i * n..(i + 1) * n], xv)).collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x)))
    }

    /// `xᵀ M` for `x: [m]`, `M: [m, n]`; a weighted sum of the rows of `M`.
    pub fn vecmat(&mut self, x: Var, m: Var) -> Result<Var> {
        let (xs, ms) = (self.shape(x), self.shape(m));
        if ms.len() != 2 || xs.len() != 1 || ms[0] != xs[0] {
            return Err(Error::dim("vecmat", xs, ms));
        }
        let (rows, n) = (ms[0], ms[1]);
        let xv = self.value(x).data();
        let mv = self.value(m).data();
        let mut out = vec![0.0; n];
        for i in 0..rows {
            let a = xv[i];
            for (o, &b) in out.iter_mut().zip(&mv[i * n..(i + 1) * n]) {
                *o += a * b;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::VecMat(x, m)))
    }

    /// `A Bᵀ` for `A: [m, k]`, `B: [n, k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[1] {
            return Err(Error::dim("matmul_bt", as_, bs));
        }
        let (m, k, n) = (as_[0], as_[1], bs[0]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                out.push(dot(ar, &bv[j * k..(j + 1) * k]));
            }
        }
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::MatMulBt(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Adds the vector `v: [n]` to every row of `m: [rows, n]`.
    pub fn add_rows(&mut self, m: Var, v: Var) -> Result<Var> {
        let (ms, vs) = (self.shape(m), self.shape(v));
        if ms.len() != 2 || vs.len() != 1 || ms[1] != vs[0] {
            return Err(Error::dim("add_rows", ms, vs));
        }
        let n = vs[0];
        let vv = self.value(v).data().to_vec();
        let mut t = self.value(m).clone();
        for (i, x) in t.data_mut().iter_mut().enumerate() {
            *x += vv[i % n];
        }
        Ok(self.push(t, Op::AddRows(m, v)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::dim("concat", self.shape(p), &[]));
            }
            data.extend_from_slice(self.value(p).data());
        }
        if data.is_empty() {
            return Err(Error::Empty("concat"));
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec())))
    }

    /// Stacks equal-length vectors into a `[parts.len(), n]` matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("stack_rows"));
        };
        let n = self.shape(first).to_vec();
        if n.len() != 1 {
            return Err(Error::dim("stack_rows", &n, &[]));
        }
        let mut data = Vec::with_capacity(parts.len() * n[0]);
        for &p in parts {
            if self.shape(p) != n.as_slice() {
                return Err(Error::dim("stack_rows", &n, self.shape(p)));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::matrix(parts.len(), n[0], data)?;
        Ok(self.push(t, Op::StackRows(parts.to_vec())))
    }

    /// Contiguous sub-vector `a[start..start + len]`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || start + len > s[0] || len == 0 {
            return Err(Error::dim("slice", s, &[start, len]));
        }
        let data = self.value(a).data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Slice(a, start)))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let s = self.shape(m);
        if s.len() != 2 || i >= s[0] {
            return Err(Error::dim("row", s, &[i]));
        }
        let t = Tensor::vector(self.value(m).row(i).to_vec());
        Ok(self.push(t, Op::Row(m, i)))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let v = dot(self.value(a).data(), self.value(b).data());
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b)))
    }

    /// Softmax of a non-empty vector, computed after subtracting the max.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 {
            return Err(Error::dim("softmax", s, &[]));
        }
        if s[0] == 0 {
            return Err(Error::Empty("softmax"));
        }
        let t = Tensor::vector(softmax(self.value(a).data()));
        Ok(self.push(t, Op::Softmax(a)))
    }

    /// Multiplies elementwise by a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(Error::dim("mask", self.shape(a), &[mask.len()]));
        }
        let av = self.value(a);
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mask(a, mask)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(a))
    }

    /// Sum of a list of scalars.
    pub fn add_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Empty("add_scalars"));
        }
        let mut total = 0.0;
        for &x in xs {
            let t = self.value(x);
            if t.len() != 1 {
                return Err(Error::NonScalarLoss(t.shape().to_vec()));
            }
            total += t.item();
        }
        Ok(self.push(Tensor::scalar(total), Op::AddScalars(xs.to_vec())))
    }

    /// Categorical cross-entropy `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 1 {
            return Err(Error::dim("cross_entropy", s, &[]));
        }
        if target >= s[0] {
            return Err(Error::OutOfRange {
                what: "cross_entropy target",
                index: target,
                len: s[0],
            });
        }
        let z = self.value(logits).data();
        let loss = log_sum_exp(z) - z[target];
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, target)))
    }

    /// Binary cross-entropy of a probability, clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn binary_cross_entropy(&mut self, prob: Var, label: u8) -> Result<Var> {
        if self.value(prob).len() != 1 {
            return Err(Error::dim("binary_cross_entropy", self.shape(prob), &[1]));
        }
        if label > 1 {
            return Err(Error::OutOfRange {
                what: "binary label",
                index: label as usize,
                len: 2,
            });
        }
        let p = self.value(prob).item();
        let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let y = f64::from(label);
        let loss = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
        let clamped = pc != p;
        Ok(self.push(Tensor::scalar(loss), Op::Bce(prob, y, clamped)))
    }

    /// Differentiates `loss` with respect to every parameter of `store`.
    ///
    /// Parameters the forward pass never read get an all-zero gradient. The
    /// tape is invalidated: a second call returns [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));
        let mut grads = Gradients::zeros_like(store);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.values[id.0].add_assign(&g),
                Op::MatVec(w, x) => {
                    let wv = self.value(*w);
                    let xv = self.value(*x).data();
                    let (m, n) = (wv.rows(), wv.cols());
                    let gd = g.data();
                    let mut gw = vec![0.0; m * n];
                    let mut gx = vec![0.0; n];
                    for i in 0..m {
                        let gi = gd[i];
                        let wr = &wv.data()[i * n..(i + 1) * n];
                        let gwr = &mut gw[i * n..(i + 1) * n];
                        for j in 0..n {
                            gwr[j] = gi * xv[j];
                            gx[j] += gi * wr[j];
                        }
                    }
                    accumulate(&mut adj, *w, Tensor::matrix(m, n, gw)?);
                    accumulate(&mut adj, *x, Tensor::vector(gx));
                }
                Op::VecMat(x, mm) => {
                    let xv = self.value(*x).data();
                    let mv = self.value(*mm);
                    let (rows, n) = (mv.rows(), mv.cols());
                    let gd = g.data();
                    let mut gx = vec![0.0; rows];
                    let mut gm = vec![0.0; rows * n];
                    for i in 0..rows {
                        let mr = &mv.data()[i * n..(i + 1) * n];
                        gx[i] = dot(mr, gd);
                        for j in 0..n {
                            gm[i * n + j] = xv[i] * gd[j];
                        }
                    }
                    accumulate(&mut adj, *x, Tensor::vector(gx));
                    accumulate(&mut adj, *mm, Tensor::matrix(rows, n, gm)?);
                }
                Op::MatMulBt(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                    let gd = g.data();
                    let mut ga = vec![0.0; m * k];
                    let mut gb = vec![0.0; n * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = gd[i * n + j];
                            for l in 0..k {
                                ga[i * k + l] += gij * bv.data()[j * k + l];
                                gb[j * k + l] += gij * av.data()[i * k + l];
                            }
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::matrix(m, k, ga)?);
                    accumulate(&mut adj, *b, Tensor::matrix(n, k, gb)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.map(|x| -x));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = elementwise(&g, self.value(*b), |x, y| x * y);
                    let gb = elementwise(&g, self.value(*a), |x, y| x * y);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::AddRows(mm, v) => {
                    let n = self.value(*v).len();
                    let mut gv = vec![0.0; n];
                    for (i, x) in g.data().iter().enumerate() {
                        gv[i % n] += x;
                    }
                    accumulate(&mut adj, *v, Tensor::vector(gv));
                    accumulate(&mut adj, *mm, g);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut adj, *a, g.map(|x| x * c));
                }
                Op::Sigmoid(a) => {
                    let ga = elementwise(&g, &node.value, |x, y| x * y * (1.0 - y));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = elementwise(&g, &node.value, |x, y| x * (1.0 - y * y));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        accumulate(&mut adj, p, Tensor::vector(g.data()[off..off + n].to_vec()));
                        off += n;
                    }
                }
                Op::StackRows(parts) => {
                    let n = g.cols();
                    for (i, &p) in parts.iter().enumerate() {
                        accumulate(&mut adj, p, Tensor::vector(g.row(i).to_vec()));
                    }
                    debug_assert_eq!(n * parts.len(), g.len());
                }
                Op::Slice(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.shape());
                    ga.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                    accumulate(&mut adj, *a, ga);
                }
                Op::Row(m, i) => {
                    let src = self.value(*m);
                    let n = src.cols();
                    let mut gm = Tensor::zeros(src.shape());
                    gm.data_mut()[i * n..(i + 1) * n].copy_from_slice(g.data());
                    accumulate(&mut adj, *m, gm);
                }
                Op::Dot(a, b) => {
                    let gs = g.item();
                    let ga = self.value(*b).map(|x| x * gs);
                    let gb = self.value(*a).map(|x| x * gs);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let inner = dot(g.data(), y);
                    let ga: Vec<f64> = y
                        .iter()
                        .zip(g.data())
                        .map(|(&yi, &gi)| yi * (gi - inner))
                        .collect();
                    accumulate(&mut adj, *a, Tensor::vector(ga));
                }
                Op::Mask(a, mask) => {
                    let data = g.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                    accumulate(&mut adj, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::Sum(a) => {
                    let gs = g.item();
                    accumulate(&mut adj, *a, Tensor::filled(self.shape(*a), gs));
                }
                Op::AddScalars(xs) => {
                    for &x in xs {
                        accumulate(&mut adj, x, g.clone());
                    }
                }
                Op::CrossEntropy(logits, target) => {
                    let gs = g.item();
                    let mut p = softmax(self.value(*logits).data());
                    p[*target] -= 1.0;
                    p.iter_mut().for_each(|x| *x *= gs);
                    accumulate(&mut adj, *logits, Tensor::vector(p));
                }
                Op::Bce(prob, y, clamped) => {
                    let gp = if *clamped {
                        0.0
                    } else {
                        let p = self.value(*prob).item();
                        g.item() * (-(y / p) + (1.0 - y) / (1.0 - p))
                    };
                    accumulate(&mut adj, *prob, Tensor::filled(self.shape(*prob), gp));
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// One gradient tensor per parameter, indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    values: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            values: store
                .ids()
                .map(|id| Tensor::zeros(store.get(id).shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.values.iter()
    }

    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::dim(
                "gradients",
                &[self.values.len()],
                &[other.values.len()],
            ));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(Error::dim("gradients", a.shape(), b.shape()));
            }
            a.add_assign(b);
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.values {
            t.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Builds gradients from explicit tensors, one per parameter in order.
    pub fn from_tensors(values: Vec<Tensor>) -> Self {
        Gradients { values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values
            .iter()
            .map(|(n, t)| s.insert(*n, t.clone()).unwrap())
            .collect();
        (s, ids)
    }

    #[test]
    fn linear_gradient() {
        let (store, ids) = store_with(&[("w", Tensor::scalar(3.0))]);
        let mut tape = Tape::new();
        let w = tape.param(&store, ids[0]);
        let x = tape.constant(Tensor::scalar(2.0));
        let loss = tape.dot(w, x).unwrap();
        let g = tape.backward(loss, &store).unwrap();
        assert_eq!(g.get(ids[0]).item(), 2.0);
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let (store, ids) = store_with(&[
            ("used", Tensor::vector(vec![1.0, 2.0])),
            ("unused", Tensor::vector(vec![5.0, 6.0, 7.0])),
        ]);
        let mut tape = Tape::new();
        let u = tape.param(&store, ids[0]);
        let loss = tape.sum(u);
        let g = tape.backward(loss, &store).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.get(ids[1]).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn double_backward_is_an_error() {
        let (store, ids) = store_with(&[("w", Tensor::scalar(1.0))]);
        let mut tape = Tape::new();
        let w = tape.param(&store, ids[0]);
        let loss = tape.sum(w);
        tape.backward(loss, &store).unwrap();
        assert!(matches!(
            tape.backward(loss, &store),
            Err(Error::TapeConsumed)
        ));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (store, ids) = store_with(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        let mut tape = Tape::new();
        let w = tape.param(&store, ids[0]);
        assert!(matches!(
            tape.backward(w, &store),
            Err(Error::NonScalarLoss(_))
        ));
    }

    #[test]
    fn param_read_twice_shares_node() {
        let (store, ids) = store_with(&[("w", Tensor::scalar(4.0))]);
        let mut tape = Tape::new();
        let a = tape.param(&store, ids[0]);
        let b = tape.param(&store, ids[0]);
        assert_eq!(a, b);
        let prod = tape.mul(a, b).unwrap();
        let loss = tape.sum(prod);
        let g = tape.backward(loss, &store).unwrap();
        assert_eq!(g.get(ids[0]).item(), 8.0);
    }

    #[test]
    fn matvec_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::zeros(&[2, 3]));
        let x = tape.constant(Tensor::zeros(&[2]));
        let err = tape.matvec(w, x).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2]"), "{err}");
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0; 3]));
        assert!(matches!(
            tape.cross_entropy(z, 3),
            Err(Error::OutOfRange { .. })
        ));
    }
}
