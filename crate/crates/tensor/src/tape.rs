//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable op appends one node whose inputs already live on the
//! tape, so node order is a topological order and [`Tape::backward`] is a
//! single reverse sweep. Values are reference counted; parameters enter the
//! tape by sharing the store's storage rather than copying it.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use crate::error::{shape_err, Result, TensorError};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T> {
    Constant,
    Input,
    Param,
    MatMul {
        a: usize,
        b: usize,
        a_t: bool,
        b_t: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    AddBias {
        x: usize,
        bias: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        factor: T,
    },
    Sum {
        x: usize,
    },
    Gelu {
        x: usize,
    },
    Relu {
        x: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax {
        x: usize,
    },
    Dropout {
        x: usize,
        mask: Vec<T>,
    },
    Gather {
        sources: Vec<usize>,
        index: Vec<(usize, usize)>,
    },
    Reshape {
        x: usize,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        len: usize,
        heads: usize,
        key_mask: Option<Vec<bool>>,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        eps: T,
        probs: Vec<T>,
    },
}

struct Node<T: Scalar> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records one forward pass. Single-threaded by construction.
pub struct Tape<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_raw(&self, value: Rc<Tensor<T>>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(
        &self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[usize],
    ) -> Result<Var<'_, T>> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let needs_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].needs_grad)
        };
        Ok(self.push_raw(Rc::new(value), op, needs_grad))
    }

    fn val(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_raw(Rc::new(value), Op::Constant, false)
    }

    /// A leaf that receives a gradient (not tied to any parameter store).
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_raw(Rc::new(value), Op::Input, true)
    }

    /// Bring a parameter onto the tape. Repeated calls with the same id return
    /// the same node, so every use of a tied tensor accumulates into one gradient.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let var = self.push_raw(store.get(id).shared(), Op::Param, true);
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    /// Gather rows from several same-width sources into one `[index.len(), d]` matrix.
    pub fn gather<'t>(
        &'t self,
        sources: &[Var<'t, T>],
        index: &[(usize, usize)],
    ) -> Result<Var<'t, T>> {
        if sources.is_empty() {
            return Err(TensorError::Contract("gather needs at least one source".into()));
        }
        let vals: Vec<_> = sources.iter().map(|s| self.val(s.id)).collect();
        let d = vals[0].cols();
        if vals.iter().any(|v| v.cols() != d) {
            return Err(shape_err("gather", "sources differ in width"));
        }
        let mut out = Vec::with_capacity(index.len() * d);
        for &(src, row) in index {
            let v = vals.get(src).ok_or(TensorError::Index {
                op: "gather",
                index: src,
                bound: vals.len(),
            })?;
            if row >= v.rows() {
                return Err(TensorError::Index {
                    op: "gather",
                    index: row,
                    bound: v.rows(),
                });
            }
            out.extend_from_slice(v.row(row));
        }
        let ids: Vec<usize> = sources.iter().map(|s| s.id).collect();
        let value = Tensor::new(vec![index.len(), d], out)?;
        self.push(
            "gather",
            value,
            Op::Gather {
                sources: ids.clone(),
                index: index.to_vec(),
            },
            &ids,
        )
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 || !root.value.shape().is_empty() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);

        for i in (0..=loss.id).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            backprop(&nodes, node, g, lo);
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            shapes,
            params: self.params.borrow().clone(),
        })
    }
}

fn slot<'g, T: Scalar>(
    lo: &'g mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    id: usize,
) -> Option<&'g mut Vec<T>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let n = nodes[id].value.len();
    Some(lo[id].get_or_insert_with(|| vec![T::zero(); n]))
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let one = T::one();
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let value = half * x * (one + t);
    let dinner = c * (one + T::of(3.0) * a * x * x);
    let deriv = half * (one + t) + half * x * (one - t * t) * dinner;
    (value, deriv)
}

fn backprop<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T], lo: &mut [Option<Vec<T>>]) {
    match &node.op {
        Op::Constant | Op::Input | Op::Param => {}
        &Op::MatMul {
            a,
            b,
            a_t,
            b_t,
            m,
            k,
            n,
        } => {
            let av = Rc::clone(&nodes[a].value);
            let bv = Rc::clone(&nodes[b].value);
            if let Some(ga) = slot(lo, nodes, a) {
                if a_t {
                    T::gemm(k, n, m, bv.data(), b_t, g, true, T::one(), ga);
                } else {
                    T::gemm(m, n, k, g, false, bv.data(), !b_t, T::one(), ga);
                }
            }
            if let Some(gb) = slot(lo, nodes, b) {
                if b_t {
                    T::gemm(n, m, k, g, true, av.data(), a_t, T::one(), gb);
                } else {
                    T::gemm(k, m, n, av.data(), !a_t, g, false, T::one(), gb);
                }
            }
        }
        &Op::AddBias { x, bias } => {
            if let Some(gx) = slot(lo, nodes, x) {
                for (o, &v) in gx.iter_mut().zip(g) {
                    *o += v;
                }
            }
            let d = nodes[bias].value.len();
            if let Some(gb) = slot(lo, nodes, bias) {
                for row in g.chunks(d) {
                    for (o, &v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
        }
        &Op::Add { a, b } => {
            for id in [a, b] {
                if let Some(gs) = slot(lo, nodes, id) {
                    for (o, &v) in gs.iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
        }
        &Op::Mul { a, b } => {
            let av = Rc::clone(&nodes[a].value);
            let bv = Rc::clone(&nodes[b].value);
            if let Some(ga) = slot(lo, nodes, a) {
                for ((o, &v), &y) in ga.iter_mut().zip(g).zip(bv.data()) {
                    *o += v * y;
                }
            }
            if let Some(gb) = slot(lo, nodes, b) {
                for ((o, &v), &y) in gb.iter_mut().zip(g).zip(av.data()) {
                    *o += v * y;
                }
            }
        }
        &Op::Scale { x, factor } => {
            if let Some(gx) = slot(lo, nodes, x) {
                for (o, &v) in gx.iter_mut().zip(g) {
                    *o += v * factor;
                }
            }
        }
        &Op::Sum { x } => {
            if let Some(gx) = slot(lo, nodes, x) {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }
        }
        &Op::Gelu { x } => {
            let xv = Rc::clone(&nodes[x].value);
            if let Some(gx) = slot(lo, nodes, x) {
                for ((o, &v), &xi) in gx.iter_mut().zip(g).zip(xv.data()) {
                    *o += v * gelu_parts(xi).1;
                }
            }
        }
        &Op::Relu { x } => {
            let xv = Rc::clone(&nodes[x].value);
            if let Some(gx) = slot(lo, nodes, x) {
                for ((o, &v), &xi) in gx.iter_mut().zip(g).zip(xv.data()) {
                    if xi > T::zero() {
                        *o += v;
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let gv = Rc::clone(&nodes[*gain].value);
            let d = gv.len();
            let dn = T::of(d as f64);
            if let Some(gx) = slot(lo, nodes, *x) {
                let mut dxhat = vec![T::zero(); d];
                for (r, (grow, orow)) in g.chunks(d).zip(gx.chunks_mut(d)).enumerate() {
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for j in 0..d {
                        dxhat[j] = grow[j] * gv.data()[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xh[j];
                    }
                    mean_d /= dn;
                    mean_dx /= dn;
                    for j in 0..d {
                        orow[j] += rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                    }
                }
            }
            if let Some(gg) = slot(lo, nodes, *gain) {
                for (grow, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        gg[j] += grow[j] * xh[j];
                    }
                }
            }
            if let Some(gb) = slot(lo, nodes, *bias) {
                for grow in g.chunks(d) {
                    for j in 0..d {
                        gb[j] += grow[j];
                    }
                }
            }
        }
        &Op::Softmax { x } => {
            let y = Rc::clone(&node.value);
            let d = y.cols();
            if let Some(gx) = slot(lo, nodes, x) {
                for ((grow, yrow), orow) in g.chunks(d).zip(y.data().chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        orow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(gx) = slot(lo, nodes, *x) {
                for ((o, &v), &m) in gx.iter_mut().zip(g).zip(mask) {
                    *o += v * m;
                }
            }
        }
        Op::Gather { sources, index } => {
            let d = node.value.cols();
            for (si, &src) in sources.iter().enumerate() {
                // the same node may be listed twice; handle each listing separately
                if sources[..si].contains(&src) {
                    continue;
                }
                if let Some(gs) = slot(lo, nodes, src) {
                    for (r, &(s, row)) in index.iter().enumerate() {
                        if sources[s] != src {
                            continue;
                        }
                        let from = &g[r * d..(r + 1) * d];
                        for (o, &v) in gs[row * d..(row + 1) * d].iter_mut().zip(from) {
                            *o += v;
                        }
                    }
                }
            }
        }
        &Op::Reshape { x } => {
            if let Some(gx) = slot(lo, nodes, x) {
                for (o, &v) in gx.iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        Op::Attention {
            q,
            k,
            v,
            len,
            heads,
            key_mask,
            probs,
        } => attention_backward(nodes, lo, g, (*q, *k, *v), *len, *heads, key_mask.as_deref(), probs),
        Op::CrossEntropy {
            logits,
            targets,
            eps,
            probs,
        } => {
            let kdim = nodes[*logits].value.cols();
            let b = targets.len();
            let scale = g[0] / T::of(b as f64);
            let off = *eps / T::of(kdim as f64);
            let on = T::one() - *eps;
            if let Some(gl) = slot(lo, nodes, *logits) {
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..kdim {
                        let mut qv = off;
                        if j == t {
                            qv += on;
                        }
                        gl[r * kdim + j] += scale * (probs[r * kdim + j] - qv);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    nodes: &[Node<T>],
    lo: &mut [Option<Vec<T>>],
    g: &[T],
    (q, k, v): (usize, usize, usize),
    len: usize,
    heads: usize,
    key_mask: Option<&[bool]>,
    probs: &[T],
) {
    let qv = Rc::clone(&nodes[q].value);
    let kv = Rc::clone(&nodes[k].value);
    let vv = Rc::clone(&nodes[v].value);
    let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
    let d = qv.cols();
    let rows = qv.rows();
    let groups = rows / len;
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut dq = vec![T::zero(); rows * d];
    let mut dk = vec![T::zero(); rows * d];
    let mut dv = vec![T::zero(); rows * d];
    let mut dp = vec![T::zero(); len];
    for gr in 0..groups {
        let base = gr * len;
        let valid = |j: usize| key_mask.is_none_or(|m| m[base + j]);
        for h in 0..heads {
            let off = h * dh;
            for i in 0..len {
                let p = &probs[((gr * heads + h) * len + i) * len..][..len];
                let gi = &g[(base + i) * d + off..][..dh];
                let mut sdot = T::zero();
                for j in 0..len {
                    if !valid(j) || p[j] == T::zero() {
                        dp[j] = T::zero();
                        continue;
                    }
                    let vj = &vd[(base + j) * d + off..][..dh];
                    let dpj: T = gi.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                    dp[j] = dpj;
                    sdot += p[j] * dpj;
                    let dvj = &mut dv[(base + j) * d + off..][..dh];
                    for c in 0..dh {
                        dvj[c] += p[j] * gi[c];
                    }
                }
                let qi = &qd[(base + i) * d + off..][..dh];
                for j in 0..len {
                    if !valid(j) || p[j] == T::zero() {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - sdot) * scale;
                    let kj = &kd[(base + j) * d + off..][..dh];
                    let dqi = &mut dq[(base + i) * d + off..][..dh];
                    for c in 0..dh {
                        dqi[c] += ds * kj[c];
                    }
                    let dkj = &mut dk[(base + j) * d + off..][..dh];
                    for c in 0..dh {
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }
    }
    for (id, local) in [(q, dq), (k, dk), (v, dv)] {
        if let Some(gs) = slot(lo, nodes, id) {
            for (o, x) in gs.iter_mut().zip(local) {
                *o += x;
            }
        }
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: HashMap<ParamId, usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a recorded value; zeros if it was not reached.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.node(var.id)
    }

    fn node(&self, id: usize) -> Tensor<T> {
        match &self.grads[id] {
            Some(g) => Tensor::new(self.shapes[id].clone(), g.clone()).expect("shape recorded"),
            None => Tensor::zeros(&self.shapes[id]),
        }
    }

    pub fn param(&self, id: ParamId) -> Option<Tensor<T>> {
        self.params.get(&id).map(|&n| self.node(n))
    }

    /// One gradient per store entry; parameters never touched by the tape get zeros.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store
            .iter()
            .map(|(id, p)| self.param(id).unwrap_or_else(|| Tensor::zeros(p.value().shape())))
            .collect()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.val(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::Contract("operands recorded on different tapes".into()))
        }
    }

    fn matmul_impl(&self, other: &Var<'t, T>, b_t: bool, name: &'static str) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let a = self.value();
        let b = other.value();
        if b.shape().len() != 2 {
            return Err(shape_err(name, format!("rhs must be 2-D, got {:?}", b.shape())));
        }
        let (m, k) = (a.rows(), a.cols());
        let (bk, n) = if b_t {
            (b.shape()[1], b.shape()[0])
        } else {
            (b.shape()[0], b.shape()[1])
        };
        if a.shape().is_empty() || k != bk {
            return Err(shape_err(
                name,
                format!("{:?} x {:?}{}", a.shape(), b.shape(), if b_t { "^T" } else { "" }),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, a.data(), false, b.data(), b_t, T::zero(), &mut out);
        let mut shape = a.shape().to_vec();
        *shape.last_mut().expect("non-scalar") = n;
        self.tape.push(
            name,
            Tensor::new(shape, out)?,
            Op::MatMul {
                a: self.id,
                b: other.id,
                a_t: false,
                b_t,
                m,
                k,
                n,
            },
            &[self.id, other.id],
        )
    }

    /// `self [.., k] x other [k, n]`, leading dimensions flattened.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(other, false, "matmul")
    }

    /// `self [.., k] x other^T` where `other` is `[n, k]`.
    pub fn matmul_nt(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(other, true, "matmul_nt")
    }

    /// Broadcast a `[d]` bias over every row.
    pub fn add_bias(&self, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(bias)?;
        let x = self.value();
        let b = bias.value();
        if b.len() != x.cols() {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", x.shape(), b.shape())));
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(b.len()) {
            for (o, &v) in row.iter_mut().zip(b.data()) {
                *o += v;
            }
        }
        self.tape.push(
            "add_bias",
            Tensor::new(x.shape().to_vec(), out)?,
            Op::AddBias {
                x: self.id,
                bias: bias.id,
            },
            &[self.id, bias.id],
        )
    }

    fn zip_with(
        &self,
        other: &Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        self.tape
            .push(name, Tensor::new(a.shape().to_vec(), out)?, op, &[self.id, other.id])
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let op = Op::Add {
            a: self.id,
            b: other.id,
        };
        self.zip_with(other, "add", |x, y| x + y, op)
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let op = Op::Mul {
            a: self.id,
            b: other.id,
        };
        self.zip_with(other, "mul", |x, y| x * y, op)
    }

    pub fn scale(&self, factor: f64) -> Result<Var<'t, T>> {
        let f = T::of(factor);
        let x = self.value();
        self.tape.push(
            "scale",
            x.map(|v| v * f),
            Op::Scale { x: self.id, factor: f },
            &[self.id],
        )
    }

    pub fn sum(&self) -> Result<Var<'t, T>> {
        let total: T = self.value().data().iter().copied().sum();
        self.tape
            .push("sum", Tensor::scalar(total), Op::Sum { x: self.id }, &[self.id])
    }

    pub fn gelu(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        self.tape.push(
            "gelu",
            x.map(|v| gelu_parts(v).0),
            Op::Gelu { x: self.id },
            &[self.id],
        )
    }

    pub fn relu(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        self.tape.push(
            "relu",
            x.map(|v| v.max(T::zero())),
            Op::Relu { x: self.id },
            &[self.id],
        )
    }

    /// Normalize each row to zero mean and unit variance, then apply `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Var<'t, T>, bias: &Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        self.same_tape(gain)?;
        self.same_tape(bias)?;
        if eps <= 0.0 {
            return Err(TensorError::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let x = self.value();
        let gv = gain.value();
        let bv = bias.value();
        let d = x.cols();
        if d == 0 || gv.len() != d || bv.len() != d {
            return Err(shape_err(
                "layer_norm",
                format!("{:?} with gain {:?} bias {:?}", x.shape(), gv.shape(), bv.shape()),
            ));
        }
        let rows = x.rows();
        let dn = T::of(d as f64);
        let e = T::of(eps);
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let s = T::one() / (var + e).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        self.tape.push(
            "layer_norm",
            Tensor::new(x.shape().to_vec(), out)?,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                rstd,
            },
            &[self.id, gain.id, bias.id],
        )
    }

    /// Softmax over the trailing dimension, stabilized by subtracting the row max.
    pub fn softmax(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        let d = x.cols();
        if d == 0 {
            return Err(shape_err("softmax", "empty rows"));
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        self.tape.push(
            "softmax",
            Tensor::new(x.shape().to_vec(), out)?,
            Op::Softmax { x: self.id },
            &[self.id],
        )
    }

    /// Inverted dropout: identity in eval mode, otherwise zero with probability
    /// `p` and scale survivors by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, mode: Mode, rng: &mut R) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Config(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(*self);
        }
        let x = self.value();
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.tape.push(
            "dropout",
            Tensor::new(x.shape().to_vec(), out)?,
            Op::Dropout { x: self.id, mask },
            &[self.id],
        )
    }

    pub fn gather_rows(&self, rows: &[usize]) -> Result<Var<'t, T>> {
        let index: Vec<_> = rows.iter().map(|&r| (0, r)).collect();
        self.tape.gather(&[*self], &index)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = (*self.value()).clone().reshaped(shape)?;
        self.tape.push("reshape", x, Op::Reshape { x: self.id }, &[self.id])
    }

    /// Scaled dot-product self-attention over independent groups.
    ///
    /// `self` holds queries and `k`, `v` keys and values, each `[groups * len, d]`
    /// with `d` split evenly over `heads`. `key_mask[g * len + j] == false`
    /// removes slot `j` of group `g` as a key for every query in that group.
    pub fn attention(
        &self,
        k: &Var<'t, T>,
        v: &Var<'t, T>,
        heads: usize,
        len: usize,
        key_mask: Option<&[bool]>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(k)?;
        self.same_tape(v)?;
        let (qv, kv, vv) = (self.value(), k.value(), v.value());
        let d = qv.cols();
        let rows = qv.rows();
        if kv.shape() != qv.shape() || vv.shape() != qv.shape() || qv.shape().len() != 2 {
            return Err(shape_err(
                "attention",
                format!("q {:?} k {:?} v {:?}", qv.shape(), kv.shape(), vv.shape()),
            ));
        }
        if heads == 0 || d % heads != 0 || len == 0 || rows % len != 0 {
            return Err(shape_err(
                "attention",
                format!("d={d} heads={heads} rows={rows} len={len}"),
            ));
        }
        if let Some(m) = key_mask {
            if m.len() != rows {
                return Err(shape_err("attention", format!("mask {} for {rows} rows", m.len())));
            }
        }
        let groups = rows / len;
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut probs = vec![T::zero(); groups * heads * len * len];
        let mut out = vec![T::zero(); rows * d];
        for gr in 0..groups {
            let base = gr * len;
            let valid = |j: usize| key_mask.is_none_or(|m| m[base + j]);
            for h in 0..heads {
                let off = h * dh;
                for i in 0..len {
                    let qi = &qd[(base + i) * d + off..][..dh];
                    let p = &mut probs[((gr * heads + h) * len + i) * len..][..len];
                    let mut max = T::neg_infinity();
                    for j in 0..len {
                        if !valid(j) {
                            continue;
                        }
                        let kj = &kd[(base + j) * d + off..][..dh];
                        let s: T = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                        p[j] = s;
                        max = max.max(s);
                    }
                    if max == T::neg_infinity() {
                        continue;
                    }
                    let mut total = T::zero();
                    for (j, pj) in p.iter_mut().enumerate() {
                        if valid(j) {
                            *pj = (*pj - max).exp();
                            total += *pj;
                        }
                    }
                    let oi = &mut out[(base + i) * d + off..][..dh];
                    for j in 0..len {
                        if !valid(j) {
                            continue;
                        }
                        p[j] /= total;
                        let vj = &vd[(base + j) * d + off..][..dh];
                        for c in 0..dh {
                            oi[c] += p[j] * vj[c];
                        }
                    }
                }
            }
        }
        self.tape.push(
            "attention",
            Tensor::new(vec![rows, d], out)?,
            Op::Attention {
                q: self.id,
                k: k.id,
                v: v.id,
                len,
                heads,
                key_mask: key_mask.map(<[bool]>::to_vec),
                probs,
            },
            &[self.id, k.id, v.id],
        )
    }

    /// Mean over rows of the cross entropy between `softmax(self)` and the
    /// smoothed target `(1 - eps) * onehot + eps / K`.
    pub fn cross_entropy_smoothed(&self, targets: &[usize], eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let kdim = x.cols();
        let b = x.rows();
        if x.shape().len() != 2 || targets.len() != b || b == 0 {
            return Err(shape_err(
                "cross_entropy",
                format!("logits {:?} with {} targets", x.shape(), targets.len()),
            ));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(TensorError::Config(format!("label smoothing must be in [0, 1], got {eps}")));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= kdim) {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: t,
                bound: kdim,
            });
        }
        let e = T::of(eps);
        let off = e / T::of(kdim as f64);
        let on = T::one() - e;
        let mut probs = x.data().to_vec();
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = x.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            let mut loss = T::zero();
            for (j, &z) in row.iter().enumerate() {
                let logp = z - lse;
                let mut qv = off;
                if j == t {
                    qv += on;
                }
                loss -= qv * logp;
                probs[r * kdim + j] = logp.exp();
            }
            total += loss;
        }
        let mean = total / T::of(b as f64);
        self.tape.push(
            "cross_entropy",
            Tensor::scalar(mean),
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                eps: e,
                probs,
            },
            &[self.id],
        )
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
