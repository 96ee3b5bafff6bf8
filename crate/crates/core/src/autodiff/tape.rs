//! Operation recording for reverse-mode differentiation.
//!
//! Every primitive appends a node holding its output value. Nodes are only
//! ever appended after their inputs, so index order is a topological order
//! and the backward sweep is a single reverse pass over the node list.

use std::borrow::Cow;
use std::collections::HashMap;

use super::tensor::dot;
use super::{AutodiffError, Gradients, ParamId, ParamSet, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Slice { src: Var, offset: usize },
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softmax(_) => "softmax",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(_) => "sum",
        }
    }
}

struct Node<'p> {
    op: Op,
    value: Cow<'p, Tensor>,
    requires_grad: bool,
}

/// A single-threaded recording of primitive operations.
///
/// Parameters are borrowed from their [`ParamSet`] for the lifetime of the
/// tape, so registering a large embedding table costs nothing.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    param_nodes: HashMap<ParamId, Var>,
    registered: Vec<ParamId>,
    first_non_finite: Option<usize>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::with_capacity(256),
            param_nodes: HashMap::new(),
            registered: Vec::new(),
            first_non_finite: None,
        }
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

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Parameters registered so far, in registration order.
    pub fn registered_params(&self) -> &[ParamId] {
        &self.registered
    }

    /// First node whose forward value was NaN or infinite.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite
            .map(|i| (i, self.nodes[i].op.name()))
    }

    fn push(&mut self, op: Op, value: Cow<'p, Tensor>, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(idx);
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(idx)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, Cow::Owned(t), false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Registers (once) and returns the node for a parameter.
    pub fn param(&mut self, params: &'p ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let v = self.push(Op::Param, Cow::Borrowed(params.get(id)), true);
        self.param_nodes.insert(id, v);
        self.registered.push(id);
        v
    }

    /// Registers every parameter of the set, so unused ones get zero gradients.
    pub fn register_all(&mut self, params: &'p ParamSet) {
        for id in params.ids() {
            self.param(params, id);
        }
    }

    /// `[m, k] x [k]` gives `[m]`; `[m, k] x [k, n]` gives `[m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape().len(), 2, "matmul lhs must be a matrix");
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let out = match bv.shape() {
            [kk] => {
                assert_eq!(*kk, k, "matmul inner dimension");
                let mut out = vec![0.0; m];
                super::tensor::matvec(av.data(), m, k, bv.data(), &mut out);
                Tensor::vector(out)
            }
            [kk, n] => {
                assert_eq!(*kk, k, "matmul inner dimension");
                let n = *n;
                let mut out = vec![0.0; m * n];
                let (ad, bd) = (av.data(), bv.data());
                for i in 0..m {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let a_ip = ad[i * k + p];
                        if a_ip == 0.0 {
                            continue;
                        }
                        for (o, b) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                            *o += a_ip * b;
                        }
                    }
                }
                Tensor::matrix(m, n, out)
            }
            s => panic!("matmul rhs shape {s:?} unsupported"),
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), Cow::Owned(out), rg)
    }

    fn broadcast_binary(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        if av.same_shape(bv) {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(av.shape().to_vec(), data).unwrap()
        } else if bv.is_scalar() {
            let y = bv.item();
            av.map(|x| f(x, y))
        } else if av.is_scalar() {
            let x = av.item();
            bv.map(|y| f(x, y))
        } else {
            panic!(
                "elementwise shape mismatch {:?} vs {:?}",
                av.shape(),
                bv.shape()
            );
        }
    }

    /// Elementwise sum; a one-element operand broadcasts.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.broadcast_binary(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), Cow::Owned(out), rg)
    }

    /// Elementwise product; a one-element operand broadcasts.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.broadcast_binary(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Mul(a, b), Cow::Owned(out), rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(op, Cow::Owned(out), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    /// Softmax over all elements, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut data = av.data().to_vec();
        softmax_in_place(&mut data);
        let out = Tensor::new(av.shape().to_vec(), data).unwrap();
        let rg = self.rg(a);
        self.push(Op::Softmax(a), Cow::Owned(out), rg)
    }

    /// Concatenates the flattened inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let total: usize = parts.iter().map(|&p| self.value(p).len()).sum();
        let mut data = Vec::with_capacity(total);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::Concat(parts.to_vec()), Cow::Owned(Tensor::vector(data)), rg)
    }

    /// Contiguous range `[offset, offset + len)` of the flattened input, as a vector.
    pub fn slice(&mut self, src: Var, offset: usize, len: usize) -> Var {
        let sv = self.value(src);
        assert!(
            offset + len <= sv.len() && len > 0,
            "slice {offset}+{len} out of range for {} elements",
            sv.len()
        );
        let out = Tensor::vector(sv.data()[offset..offset + len].to_vec());
        let rg = self.rg(src);
        self.push(Op::Slice { src, offset }, Cow::Owned(out), rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), Cow::Owned(Tensor::scalar(s)), rg)
    }

    // Composites built only from the primitives above.

    pub fn neg(&mut self, a: Var) -> Var {
        let m = self.scalar(-1.0);
        self.mul(a, m)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let s = self.scalar(factor);
        self.mul(a, s)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let s = self.scalar(c);
        self.add(a, s)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Gradient of scalar `loss` with respect to every registered parameter.
    ///
    /// Parameters not reached from `loss` receive zero gradients, as do
    /// parameters of `params` that were never registered on this tape.
    pub fn backward(&self, loss: Var, params: &ParamSet) -> Result<Gradients, AutodiffError> {
        let grads = self.backward_nodes(loss)?;
        let mut out: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        for &id in &self.registered {
            let node = self.param_nodes[&id];
            if let Some(g) = &grads[node.0] {
                out[id.0] = Tensor::new(self.value(node).shape().to_vec(), g.clone())?;
            }
        }
        Ok(Gradients::from_vec(out))
    }

    fn backward_nodes(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>, AutodiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutodiffError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        if let Some((node, op)) = self.first_non_finite() {
            return Err(AutodiffError::NonFinite { node, op });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(AutodiffError::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            self.propagate(idx, &g, &mut grads);
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Param) {
                grads[idx] = Some(g);
            }
        }
        Ok(grads)
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = if bv.shape().len() == 1 { 1 } else { bv.shape()[1] };
                let (ad, bd) = (av.data(), bv.data());
                if self.rg(*a) {
                    // dA = G B^T
                    let ga = grad_buf(grads, *a, m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let garow = &mut ga[i * k..(i + 1) * k];
                        if n == 1 {
                            let gi = grow[0];
                            if gi != 0.0 {
                                for (d, &bp) in garow.iter_mut().zip(bd) {
                                    *d += gi * bp;
                                }
                            }
                        } else {
                            for (p, d) in garow.iter_mut().enumerate() {
                                *d += dot(grow, &bd[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
                if self.rg(*b) {
                    // dB = A^T G
                    let gb = grad_buf(grads, *b, k * n);
                    for i in 0..m {
                        let arow = &ad[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for (p, &a_ip) in arow.iter().enumerate() {
                            if a_ip == 0.0 {
                                continue;
                            }
                            for (d, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += a_ip * gv;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for &x in [a, b] {
                    if !self.rg(x) {
                        continue;
                    }
                    let len = self.value(x).len();
                    let gx = grad_buf(grads, x, len);
                    if len == g.len() {
                        for (d, &gv) in gx.iter_mut().zip(g) {
                            *d += gv;
                        }
                    } else {
                        gx[0] += g.iter().sum::<f64>();
                    }
                }
            }
            Op::Mul(a, b) => {
                for (x, y) in [(*a, *b), (*b, *a)] {
                    if !self.rg(x) {
                        continue;
                    }
                    let (xv, yv) = (self.value(x), self.value(y));
                    let len = xv.len();
                    let yd = yv.data();
                    let gx = grad_buf(grads, x, len);
                    if len == g.len() {
                        if yd.len() == g.len() {
                            for ((d, &gv), &yy) in gx.iter_mut().zip(g).zip(yd) {
                                *d += gv * yy;
                            }
                        } else {
                            let yy = yd[0];
                            for (d, &gv) in gx.iter_mut().zip(g) {
                                *d += gv * yy;
                            }
                        }
                    } else {
                        // x was broadcast.
                        gx[0] += g.iter().zip(yd).map(|(gv, yy)| gv * yy).sum::<f64>();
                    }
                }
            }
            Op::Sigmoid(a) => {
                let ga = grad_buf(grads, *a, g.len());
                for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                    *d += gv * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                let ga = grad_buf(grads, *a, g.len());
                for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                    *d += gv * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                let ga = grad_buf(grads, *a, g.len());
                for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                    if y > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Exp(a) => {
                let ga = grad_buf(grads, *a, g.len());
                for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                    *d += gv * y;
                }
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let ga = grad_buf(grads, *a, g.len());
                for ((d, &gv), &xv) in ga.iter_mut().zip(g).zip(x) {
                    *d += gv / xv;
                }
            }
            Op::Softmax(a) => {
                let gy = dot(g, out);
                let ga = grad_buf(grads, *a, g.len());
                for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                    *d += y * (gv - gy);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.rg(p) {
                        let gp = grad_buf(grads, p, len);
                        for (d, &gv) in gp.iter_mut().zip(&g[off..off + len]) {
                            *d += gv;
                        }
                    }
                    off += len;
                }
            }
            Op::Slice { src, offset } => {
                let len = self.value(*src).len();
                let gs = grad_buf(grads, *src, len);
                for (d, &gv) in gs[*offset..*offset + g.len()].iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                let ga = grad_buf(grads, *a, len);
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }
        }
    }
}

fn grad_buf(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}
