//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar output walks the tape in reverse and
//! produces gradients for every node that depends on a trainable parameter.

use crate::conv::{self, ConvGeom};
use crate::error::{Result, TensorError};
use crate::par::Execution;
use crate::params::{Gradients, ParamId, ParamStore};
use crate::{Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvT2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulPlane { x: Var, m: Var },
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    LnClamp { x: Var, lo: T, hi: T },
    Mean(Var),
    Sum(Var),
    Concat(Vec<Var>),
    AvgPool { x: Var, factor: usize },
    Reshape(Var),
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    exec: Execution,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: impl Into<String>) -> TensorError {
    TensorError::Shape(msg.into())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), exec: Execution::default() }
    }

    pub fn with_execution(exec: Execution) -> Self {
        Graph { nodes: Vec::new(), exec }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Inserts a copy of a stored parameter. Only parameters of a single
    /// store may be trainable within one graph.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId, trainable: bool) -> Var {
        let value = store.get(id).clone();
        if trainable {
            self.push(value, Op::Param(id), true)
        } else {
            self.push(value, Op::Leaf, false)
        }
    }

    /// Same value, cut from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != c || ws[2] != ws[3] {
            return Err(shape_err(format!("conv2d weight {ws:?} for input with {c} channels")));
        }
        let co = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return Err(shape_err("conv2d bias"));
            }
        }
        let geom = ConvGeom::new(c, h, wd, ws[2], stride, pad).ok_or_else(|| shape_err("conv2d geometry"))?;
        let out_len = co * geom.out_pixels();
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let img = geom.image_len();
        let parts = self.exec.map_range(n, |i| {
            let mut y = vec![T::zero(); out_len];
            conv::conv2d_forward(&geom, &xv[i * img..(i + 1) * img], wv, bv, co, &mut y);
            y
        });
        let value = Tensor::new(&[n, co, geom.out_h, geom.out_w], parts.concat())?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, ng))
    }

    /// Transposed convolution with weight `[in, out, k, k]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[0] != c || ws[2] != ws[3] {
            return Err(shape_err(format!("conv_transpose2d weight {ws:?} for input with {c} channels")));
        }
        let co = ws[1];
        let geom = ConvGeom::transposed(co, h, wd, ws[2], stride, pad)
            .ok_or_else(|| shape_err("conv_transpose2d geometry"))?;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let in_len = c * h * wd;
        let parts = self.exec.map_range(n, |i| {
            let mut y = vec![T::zero(); geom.image_len()];
            conv::conv_transpose2d_forward(&geom, &xv[i * in_len..(i + 1) * in_len], wv, bv, c, &mut y);
            y
        });
        let value = Tensor::new(&[n, co, geom.height, geom.width], parts.concat())?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        Ok(self.push(value, Op::ConvT2d { x, w, b, geom }, ng))
    }

    /// `x [N, F] * w^T [F, O] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err(format!("linear {xs:?} x {ws:?}")));
        }
        let (n, f, o) = (xs[0], xs[1], ws[0]);
        let mut y = vec![T::zero(); n * o];
        crate::scalar::gemm(
            T::one(),
            crate::MatRef::row_major(self.value(x).data(), n, f, f),
            crate::MatRef::row_major(self.value(w).data(), o, f, f).t(),
            T::zero(),
            crate::MatMut::row_major(&mut y, n, o, o),
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(o) {
                for (v, bb) in row.iter_mut().zip(bv) {
                    *v += *bb;
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        Ok(self.push(Tensor::new(&[n, o], y)?, Op::Linear { x, w, b }, ng))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("elementwise {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a), data)
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        Tensor::new(self.shape(a), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x + y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x - y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x * y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    /// `x [N, C, H, W] * m [N, 1, H, W]`, broadcasting the mask over channels.
    pub fn mul_plane(&mut self, x: Var, m: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.shape(m) != [n, 1, h, w] {
            return Err(shape_err(format!("mask {:?} for {:?}", self.shape(m), self.shape(x))));
        }
        let hw = h * w;
        let xv = self.value(x).data();
        let mv = self.value(m).data();
        let data = (0..n * c * hw).map(|i| xv[i] * mv[(i / (c * hw)) * hw + i % hw]).collect();
        let v = Tensor::new(&[n, c, h, w], data)?;
        let ng = self.ng(&[x, m]);
        Ok(self.push(v, Op::MulPlane { x, m }, ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.unary(a, |x| x * s);
        let ng = self.ng(&[a]);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.unary(a, |x| if x > T::zero() { x } else { T::zero() });
        let ng = self.ng(&[a]);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.unary(a, |x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        let ng = self.ng(&[a]);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.unary(a, |x| x.abs());
        let ng = self.ng(&[a]);
        self.push(v, Op::Abs(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.unary(a, |x| x * x);
        let ng = self.ng(&[a]);
        self.push(v, Op::Square(a), ng)
    }

    /// `ln(clamp(x, lo, hi))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, a: Var, lo: T, hi: T) -> Var {
        let v = self.unary(a, |x| x.max(lo).min(hi).ln());
        let ng = self.ng(&[a]);
        self.push(v, Op::LnClamp { x: a, lo, hi }, ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: T = t.data().iter().copied().sum();
        let v = Tensor::scalar(s / T::from_usize(t.numel()).expect("count"));
        let ng = self.ng(&[a]);
        self.push(v, Op::Mean(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Channel concatenation of NCHW tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err("concat of nothing"))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut total_c = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(shape_err(format!("concat {:?} with {:?}", self.shape(p), self.shape(first))));
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total_c * hw);
        for i in 0..n {
            for &p in parts {
                let t = self.value(p);
                let pc = t.shape()[1];
                data.extend_from_slice(&t.data()[i * pc * hw..(i + 1) * pc * hw]);
            }
        }
        let v = Tensor::new(&[n, total_c, h, w], data)?;
        let ng = self.ng(parts);
        Ok(self.push(v, Op::Concat(parts.to_vec()), ng))
    }

    /// Non-overlapping `factor x factor` average pooling.
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(shape_err(format!("avg_pool factor {factor} on {h}x{w}")));
        }
        let (oh, ow) = (h / factor, w / factor);
        let xv = self.value(x).data();
        let inv = T::one() / T::from_usize(factor * factor).expect("count");
        let mut out = vec![T::zero(); n * c * oh * ow];
        for (pi, plane) in out.chunks_mut(oh * ow).enumerate() {
            let src = &xv[pi * h * w..(pi + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += src[(oy * factor + dy) * w + ox * factor + dx];
                        }
                    }
                    plane[oy * ow + ox] = acc * inv;
                }
            }
        }
        let v = Tensor::new(&[n, c, oh, ow], out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(v, Op::AvgPool { x, factor }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(&[x]);
        Ok(self.push(v, Op::Reshape(x), ng))
    }

    /// Mean per-pixel cross-entropy of `softmax(logits)` over the channel axis
    /// against integer class labels laid out `[N, H, W]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c, h, w) = self.value(logits).dims4()?;
        let hw = h * w;
        if labels.len() != n * hw {
            return Err(shape_err(format!("{} labels for {n}x{h}x{w} logits", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(shape_err(format!("label {bad} out of range for {c} classes")));
        }
        let probs = softmax_channels(self.value(logits), n, c, hw);
        let mut loss = T::zero();
        for i in 0..n {
            for p in 0..hw {
                let l = labels[i * hw + p];
                let pr = probs[(i * c + l) * hw + p];
                loss -= pr.max(T::min_positive_value()).ln();
            }
        }
        let v = Tensor::scalar(loss / T::from_usize(n * hw).expect("count"));
        let ng = self.ng(&[logits]);
        Ok(self.push(v, Op::SoftmaxCe { logits, labels: labels.to_vec(), probs }, ng))
    }

    /// Hash of the active branch of every piecewise operation (ReLU, |x|,
    /// clamped log). Two evaluations with equal signatures lie on the same
    /// smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |bit: bool| {
            h ^= bit as u64 + 1;
            h = h.wrapping_mul(0x100000001b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) | Op::Abs(a) => {
                    for &x in self.value(*a).data() {
                        mix(x > T::zero());
                    }
                }
                Op::LnClamp { x, lo, hi } => {
                    for &v in self.value(*x).data() {
                        mix(v > *lo && v < *hi);
                    }
                }
                _ => {}
            }
        }
        h
    }

    /// Reverse pass from the scalar `loss`; returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.backprop_node(node, &gy, &mut grads)?;
            grads[idx] = Some(gy);
        }
        Ok(grads)
    }

    /// Reverse pass collecting gradients of the trainable parameters of `store`.
    pub fn param_grads(&self, loss: Var, store: &ParamStore<T>) -> Result<Gradients<T>> {
        let node_grads = self.backward(loss)?;
        let mut out = Gradients::zeros_like(store);
        for (node, g) in self.nodes.iter().zip(node_grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                out.get_mut(*id).add_assign(&g);
            }
        }
        Ok(out)
    }

    fn backprop_node(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, g: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, b, geom } => {
                let n = self.value(*x).shape()[0];
                let co = self.shape(*w)[0];
                let (need_x, need_w) = (self.needs_grad(*x), self.needs_grad(*w));
                let need_b = b.is_some_and(|b| self.needs_grad(b));
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let img = geom.image_len();
                let out = co * geom.out_pixels();
                let parts = self.exec.map_range(n, |i| {
                    let mut dx = if need_x { vec![T::zero(); img] } else { Vec::new() };
                    let mut dw = if need_w { vec![T::zero(); wv.len()] } else { Vec::new() };
                    let mut db = if need_b { vec![T::zero(); co] } else { Vec::new() };
                    conv::conv2d_backward(
                        geom,
                        &xv[i * img..(i + 1) * img],
                        wv,
                        &gy.data()[i * out..(i + 1) * out],
                        co,
                        need_x.then_some(&mut dx[..]),
                        need_w.then_some(&mut dw[..]),
                        need_b.then_some(&mut db[..]),
                    );
                    (dx, dw, db)
                });
                self.scatter_param_parts(parts, *x, *w, *b, acc)?;
            }
            Op::ConvT2d { x, w, b, geom } => {
                let (n, ci, h, wd) = self.value(*x).dims4()?;
                let (need_x, need_w) = (self.needs_grad(*x), self.needs_grad(*w));
                let need_b = b.is_some_and(|b| self.needs_grad(b));
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let in_len = ci * h * wd;
                let out = geom.image_len();
                let co = geom.channels;
                let parts = self.exec.map_range(n, |i| {
                    let mut dx = if need_x { vec![T::zero(); in_len] } else { Vec::new() };
                    let mut dw = if need_w { vec![T::zero(); wv.len()] } else { Vec::new() };
                    let mut db = if need_b { vec![T::zero(); co] } else { Vec::new() };
                    conv::conv_transpose2d_backward(
                        geom,
                        &xv[i * in_len..(i + 1) * in_len],
                        wv,
                        &gy.data()[i * out..(i + 1) * out],
                        ci,
                        need_x.then_some(&mut dx[..]),
                        need_w.then_some(&mut dw[..]),
                        need_b.then_some(&mut db[..]),
                    );
                    (dx, dw, db)
                });
                self.scatter_param_parts(parts, *x, *w, *b, acc)?;
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, f) = (xs[0], xs[1]);
                let o = self.shape(*w)[0];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let g = gy.data();
                if self.needs_grad(*x) {
                    let mut dx = vec![T::zero(); n * f];
                    crate::scalar::gemm(
                        T::one(),
                        crate::MatRef::row_major(g, n, o, o),
                        crate::MatRef::row_major(wv, o, f, f),
                        T::zero(),
                        crate::MatMut::row_major(&mut dx, n, f, f),
                    );
                    acc(*x, Tensor::new(&[n, f], dx)?);
                }
                if self.needs_grad(*w) {
                    let mut dw = vec![T::zero(); o * f];
                    crate::scalar::gemm(
                        T::one(),
                        crate::MatRef::row_major(g, n, o, o).t(),
                        crate::MatRef::row_major(xv, n, f, f),
                        T::zero(),
                        crate::MatMut::row_major(&mut dw, o, f, f),
                    );
                    acc(*w, Tensor::new(&[o, f], dw)?);
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); o];
                    for row in g.chunks(o) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                    acc(*b, Tensor::new(&[o], db)?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, gy.clone());
                let mut neg = gy.clone();
                neg.scale_assign(-T::one());
                acc(*b, neg);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, zip_map(gy, bv, |g, y| g * y));
                acc(*b, zip_map(gy, av, |g, x| g * x));
            }
            Op::MulPlane { x, m } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let hw = h * w;
                let xv = self.value(*x).data();
                let mv = self.value(*m).data();
                let g = gy.data();
                if self.needs_grad(*x) {
                    let dx = (0..n * c * hw).map(|i| g[i] * mv[(i / (c * hw)) * hw + i % hw]).collect();
                    acc(*x, Tensor::new(&[n, c, h, w], dx)?);
                }
                if self.needs_grad(*m) {
                    let mut dm = vec![T::zero(); n * hw];
                    for i in 0..n * c * hw {
                        dm[(i / (c * hw)) * hw + i % hw] += g[i] * xv[i];
                    }
                    acc(*m, Tensor::new(&[n, 1, h, w], dm)?);
                }
            }
            Op::Scale(a, s) => {
                let mut g = gy.clone();
                g.scale_assign(*s);
                acc(*a, g);
            }
            Op::Relu(a) => {
                acc(*a, zip_map(gy, self.value(*a), |g, x| if x > T::zero() { g } else { T::zero() }));
            }
            Op::Sigmoid(a) => {
                acc(*a, zip_map(gy, &node.value, |g, y| g * y * (T::one() - y)));
            }
            Op::Abs(a) => {
                acc(
                    *a,
                    zip_map(gy, self.value(*a), |g, x| {
                        if x > T::zero() {
                            g
                        } else if x < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    }),
                );
            }
            Op::Square(a) => {
                let two = T::one() + T::one();
                acc(*a, zip_map(gy, self.value(*a), |g, x| two * g * x));
            }
            Op::LnClamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                acc(*x, zip_map(gy, self.value(*x), |g, v| if v > lo && v < hi { g / v } else { T::zero() }));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let g = gy.item() / T::from_usize(t.numel()).expect("count");
                acc(*a, Tensor::full(t.shape(), g));
            }
            Op::Sum(a) => {
                acc(*a, Tensor::full(self.shape(*a), gy.item()));
            }
            Op::Concat(parts) => {
                let (n, total_c, h, w) = gy.dims4()?;
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if self.needs_grad(p) {
                        let mut d = Vec::with_capacity(n * pc * hw);
                        for i in 0..n {
                            let start = (i * total_c + offset) * hw;
                            d.extend_from_slice(&gy.data()[start..start + pc * hw]);
                        }
                        acc(p, Tensor::new(&[n, pc, h, w], d)?);
                    }
                    offset += pc;
                }
            }
            Op::AvgPool { x, factor } => {
                let f = *factor;
                let (n, c, h, w) = self.value(*x).dims4()?;
                let (oh, ow) = (h / f, w / f);
                let inv = T::one() / T::from_usize(f * f).expect("count");
                let mut dx = vec![T::zero(); n * c * h * w];
                for (pi, plane) in dx.chunks_mut(h * w).enumerate() {
                    let g = &gy.data()[pi * oh * ow..(pi + 1) * oh * ow];
                    for y in 0..h {
                        for xx in 0..w {
                            plane[y * w + xx] = g[(y / f) * ow + xx / f] * inv;
                        }
                    }
                }
                acc(*x, Tensor::new(&[n, c, h, w], dx)?);
            }
            Op::Reshape(x) => {
                acc(*x, gy.clone().reshape(self.shape(*x))?);
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let (n, c, h, w) = self.value(*logits).dims4()?;
                let hw = h * w;
                let scale = gy.item() / T::from_usize(n * hw).expect("count");
                let mut d = probs.clone();
                for i in 0..n {
                    for p in 0..hw {
                        d[(i * c + labels[i * hw + p]) * hw + p] -= T::one();
                    }
                }
                d.iter_mut().for_each(|v| *v *= scale);
                acc(*logits, Tensor::new(&[n, c, h, w], d)?);
            }
        }
        Ok(())
    }

    fn scatter_param_parts(
        &self,
        parts: Vec<(Vec<T>, Vec<T>, Vec<T>)>,
        x: Var,
        w: Var,
        b: Option<Var>,
        mut acc: impl FnMut(Var, Tensor<T>),
    ) -> Result<()> {
        let mut dx_all = Vec::new();
        let mut dw_sum: Option<Vec<T>> = None;
        let mut db_sum: Option<Vec<T>> = None;
        for (dx, dw, db) in parts {
            dx_all.extend_from_slice(&dx);
            if !dw.is_empty() {
                match &mut dw_sum {
                    Some(s) => s.iter_mut().zip(&dw).for_each(|(a, b)| *a += *b),
                    None => dw_sum = Some(dw),
                }
            }
            if !db.is_empty() {
                match &mut db_sum {
                    Some(s) => s.iter_mut().zip(&db).for_each(|(a, b)| *a += *b),
                    None => db_sum = Some(db),
                }
            }
        }
        if self.needs_grad(x) {
            acc(x, Tensor::new(self.shape(x), dx_all)?);
        }
        if let Some(dw) = dw_sum {
            acc(w, Tensor::new(self.shape(w), dw)?);
        }
        if let (Some(b), Some(db)) = (b, db_sum) {
            acc(b, Tensor::new(self.shape(b), db)?);
        }
        Ok(())
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

/// Numerically stable softmax over the channel axis of an NCHW tensor.
pub fn softmax_channels<T: Scalar>(t: &Tensor<T>, n: usize, c: usize, hw: usize) -> Vec<T> {
    let x = t.data();
    let mut out = vec![T::zero(); x.len()];
    for i in 0..n {
        for p in 0..hw {
            let at = |k: usize| (i * c + k) * hw + p;
            let mut mx = T::neg_infinity();
            for k in 0..c {
                mx = mx.max(x[at(k)]);
            }
            let mut s = T::zero();
            for k in 0..c {
                let e = (x[at(k)] - mx).exp();
                out[at(k)] = e;
                s += e;
            }
            for k in 0..c {
                out[at(k)] /= s;
            }
        }
    }
    out
}
