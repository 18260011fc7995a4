//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every primitive appends one node holding its output value and the ids of
//! its inputs. Because nodes can only reference earlier nodes, the tape is a
//! topological order by construction and [`Tape::backward`] is a single
//! reverse sweep.

use crate::error::{Error, Result};
use crate::numerics::conv::{self, Conv2dGeometry};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(T::zero()),
        }
    }

    /// Derivative expressed through the forward output `y`.
    fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    // Split on sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Lower clamp applied to probabilities before taking logs in [`Tape::bce`].
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Pointwise(Var, Activation),
    Conv2d(Var, Var, Conv2dGeometry),
    Upsample2x(Var),
    Reshape(Var),
    Slice(Var, usize),
    Sum(Var),
    Bce(Var, Vec<T>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only record of primitive applications.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Reverse-mode gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    visited: usize,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Number of nodes whose backward rule ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (n, i_dim, o_dim) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); n * o_dim];
        for r in 0..n {
            let row = &mut out[r * o_dim..(r + 1) * o_dim];
            for i in 0..i_dim {
                let av = ad[r * i_dim + i];
                let brow = &bd[i * o_dim..(i + 1) * o_dim];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::new(vec![n, o_dim], out)?;
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    /// Adds `b[O]` to every row of `x[N,O]`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(dim_err("add_row_bias", sx, sb));
        }
        let o_dim = sb[0];
        let bd = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(o_dim) {
            for (v, &bv) in row.iter_mut().zip(bd) {
                *v += bv;
            }
        }
        let value = Tensor::new(sx.to_vec(), out)?;
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddRowBias(x, b), needs))
    }

    /// `x[N,I] · W[I,O] + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(dim_err("linear", sx, sw));
        }
        if sb.len() != 1 || sb[0] != sw[1] {
            return Err(dim_err("linear", sw, sb));
        }
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    /// Adds `b[C]` to each channel plane of `x[C,H,W]`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 3 || sb.len() != 1 || sx[0] != sb[0] {
            return Err(dim_err("add_channel_bias", sx, sb));
        }
        let plane = sx[1] * sx[2];
        let bd = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for (chunk, &bv) in out.chunks_mut(plane).zip(bd) {
            for v in chunk {
                *v += bv;
            }
        }
        let value = Tensor::new(sx.to_vec(), out)?;
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddChannelBias(x, b), needs))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err(op, sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(sa.to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "add", |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let needs = self.needs(x);
        self.push(value, Op::Scale(x, c), needs)
    }

    pub fn pointwise(&mut self, x: Var, act: Activation) -> Var {
        let value = self.value(x).map(|v| act.apply(v));
        let needs = self.needs(x);
        self.push(value, Op::Pointwise(x, act), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.pointwise(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.pointwise(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.pointwise(x, Activation::Relu)
    }

    /// Cross-correlation of `x[C_in,H,W]` with `k[C_out,C_in,Kh,Kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, geom: Conv2dGeometry) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(k));
        if sx.len() != 3 || sk.len() != 4 || sx[0] != sk[1] {
            return Err(dim_err("conv2d", sx, sk));
        }
        let (out, shape) = conv::forward(self.value(x), self.value(k), geom)?;
        let value = Tensor::new(shape, out)?;
        let needs = self.needs(x) || self.needs(k);
        Ok(self.push(value, Op::Conv2d(x, k, geom), needs))
    }

    /// Nearest-neighbour 2x upsampling of `x[C,h,w]` to `[C,out_h,out_w]`,
    /// cropping the trailing row/column when the target is odd.
    pub fn upsample2x(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 3 || out_h.div_ceil(2) != sx[1] || out_w.div_ceil(2) != sx[2] {
            return Err(dim_err("upsample2x", sx, &[sx.first().copied().unwrap_or(0), out_h, out_w]));
        }
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            for i in 0..out_h {
                let src = &xd[ch * h * w + (i / 2) * w..ch * h * w + (i / 2 + 1) * w];
                out.extend((0..out_w).map(|j| src[j / 2]));
            }
        }
        let value = Tensor::new(vec![c, out_h, out_w], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Upsample2x(x), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    /// Contiguous slice of the flattened `x`, reshaped to `shape`.
    pub fn slice(&mut self, x: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let src = self.value(x).data();
        if offset + n > src.len() {
            return Err(dim_err("slice", &[src.len()], &[offset, n]));
        }
        let value = Tensor::new(shape.to_vec(), src[offset..offset + n].to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Slice(x, offset), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum(x), needs)
    }

    /// Mean binary cross-entropy of `pred` against constant `target`.
    pub fn bce(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let sp = self.shape(pred);
        if sp.iter().product::<usize>() != target.len() {
            return Err(dim_err("bce", sp, &[target.len()]));
        }
        if let Some(bad) = target.iter().find(|t| !(**t >= T::zero() && **t <= T::one())) {
            return Err(Error::Domain(format!("bce target {bad} outside [0,1]")));
        }
        let loss = bce_value(self.value(pred).data(), target);
        let needs = self.needs(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Bce(pred, target.to_vec()), needs))
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(dim_err("backward", self.shape(output), &[1]));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(vec![T::one()]);
        let mut visited = 0;

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            visited += 1;
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, i_dim, o_dim) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let mut ga = vec![T::zero(); n * i_dim];
                    for r in 0..n {
                        let grow = &g[r * o_dim..(r + 1) * o_dim];
                        for i in 0..i_dim {
                            let brow = &bd[i * o_dim..(i + 1) * o_dim];
                            ga[r * i_dim + i] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![T::zero(); i_dim * o_dim];
                    for r in 0..n {
                        let grow = &g[r * o_dim..(r + 1) * o_dim];
                        for i in 0..i_dim {
                            let av = ad[r * i_dim + i];
                            for (dst, &gv) in gb[i * o_dim..(i + 1) * o_dim].iter_mut().zip(grow) {
                                *dst += av * gv;
                            }
                        }
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::AddRowBias(x, b) => {
                if self.needs(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
                if self.needs(*b) {
                    let o_dim = self.shape(*b)[0];
                    let mut gb = vec![T::zero(); o_dim];
                    for row in g.chunks(o_dim) {
                        for (d, &v) in gb.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::AddChannelBias(x, b) => {
                if self.needs(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
                if self.needs(*b) {
                    let s = self.shape(*x);
                    let gb = g.chunks(s[1] * s[2]).map(|c| c.iter().copied().sum()).collect();
                    accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    accumulate(grads, *a, g.iter().zip(bd).map(|(&x, &y)| x * y).collect());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.iter().zip(ad).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::Scale(x, c) => {
                accumulate(grads, *x, g.iter().map(|&v| v * *c).collect());
            }
            Op::Pointwise(x, act) => {
                let y = node.value.data();
                let gx = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * act.derivative_from_output(yv))
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Conv2d(x, k, geom) => {
                let (gx, gk) = conv::backward(
                    self.value(*x),
                    self.value(*k),
                    node.value.shape(),
                    g,
                    *geom,
                    self.needs(*x),
                    self.needs(*k),
                );
                if let Some(gx) = gx {
                    accumulate(grads, *x, gx);
                }
                if let Some(gk) = gk {
                    accumulate(grads, *k, gk);
                }
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let (c, h, w) = (s[0], s[1], s[2]);
                let os = node.value.shape();
                let (oh, ow) = (os[1], os[2]);
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            gx[ch * h * w + (i / 2) * w + j / 2] += g[ch * oh * ow + i * ow + j];
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => accumulate(grads, *x, g.to_vec()),
            Op::Slice(x, offset) => {
                let mut gx = vec![T::zero(); self.value(*x).len()];
                gx[*offset..*offset + g.len()].copy_from_slice(g);
                accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                accumulate(grads, *x, vec![g[0]; self.value(*x).len()]);
            }
            Op::Bce(pred, target) => {
                let p = self.value(*pred).data();
                let n = T::from_usize(p.len()).unwrap();
                let scale = g[0] / n;
                let gx = p
                    .iter()
                    .zip(target)
                    .map(|(&pv, &tv)| {
                        let pc = clamp_prob(pv);
                        scale * ((T::one() - tv) / (T::one() - pc) - tv / pc)
                    })
                    .collect();
                accumulate(grads, *pred, gx);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::from_f64_lossy(BCE_CLAMP);
    p.max(eps).min(T::one() - eps)
}

/// Mean BCE of probabilities against targets, with the log clamp applied.
pub fn bce_value<T: Scalar>(pred: &[T], target: &[T]) -> T {
    let n = T::from_usize(pred.len()).unwrap();
    let total: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let pc = clamp_prob(p);
            -(t * pc.ln() + (T::one() - t) * (T::one() - pc).ln())
        })
        .sum();
    total / n
}
