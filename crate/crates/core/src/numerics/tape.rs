//! Tensor-level reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and the ids of its
//! inputs. `backward` walks the nodes in reverse and accumulates gradients
//! into the parameter leaves. Nodes that cannot reach a parameter are never
//! differentiated, and `stop_gradient` cuts a path explicitly.

use std::collections::HashMap;

use super::grid::CorrGeometry;
use super::params::{Grads, ParamId, ParamSet};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub in_rows: usize,
    pub in_cols: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn out_rows(&self) -> usize {
        (self.in_rows + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_cols(&self) -> usize {
        (self.in_cols + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_len(&self) -> usize {
        self.filters * self.out_rows() * self.out_cols()
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddConst(Var),
    Relu(Var),
    Clip(Var, f64, f64),
    Exp(Var),
    LogFloor(Var, f64),
    Sum(Var),
    Dot(Var, Var),
    Norm2(Var),
    MatVec(Var, Var),
    Affine(Var, Var, Var),
    Conv2d(Var, Var, Var, ConvSpec),
    Correlate(Var, Var, CorrGeometry),
    Softmax(Var, f64),
    LogSoftmax(Var),
    ChannelSoftmax(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Pick(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    leaves: Vec<(Var, ParamId)>,
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId, set: &ParamSet) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(set.get(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        self.leaves.push((v, id));
        v
    }

    /// Same value, no gradient flows back through the result.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    fn same_shape(&self, a: Var, b: Var) {
        assert_eq!(self.value(a).shape, self.value(b).shape, "shape mismatch in elementwise op");
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        self.same_shape(a, b);
        let (x, y) = (self.value(a), self.value(b));
        Tensor { shape: x.shape.clone(), data: x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect() }
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        Tensor { shape: x.shape.clone(), data: x.data.iter().map(|&p| f(p)).collect() }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip(a, b, |p, q| p + q);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip(a, b, |p, q| p - q);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip(a, b, |p, q| p * q);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.unary(a, |p| p * c);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    /// `s * a` for a scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let t = self.unary(a, |p| p * k);
        let ng = self.ng(a) || self.ng(s);
        self.push(t, Op::ScaleBy(a, s), ng)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let t = self.unary(a, |p| p + c);
        let ng = self.ng(a);
        self.push(t, Op::AddConst(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |p| p.max(0.0));
        let ng = self.ng(a);
        self.push(t, Op::Relu(a), ng)
    }

    /// Clamp to `[lo, hi]`; the subgradient is 1 inside, 0 outside.
    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.unary(a, |p| p.clamp(lo, hi));
        let ng = self.ng(a);
        self.push(t, Op::Clip(a, lo, hi), ng)
    }

    pub fn clip_unit(&mut self, a: Var) -> Var {
        self.clip(a, -0.5, 0.5)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::exp);
        let ng = self.ng(a);
        self.push(t, Op::Exp(a), ng)
    }

    /// `ln(max(a, floor))`.
    pub fn log_floor(&mut self, a: Var, floor: f64) -> Var {
        let t = self.unary(a, |p| p.max(floor).ln());
        let ng = self.ng(a);
        self.push(t, Op::LogFloor(a, floor), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).len(), self.value(b).len(), "dot length mismatch");
        let s = self.data(a).iter().zip(self.data(b)).map(|(p, q)| p * q).sum();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::scalar(s), Op::Dot(a, b), ng)
    }

    /// Euclidean norm of all entries.
    pub fn norm2(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().map(|p| p * p).sum::<f64>().sqrt();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Norm2(a), ng)
    }

    fn matvec_value(&self, w: Var, x: Var) -> Vec<f64> {
        let wt = self.value(w);
        let xv = self.data(x);
        assert_eq!(wt.shape.len(), 2, "matvec weight must be 2-d");
        let (m, n) = (wt.shape[0], wt.shape[1]);
        assert_eq!(n, xv.len(), "matvec shape mismatch: {:?} x {}", wt.shape, xv.len());
        (0..m).map(|o| wt.data[o * n..(o + 1) * n].iter().zip(xv).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let y = self.matvec_value(w, x);
        let ng = self.ng(w) || self.ng(x);
        self.push(Tensor::vector(y), Op::MatVec(w, x), ng)
    }

    /// `w x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Var {
        let mut y = self.matvec_value(w, x);
        assert_eq!(y.len(), self.value(b).len(), "affine bias shape mismatch");
        for (v, bb) in y.iter_mut().zip(self.data(b)) {
            *v += bb;
        }
        let ng = self.ng(w) || self.ng(x) || self.ng(b);
        self.push(Tensor::vector(y), Op::Affine(w, x, b), ng)
    }

    /// Multi-channel convolution (cross-correlation) with zero padding.
    /// Input `C x H x W`, weights `F x C x k x k`, bias `F`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Var {
        let xin = self.data(x);
        let wt = self.data(w);
        let bias = self.data(b);
        assert_eq!(xin.len(), spec.in_channels * spec.in_rows * spec.in_cols, "conv input shape");
        assert_eq!(wt.len(), spec.filters * spec.in_channels * spec.kernel * spec.kernel, "conv weight shape");
        assert_eq!(bias.len(), spec.filters, "conv bias shape");
        let (ho, wo) = (spec.out_rows(), spec.out_cols());
        let mut out = vec![0.0; spec.filters * ho * wo];
        conv_forward(&spec, xin, wt, bias, &mut out);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(Tensor { shape: vec![spec.filters, ho, wo], data: out }, Op::Conv2d(x, w, b, spec), ng)
    }

    /// Single-channel correlation with explicit geometry.
    pub fn correlate(&mut self, input: Var, kernel: Var, geom: CorrGeometry) -> Var {
        assert_eq!(self.value(input).len(), geom.in_rows * geom.in_cols, "correlate input shape");
        assert_eq!(self.value(kernel).len(), geom.k_rows * geom.k_cols, "correlate kernel shape");
        let mut out = vec![0.0; geom.out_rows * geom.out_cols];
        geom.forward(self.data(input), self.data(kernel), &mut out);
        let ng = self.ng(input) || self.ng(kernel);
        self.push(Tensor { shape: vec![geom.out_rows, geom.out_cols], data: out }, Op::Correlate(input, kernel, geom), ng)
    }

    /// Softmax over all entries at the given temperature.
    pub fn softmax(&mut self, a: Var, temperature: f64) -> Var {
        let y = super::grid::softmax(self.data(a), temperature);
        let shape = self.value(a).shape.clone();
        let ng = self.ng(a);
        self.push(Tensor { shape, data: y }, Op::Softmax(a, temperature), ng)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.data(a);
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let y: Vec<f64> = x.iter().map(|v| v - lse).collect();
        let shape = self.value(a).shape.clone();
        let ng = self.ng(a);
        self.push(Tensor { shape, data: y }, Op::LogSoftmax(a), ng)
    }

    /// Softmax along the leading axis of a `C x ...` tensor, independently
    /// for each trailing position.
    pub fn channel_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.shape[0];
        let p = t.len() / c;
        let mut y = vec![0.0; t.len()];
        for j in 0..p {
            let max = (0..c).map(|k| t.data[k * p + j]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for k in 0..c {
                let e = (t.data[k * p + j] - max).exp();
                y[k * p + j] = e;
                s += e;
            }
            for k in 0..c {
                y[k * p + j] /= s;
            }
        }
        let shape = t.shape.clone();
        let ng = self.ng(a);
        self.push(Tensor { shape, data: y }, Op::ChannelSoftmax(a), ng)
    }

    /// Flat concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        let mut ng = false;
        for &p in parts {
            data.extend_from_slice(self.data(p));
            ng |= self.ng(p);
        }
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a);
        assert_eq!(t.len(), shape.iter().product::<usize>(), "reshape size mismatch");
        let t = Tensor { shape: shape.to_vec(), data: t.data.clone() };
        let ng = self.ng(a);
        self.push(t, Op::Reshape(a), ng)
    }

    pub fn pick(&mut self, a: Var, index: usize) -> Var {
        let v = self.data(a)[index];
        let ng = self.ng(a);
        self.push(Tensor::scalar(v), Op::Pick(a, index), ng)
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf
    /// reachable from it.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        let mut out = Grads::new();
        for &(v, id) in &self.leaves {
            if v.0 <= loss.0 {
                if let Some(g) = &grads[v.0] {
                    out.accumulate(id, g);
                }
            }
        }
        out
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.ng(v) {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &node.value.data;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = self.slot(grads, v) {
                        add_into(s, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    add_into(s, g);
                }
                if let Some(s) = self.slot(grads, *b) {
                    for (d, gg) in s.iter_mut().zip(g) {
                        *d -= gg;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gg), q) in s.iter_mut().zip(g).zip(xb) {
                        *d += gg * q;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for ((d, gg), p) in s.iter_mut().zip(g).zip(xa) {
                        *d += gg * p;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = self.slot(grads, *a) {
                    for (d, gg) in s.iter_mut().zip(g) {
                        *d += gg * c;
                    }
                }
            }
            Op::ScaleBy(a, k) => {
                let kv = self.scalar(*k);
                let xa = self.data(*a);
                if let Some(s) = self.slot(grads, *a) {
                    for (d, gg) in s.iter_mut().zip(g) {
                        *d += gg * kv;
                    }
                }
                if let Some(s) = self.slot(grads, *k) {
                    s[0] += g.iter().zip(xa).map(|(gg, p)| gg * p).sum::<f64>();
                }
            }
            Op::AddConst(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    add_into(s, g);
                }
            }
            Op::Relu(a) => {
                let x = self.data(*a);
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gg), p) in s.iter_mut().zip(g).zip(x) {
                        if *p > 0.0 {
                            *d += gg;
                        }
                    }
                }
            }
            Op::Clip(a, lo, hi) => {
                let x = self.data(*a);
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gg), p) in s.iter_mut().zip(g).zip(x) {
                        if *p >= *lo && *p <= *hi {
                            *d += gg;
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gg), yy) in s.iter_mut().zip(g).zip(y) {
                        *d += gg * yy;
                    }
                }
            }
            Op::LogFloor(a, floor) => {
                let x = self.data(*a);
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gg), p) in s.iter_mut().zip(g).zip(x) {
                        if *p > *floor {
                            *d += gg / p;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for d in s.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Dot(a, b) => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                if let Some(s) = self.slot(grads, *a) {
                    for (d, q) in s.iter_mut().zip(xb) {
                        *d += g[0] * q;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for (d, p) in s.iter_mut().zip(xa) {
                        *d += g[0] * p;
                    }
                }
            }
            Op::Norm2(a) => {
                let n = y[0];
                let x = self.data(*a);
                if n > 0.0 {
                    if let Some(s) = self.slot(grads, *a) {
                        for (d, p) in s.iter_mut().zip(x) {
                            *d += g[0] * p / n;
                        }
                    }
                }
            }
            Op::MatVec(w, x) | Op::Affine(w, x, _) => {
                let wt = self.value(*w);
                let (m, n) = (wt.shape[0], wt.shape[1]);
                let xv = self.data(*x);
                if let Some(s) = self.slot(grads, *w) {
                    for o in 0..m {
                        let go = g[o];
                        if go != 0.0 {
                            let row = &mut s[o * n..(o + 1) * n];
                            for (d, xi) in row.iter_mut().zip(xv) {
                                *d += go * xi;
                            }
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *x) {
                    for o in 0..m {
                        let go = g[o];
                        if go != 0.0 {
                            for (d, wi) in s.iter_mut().zip(&wt.data[o * n..(o + 1) * n]) {
                                *d += go * wi;
                            }
                        }
                    }
                }
                if let Op::Affine(_, _, b) = &node.op {
                    if let Some(s) = self.slot(grads, *b) {
                        add_into(s, g);
                    }
                }
            }
            Op::Conv2d(x, w, b, spec) => {
                let xin = self.data(*x);
                let wt = self.data(*w);
                if let Some(s) = self.slot(grads, *w) {
                    conv_backward_weight(spec, xin, g, s);
                }
                if let Some(s) = self.slot(grads, *x) {
                    conv_backward_input(spec, wt, g, s);
                }
                if let Some(s) = self.slot(grads, *b) {
                    let per = spec.out_rows() * spec.out_cols();
                    for (f, d) in s.iter_mut().enumerate() {
                        *d += g[f * per..(f + 1) * per].iter().sum::<f64>();
                    }
                }
            }
            Op::Correlate(input, kernel, geom) => {
                let (xi, ki) = (self.data(*input), self.data(*kernel));
                if let Some(s) = self.slot(grads, *kernel) {
                    geom.backward_kernel(xi, g, s);
                }
                if let Some(s) = self.slot(grads, *input) {
                    geom.backward_input(ki, g, s);
                }
            }
            Op::Softmax(a, t) => {
                let dotgy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gg), yy) in s.iter_mut().zip(g).zip(y) {
                        *d += yy * (gg - dotgy) / t;
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let gs: f64 = g.iter().sum();
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gg), yy) in s.iter_mut().zip(g).zip(y) {
                        *d += gg - yy.exp() * gs;
                    }
                }
            }
            Op::ChannelSoftmax(a) => {
                let c = node.value.shape[0];
                let p = y.len() / c;
                if let Some(s) = self.slot(grads, *a) {
                    for j in 0..p {
                        let dotgy: f64 = (0..c).map(|k| g[k * p + j] * y[k * p + j]).sum();
                        for k in 0..c {
                            s[k * p + j] += y[k * p + j] * (g[k * p + j] - dotgy);
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &v in parts {
                    let n = self.value(v).len();
                    if let Some(s) = self.slot(grads, v) {
                        add_into(s, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Reshape(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    add_into(s, g);
                }
            }
            Op::Pick(a, i) => {
                if let Some(s) = self.slot(grads, *a) {
                    s[*i] += g[0];
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn conv_forward(spec: &ConvSpec, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let (ho, wo) = (spec.out_rows(), spec.out_cols());
    let (h, wd, k, c_in) = (spec.in_rows as isize, spec.in_cols as isize, spec.kernel, spec.in_channels);
    let plane = spec.in_rows * spec.in_cols;
    for f in 0..spec.filters {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b[f];
                let y0 = (oy * spec.stride) as isize - spec.pad as isize;
                let x0 = (ox * spec.stride) as isize - spec.pad as isize;
                for c in 0..c_in {
                    let wbase = ((f * c_in + c) * k) * k;
                    let xbase = c * plane;
                    for ky in 0..k {
                        let yy = y0 + ky as isize;
                        if yy < 0 || yy >= h {
                            continue;
                        }
                        let xrow = xbase + yy as usize * spec.in_cols;
                        let wrow = wbase + ky * k;
                        for kx in 0..k {
                            let xx = x0 + kx as isize;
                            if xx < 0 || xx >= wd {
                                continue;
                            }
                            acc += x[xrow + xx as usize] * w[wrow + kx];
                        }
                    }
                }
                out[(f * ho + oy) * wo + ox] = acc;
            }
        }
    }
}

fn conv_backward_weight(spec: &ConvSpec, x: &[f64], g: &[f64], dw: &mut [f64]) {
    let (ho, wo) = (spec.out_rows(), spec.out_cols());
    let (h, wd, k, c_in) = (spec.in_rows as isize, spec.in_cols as isize, spec.kernel, spec.in_channels);
    let plane = spec.in_rows * spec.in_cols;
    for f in 0..spec.filters {
        for oy in 0..ho {
            for ox in 0..wo {
                let go = g[(f * ho + oy) * wo + ox];
                if go == 0.0 {
                    continue;
                }
                let y0 = (oy * spec.stride) as isize - spec.pad as isize;
                let x0 = (ox * spec.stride) as isize - spec.pad as isize;
                for c in 0..c_in {
                    let wbase = ((f * c_in + c) * k) * k;
                    let xbase = c * plane;
                    for ky in 0..k {
                        let yy = y0 + ky as isize;
                        if yy < 0 || yy >= h {
                            continue;
                        }
                        let xrow = xbase + yy as usize * spec.in_cols;
                        let wrow = wbase + ky * k;
                        for kx in 0..k {
                            let xx = x0 + kx as isize;
                            if xx < 0 || xx >= wd {
                                continue;
                            }
                            dw[wrow + kx] += go * x[xrow + xx as usize];
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward_input(spec: &ConvSpec, w: &[f64], g: &[f64], dx: &mut [f64]) {
    let (ho, wo) = (spec.out_rows(), spec.out_cols());
    let (h, wd, k, c_in) = (spec.in_rows as isize, spec.in_cols as isize, spec.kernel, spec.in_channels);
    let plane = spec.in_rows * spec.in_cols;
    for f in 0..spec.filters {
        for oy in 0..ho {
            for ox in 0..wo {
                let go = g[(f * ho + oy) * wo + ox];
                if go == 0.0 {
                    continue;
                }
                let y0 = (oy * spec.stride) as isize - spec.pad as isize;
                let x0 = (ox * spec.stride) as isize - spec.pad as isize;
                for c in 0..c_in {
                    let wbase = ((f * c_in + c) * k) * k;
                    let xbase = c * plane;
                    for ky in 0..k {
                        let yy = y0 + ky as isize;
                        if yy < 0 || yy >= h {
                            continue;
                        }
                        let xrow = xbase + yy as usize * spec.in_cols;
                        let wrow = wbase + ky * k;
                        for kx in 0..k {
                            let xx = x0 + kx as isize;
                            if xx < 0 || xx >= wd {
                                continue;
                            }
                            dx[xrow + xx as usize] += go * w[wrow + kx];
                        }
                    }
                }
            }
        }
    }
}
