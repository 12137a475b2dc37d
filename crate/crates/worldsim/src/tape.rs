//! A small reverse-mode autodiff tape over dense f64 tensors.
//!
//! Feature maps are `[C, H, W]`, token sequences are `[L, D]`, scalars are `[1]`.
//! Every op records its inputs; `backward` walks the tape in reverse.

use std::collections::HashMap;

use crate::params::ParamStore;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?} vs {} values", data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `x[C, ...] + v[C]`, broadcast over trailing positions.
    AddChannel(NodeId, NodeId),
    Silu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    /// `x[L, in] * w[in, out] + b[out]`.
    Linear(NodeId, NodeId, Option<NodeId>),
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize, k: usize, col: Vec<f64> },
    Upsample2(NodeId),
    /// Normalization over groups of rows of `x[R, N]`: GroupNorm uses groups of
    /// channels, LayerNorm uses one row per group with the affine over columns.
    Norm { x: NodeId, gamma: NodeId, beta: NodeId, kind: NormKind, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, probs: Vec<f64> },
    Transpose(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize),
    Gather(NodeId, Vec<usize>),
    Reshape(NodeId),
    Mse(NodeId, NodeId),
    Mean(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NormKind {
    Group(usize),
    Layer,
}

const NORM_EPS: f64 = 1e-5;

struct Node {
    value: Tensor,
    op: Op,
    grad: bool,
}

/// One forward pass. Parameters are pulled from a [`ParamStore`] by name.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, NodeId>,
    no_grad: bool,
}

/// Gradients of the loss with respect to every parameter used in the graph.
pub type ParamGrads = HashMap<String, Vec<f64>>;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose parameters are constants; nothing is kept for a reverse pass.
    pub fn inference() -> Self {
        Graph { no_grad: true, ..Self::default() }
    }

    fn push(&mut self, value: Tensor, op: Op, grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, grad });
        self.nodes.len() - 1
    }

    fn g(&self, id: NodeId) -> bool {
        self.nodes[id].grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].value.shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// A copy of `id`'s value that blocks gradients.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.nodes[id].value.clone();
        self.constant(v)
    }

    pub fn param(&mut self, store: &ParamStore, name: &str) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let t = store.tensor(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        let id = self.push(t, Op::Leaf, !self.no_grad);
        self.params.insert(name.to_string(), id);
        id
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = &self.nodes[a].value;
        let t = Tensor { shape: v.shape.clone(), data: v.data.iter().map(|&x| f(x)).collect() };
        let gr = self.g(a);
        self.push(t, op, gr)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.shape, vb.shape, "elementwise shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor { shape: va.shape.clone(), data };
        let gr = self.g(a) || self.g(b);
        self.push(t, op, gr)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x / (1.0 + (-x).exp()), Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn add_channel(&mut self, x: NodeId, v: NodeId) -> NodeId {
        let (vx, vv) = (&self.nodes[x].value, &self.nodes[v].value);
        let c = vx.shape[0];
        assert_eq!(vv.len(), c, "channel bias length");
        let per = vx.len() / c;
        let mut data = vx.data.clone();
        for (ci, chunk) in data.chunks_mut(per).enumerate() {
            let b = vv.data[ci];
            chunk.iter_mut().for_each(|d| *d += b);
        }
        let t = Tensor { shape: vx.shape.clone(), data };
        let gr = self.g(x) || self.g(v);
        self.push(t, Op::AddChannel(x, v), gr)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let (vx, vw) = (&self.nodes[x].value, &self.nodes[w].value);
        let (l, din) = (vx.shape[0], vx.shape[1]);
        assert_eq!(vw.shape[0], din, "linear input dim");
        let dout = vw.shape[1];
        let mut out = vec![0.0; l * dout];
        matmul_acc(&vx.data, &vw.data, &mut out, l, din, dout);
        if let Some(b) = b {
            let vb = &self.nodes[b].value.data;
            for row in out.chunks_mut(dout) {
                row.iter_mut().zip(vb).for_each(|(o, bb)| *o += bb);
            }
        }
        let gr = self.g(x) || self.g(w) || b.is_some_and(|b| self.g(b));
        self.push(Tensor::new(vec![l, dout], out), Op::Linear(x, w, b), gr)
    }

    /// Square-kernel convolution of `x[C, H, W]` with `w[O, C, k, k]` and bias `b[O]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        let (vx, vw) = (&self.nodes[x].value, &self.nodes[w].value);
        let (c, h, wd) = (vx.shape[0], vx.shape[1], vx.shape[2]);
        let (o, k) = (vw.shape[0], vw.shape[2]);
        assert_eq!(vw.shape[1], c, "conv input channels");
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let col = im2col(&vx.data, c, h, wd, k, stride, pad, oh, ow);
        let n = oh * ow;
        let mut out = vec![0.0; o * n];
        matmul_acc(&vw.data, &col, &mut out, o, c * k * k, n);
        let vb = &self.nodes[b].value.data;
        for (oc, row) in out.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v += vb[oc]);
        }
        let gr = self.g(x) || self.g(w) || self.g(b);
        let col = if self.g(w) { col } else { Vec::new() };
        self.push(Tensor::new(vec![o, oh, ow], out), Op::Conv2d { x, w, b, stride, pad, k, col }, gr)
    }

    /// Nearest-neighbour 2x upsampling of `x[C, H, W]`.
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let (c, h, w) = (v.shape[0], v.shape[1], v.shape[2]);
        let mut out = vec![0.0; c * 4 * h * w];
        for ci in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ci * 2 * h + y) * 2 * w + xx] = v.data[(ci * h + y / 2) * w + xx / 2];
                }
            }
        }
        let gr = self.g(x);
        self.push(Tensor::new(vec![c, 2 * h, 2 * w], out), Op::Upsample2(x), gr)
    }

    fn norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, kind: NormKind) -> NodeId {
        let v = &self.nodes[x].value;
        let rows = v.shape[0];
        let cols = v.len() / rows;
        let (groups, per_group) = match kind {
            NormKind::Group(g) => {
                assert_eq!(rows % g, 0, "channels not divisible by groups");
                (g, rows / g * cols)
            }
            NormKind::Layer => (rows, cols),
        };
        let mut xhat = vec![0.0; v.len()];
        let mut inv_std = vec![0.0; groups];
        for gi in 0..groups {
            let s = &v.data[gi * per_group..(gi + 1) * per_group];
            let mean = s.iter().sum::<f64>() / per_group as f64;
            let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / per_group as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[gi] = is;
            for (j, &xv) in s.iter().enumerate() {
                xhat[gi * per_group + j] = (xv - mean) * is;
            }
        }
        let (gm, bt) = (&self.nodes[gamma].value.data, &self.nodes[beta].value.data);
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, &xh)| {
                let a = affine_index(kind, i, cols);
                xh * gm[a] + bt[a]
            })
            .collect();
        let gr = self.g(x) || self.g(gamma) || self.g(beta);
        let shape = v.shape.clone();
        self.push(Tensor::new(shape, out), Op::Norm { x, gamma, beta, kind, xhat, inv_std }, gr)
    }

    /// GroupNorm over `x[C, ...]` with per-channel affine.
    pub fn group_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, groups: usize) -> NodeId {
        self.norm(x, gamma, beta, NormKind::Group(groups))
    }

    /// LayerNorm over the last dim of `x[L, D]`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        self.norm(x, gamma, beta, NormKind::Layer)
    }

    /// Multi-head scaled dot-product attention; `q[Lq, D]`, `k, v[Lk, D]`.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> NodeId {
        let (vq, vk, vv) = (&self.nodes[q].value, &self.nodes[k].value, &self.nodes[v].value);
        let (lq, d) = (vq.shape[0], vq.shape[1]);
        let lk = vk.shape[0];
        assert_eq!(vk.shape[1], d, "attention key dim");
        assert_eq!(vv.shape, vk.shape, "attention value shape");
        assert_eq!(d % heads, 0, "heads must divide model dim");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * lq * lk];
        let mut out = vec![0.0; lq * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..lq {
                let qi = &vq.data[i * d + off..i * d + off + dh];
                let p = &mut probs[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                let mut m = f64::NEG_INFINITY;
                for (j, pj) in p.iter_mut().enumerate() {
                    *pj = dot(qi, &vk.data[j * d + off..j * d + off + dh]) * scale;
                    m = m.max(*pj);
                }
                let mut s = 0.0;
                for pj in p.iter_mut() {
                    *pj = (*pj - m).exp();
                    s += *pj;
                }
                let o = &mut out[i * d + off..i * d + off + dh];
                for (j, pj) in p.iter_mut().enumerate() {
                    *pj /= s;
                    let vj = &vv.data[j * d + off..j * d + off + dh];
                    o.iter_mut().zip(vj).for_each(|(a, b)| *a += *pj * b);
                }
            }
        }
        let gr = self.g(q) || self.g(k) || self.g(v);
        self.push(Tensor::new(vec![lq, d], out), Op::Attention { q, k, v, heads, probs }, gr)
    }

    /// 2-D transpose of `x[A, B]`; feature maps are treated as `[C, H*W]`.
    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let a = v.shape[0];
        let b = v.len() / a;
        let mut out = vec![0.0; v.len()];
        for i in 0..a {
            for j in 0..b {
                out[j * a + i] = v.data[i * b + j];
            }
        }
        let gr = self.g(x);
        self.push(Tensor::new(vec![b, a], out), Op::Transpose(x), gr)
    }

    /// Concatenation along the first axis; trailing dims must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let tail = self.nodes[parts[0]].value.shape[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = &self.nodes[p].value;
            assert_eq!(v.shape[1..], tail[..], "concat trailing shape");
            rows += v.shape[0];
            data.extend_from_slice(&v.data);
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let gr = parts.iter().any(|&p| self.g(p));
        self.push(Tensor::new(shape, data), Op::Concat(parts.to_vec()), gr)
    }

    /// Rows `start..start+len` along the first axis.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = &self.nodes[x].value;
        let per = v.len() / v.shape[0];
        let data = v.data[start * per..(start + len) * per].to_vec();
        let mut shape = v.shape.clone();
        shape[0] = len;
        let gr = self.g(x);
        self.push(Tensor::new(shape, data), Op::Slice(x, start), gr)
    }

    /// Row lookup into `table[V, D]`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let v = &self.nodes[table].value;
        let d = v.shape[1];
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&v.data[i * d..(i + 1) * d]);
        }
        let gr = self.g(table);
        self.push(Tensor::new(vec![ids.len(), d], data), Op::Gather(table, ids.to_vec()), gr)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> NodeId {
        let v = self.nodes[x].value.data.clone();
        let gr = self.g(x);
        self.push(Tensor::new(shape, v), Op::Reshape(x), gr)
    }

    /// Mean squared difference, as a scalar.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.shape, vb.shape, "mse shape mismatch");
        let s: f64 = va.data.iter().zip(&vb.data).map(|(x, y)| (x - y) * (x - y)).sum();
        let t = Tensor::scalar(s / va.len() as f64);
        let gr = self.g(a) || self.g(b);
        self.push(t, Op::Mse(a, b), gr)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a].value;
        let t = Tensor::scalar(v.data.iter().sum::<f64>() / v.len() as f64);
        let gr = self.g(a);
        self.push(t, Op::Mean(a), gr)
    }

    /// Reverse pass from the scalar `loss`; returns gradients of every parameter.
    pub fn backward(&self, loss: NodeId) -> ParamGrads {
        assert_eq!(self.nodes[loss].value.len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            let Some(gout) = grads[id].take() else { continue };
            if !self.nodes[id].grad {
                continue;
            }
            self.backprop(id, &gout, &mut grads);
            grads[id] = Some(gout);
        }
        self.params
            .iter()
            .map(|(name, &id)| {
                let n = self.nodes[id].value.len();
                (name.clone(), grads[id].take().unwrap_or_else(|| vec![0.0; n]))
            })
            .collect()
    }

    fn backprop(&self, id: NodeId, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = |i: NodeId| &self.nodes[i].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |g| add_into(g, gout));
                self.acc(grads, *b, |g| add_into(g, gout));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |g| add_into(g, gout));
                self.acc(grads, *b, |g| g.iter_mut().zip(gout).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.acc(grads, *a, |g| {
                    g.iter_mut().zip(gout).zip(&vb.data).for_each(|((x, y), z)| *x += y * z)
                });
                self.acc(grads, *b, |g| {
                    g.iter_mut().zip(gout).zip(&va.data).for_each(|((x, y), z)| *x += y * z)
                });
            }
            Op::Scale(a, s) => self.acc(grads, *a, |g| g.iter_mut().zip(gout).for_each(|(x, y)| *x += s * y)),
            Op::AddChannel(x, v) => {
                self.acc(grads, *x, |g| add_into(g, gout));
                let c = val(*v).len();
                let per = gout.len() / c;
                self.acc(grads, *v, |g| {
                    for (ci, chunk) in gout.chunks(per).enumerate() {
                        g[ci] += chunk.iter().sum::<f64>();
                    }
                });
            }
            Op::Silu(a) => {
                let va = val(*a);
                self.acc(grads, *a, |g| {
                    for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(&va.data) {
                        let s = 1.0 / (1.0 + (-x).exp());
                        *gi += go * s * (1.0 + x * (1.0 - s));
                    }
                });
            }
            Op::Sigmoid(a) => {
                let out = &node.value.data;
                self.acc(grads, *a, |g| {
                    g.iter_mut().zip(gout).zip(out).for_each(|((gi, go), s)| *gi += go * s * (1.0 - s))
                });
            }
            Op::Exp(a) => {
                let out = &node.value.data;
                self.acc(grads, *a, |g| g.iter_mut().zip(gout).zip(out).for_each(|((gi, go), e)| *gi += go * e));
            }
            Op::Linear(x, w, b) => {
                let (vx, vw) = (val(*x), val(*w));
                let (l, din) = (vx.shape[0], vx.shape[1]);
                let dout = vw.shape[1];
                self.acc(grads, *x, |g| matmul_bt_acc(gout, &vw.data, g, l, dout, din));
                self.acc(grads, *w, |g| matmul_at_acc(&vx.data, gout, g, l, din, dout));
                if let Some(b) = b {
                    self.acc(grads, *b, |g| {
                        for row in gout.chunks(dout) {
                            add_into(g, row);
                        }
                    });
                }
            }
            Op::Conv2d { x, w, b, stride, pad, k, col } => {
                let (vx, vw) = (val(*x), val(*w));
                let (c, h, wd) = (vx.shape[0], vx.shape[1], vx.shape[2]);
                let o = vw.shape[0];
                let (oh, ow) = (node.value.shape[1], node.value.shape[2]);
                let n = oh * ow;
                let ck = c * k * k;
                self.acc(grads, *b, |g| {
                    for (oc, row) in gout.chunks(n).enumerate() {
                        g[oc] += row.iter().sum::<f64>();
                    }
                });
                self.acc(grads, *w, |g| matmul_bt_acc(gout, col, g, o, n, ck));
                if self.g(*x) {
                    let mut dcol = vec![0.0; ck * n];
                    matmul_at_acc(&vw.data, gout, &mut dcol, o, ck, n);
                    self.acc(grads, *x, |g| col2im_acc(&dcol, g, c, h, wd, *k, *stride, *pad, oh, ow));
                }
            }
            Op::Upsample2(x) => {
                let v = val(*x);
                let (c, h, w) = (v.shape[0], v.shape[1], v.shape[2]);
                self.acc(grads, *x, |g| {
                    for ci in 0..c {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                g[(ci * h + y / 2) * w + xx / 2] += gout[(ci * 2 * h + y) * 2 * w + xx];
                            }
                        }
                    }
                });
            }
            Op::Norm { x, gamma, beta, kind, xhat, inv_std } => {
                let v = val(*x);
                let rows = v.shape[0];
                let cols = v.len() / rows;
                let gm = &val(*gamma).data;
                self.acc(grads, *gamma, |g| {
                    for (i, (&go, &xh)) in gout.iter().zip(xhat).enumerate() {
                        g[affine_index(*kind, i, cols)] += go * xh;
                    }
                });
                self.acc(grads, *beta, |g| {
                    for (i, &go) in gout.iter().enumerate() {
                        g[affine_index(*kind, i, cols)] += go;
                    }
                });
                let per_group = v.len() / inv_std.len();
                self.acc(grads, *x, |g| {
                    for (gi, &is) in inv_std.iter().enumerate() {
                        let r = gi * per_group..(gi + 1) * per_group;
                        let dxh: Vec<f64> =
                            r.clone().map(|i| gout[i] * gm[affine_index(*kind, i, cols)]).collect();
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(&xhat[r.clone()]).map(|(a, b)| a * b).sum();
                        let m = per_group as f64;
                        for (j, i) in r.enumerate() {
                            g[i] += is / m * (m * dxh[j] - s1 - xhat[i] * s2);
                        }
                    }
                });
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (vq, vk, vv) = (val(*q), val(*k), val(*v));
                let (lq, d) = (vq.shape[0], vq.shape[1]);
                let lk = vk.shape[0];
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = vec![0.0; lq * d];
                let mut dk = vec![0.0; lk * d];
                let mut dv = vec![0.0; lk * d];
                let mut dp = vec![0.0; lk];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..lq {
                        let p = &probs[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                        let go = &gout[i * d + off..i * d + off + dh];
                        let mut rowdot = 0.0;
                        for j in 0..lk {
                            dp[j] = dot(go, &vv.data[j * d + off..j * d + off + dh]);
                            rowdot += dp[j] * p[j];
                            let dvj = &mut dv[j * d + off..j * d + off + dh];
                            dvj.iter_mut().zip(go).for_each(|(a, b)| *a += p[j] * b);
                        }
                        for j in 0..lk {
                            let ds = p[j] * (dp[j] - rowdot) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            for t in 0..dh {
                                dq[i * d + off + t] += ds * vk.data[j * d + off + t];
                                dk[j * d + off + t] += ds * vq.data[i * d + off + t];
                            }
                        }
                    }
                }
                self.acc(grads, *q, |g| add_into(g, &dq));
                self.acc(grads, *k, |g| add_into(g, &dk));
                self.acc(grads, *v, |g| add_into(g, &dv));
            }
            Op::Transpose(x) => {
                let (b, a) = (node.value.shape[0], node.value.shape[1]);
                self.acc(grads, *x, |g| {
                    for i in 0..a {
                        for j in 0..b {
                            g[i * b + j] += gout[j * a + i];
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    self.acc(grads, p, |g| add_into(g, &gout[off..off + n]));
                    off += n;
                }
            }
            Op::Slice(x, start) => {
                let per = node.value.len() / node.value.shape[0];
                let s = start * per;
                self.acc(grads, *x, |g| add_into(&mut g[s..s + gout.len()], gout));
            }
            Op::Gather(table, ids) => {
                let d = val(*table).shape[1];
                self.acc(grads, *table, |g| {
                    for (r, &i) in ids.iter().enumerate() {
                        add_into(&mut g[i * d..(i + 1) * d], &gout[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Reshape(x) => self.acc(grads, *x, |g| add_into(g, gout)),
            Op::Mse(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let f = 2.0 * gout[0] / va.len() as f64;
                self.acc(grads, *a, |g| {
                    for ((gi, x), y) in g.iter_mut().zip(&va.data).zip(&vb.data) {
                        *gi += f * (x - y);
                    }
                });
                self.acc(grads, *b, |g| {
                    for ((gi, x), y) in g.iter_mut().zip(&va.data).zip(&vb.data) {
                        *gi -= f * (x - y);
                    }
                });
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                let f = gout[0] / n as f64;
                self.acc(grads, *a, |g| g.iter_mut().for_each(|x| *x += f));
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, f: impl FnOnce(&mut Vec<f64>)) {
        if !self.nodes[id].grad {
            return;
        }
        let g = grads[id].get_or_insert_with(|| vec![0.0; self.nodes[id].value.len()]);
        f(g);
    }
}

#[inline]
fn affine_index(kind: NormKind, i: usize, cols: usize) -> usize {
    match kind {
        NormKind::Group(_) => i / cols,
        NormKind::Layer => i % cols,
    }
}

#[inline]
fn add_into(g: &mut [f64], src: &[f64]) {
    g.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `c[m, n] += a[m, k] * b[k, n]`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(cv, bv)| *cv += av * bv);
        }
    }
}

/// `c[m, k] += g[m, n] * b[k, n]^T`.
fn matmul_bt_acc(g: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] += dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `c[k, n] += a[m, k]^T * g[m, n]`.
fn matmul_at_acc(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            crow.iter_mut().zip(grow).for_each(|(cv, gv)| *cv += av * gv);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, pad: usize, oh: usize, ow: usize) -> Vec<f64> {
    let n = oh * ow;
    let mut col = vec![0.0; c * k * k * n];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * n..((ci * k + ky) * k + kx + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * s + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            row[oy * ow + ox] = xrow[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im_acc(col: &[f64], g: &mut [f64], c: usize, h: usize, w: usize, k: usize, s: usize, pad: usize, oh: usize, ow: usize) {
    let n = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * n..((ci * k + ky) * k + kx + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * s + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            g[(ci * h + iy as usize) * w + ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}
