//! Define-by-run computation graph with reverse-mode gradients.
//!
//! Values are computed eagerly as nodes are appended, so node indices are a
//! topological order and `backward` is a single reverse sweep.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::element::Element;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Zero padding that keeps the spatial size (odd kernels only).
    Same,
}

/// Classification targets for softmax cross-entropy.
#[derive(Debug, Clone)]
pub enum Targets<T: Element = f32> {
    Indices(Vec<usize>),
    /// One row per sample; rows are probability vectors (usually one-hot).
    Dense(Tensor<T>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T: Element> {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        pad: usize,
        cols: Vec<T>,
    },
    MaxPool2 {
        x: NodeId,
        argmax: Vec<u32>,
    },
    Relu(NodeId),
    Flatten(NodeId),
    Dropout {
        x: NodeId,
        mask: Option<Vec<T>>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        probs: Vec<T>,
        targets: Targets<T>,
    },
    GradReverse {
        x: NodeId,
        alpha: T,
    },
    Scale(NodeId, T),
    Add(NodeId, NodeId),
}

impl<T: Element> Op<T> {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "max_pool2",
            Op::Relu(_) => "relu",
            Op::Flatten(_) => "flatten",
            Op::Dropout { .. } => "dropout",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::GradReverse { .. } => "grad_reverse",
            Op::Scale(..) => "scale",
            Op::Add(..) => "add",
        }
    }
}

struct Node<T: Element> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T: Element = f32> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to `id`; zeros when the node did
    /// not take part in the loss.
    pub fn get(&self, id: NodeId) -> Tensor<T> {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    pub fn take(&mut self, id: NodeId) -> Tensor<T> {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}

pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    mode: Mode,
    rng: Option<ChaCha8Rng>,
}

impl<T: Element> Graph<T> {
    /// Training-mode graph; dropout masks are drawn from `rng`.
    pub fn train(rng: ChaCha8Rng) -> Self {
        Graph {
            nodes: Vec::new(),
            mode: Mode::Train,
            rng: Some(rng),
        }
    }

    /// Evaluation-mode graph; dropout is the identity.
    pub fn eval() -> Self {
        Graph {
            nodes: Vec::new(),
            mode: Mode::Eval,
            rng: None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.tag()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input (no gradient is tracked).
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::ZERO; m * n];
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            T::ZERO,
            &mut out,
        );
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), value, &[a, b]))
    }

    /// `x + b` with `x: [n, f]` and `b: [f]`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(Error::ShapeMismatch(format!("add_bias {sx:?} + {sb:?}")));
        }
        let f = sx[1];
        let mut value = self.value(x).clone();
        let bias = self.value(b).data();
        for row in value.data_mut().chunks_mut(f) {
            for (v, &bb) in row.iter_mut().zip(bias) {
                *v += bb;
            }
        }
        Ok(self.push(Op::AddBias(x, b), value, &[x, b]))
    }

    /// Stride-1 convolution. `x: [n, c, h, w]`, `w: [o, c, k, k]`, `b: [o]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, padding: Padding) -> Result<NodeId> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] || sb != [sw[0]] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d x {sx:?}, w {sw:?}, b {sb:?}"
            )));
        }
        let geom = ConvGeom::new(sx, sw, padding)?;
        let (o, ckk, p) = (geom.out_c, geom.ckk(), geom.p());
        let in_len = geom.in_c * geom.h * geom.w;
        let mut cols = vec![T::ZERO; geom.n * ckk * p];
        let mut out = vec![T::ZERO; geom.n * o * p];
        let (xv, wv, bias) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        for n in 0..geom.n {
            let cn = &mut cols[n * ckk * p..(n + 1) * ckk * p];
            im2col_one(&xv[n * in_len..(n + 1) * in_len], &geom, cn);
            let on = &mut out[n * o * p..(n + 1) * o * p];
            for (oc, row) in on.chunks_mut(p).enumerate() {
                row.fill(bias[oc]);
            }
            T::gemm(o, ckk, p, T::ONE, wv, (ckk as isize, 1), cn, (p as isize, 1), T::ONE, on);
        }
        let value = Tensor::new(&[geom.n, o, geom.out_h, geom.out_w], out)?;
        Ok(self.push(
            Op::Conv2d {
                x,
                w,
                b,
                pad: geom.pad,
                cols,
            },
            value,
            &[x, w, b],
        ))
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 || sx[2] < 2 || sx[3] < 2 {
            return Err(Error::ShapeMismatch(format!("max_pool2 {sx:?}")));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(Op::MaxPool2 { x, argmax }, value, &[x]))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            if !(*v > T::ZERO) {
                *v = T::ZERO;
            }
        }
        self.push(Op::Relu(x), value, &[x])
    }

    /// `[n, ...] -> [n, prod(...)]`.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.shape(x);
        if sx.is_empty() {
            return Err(Error::ShapeMismatch("flatten of a scalar".into()));
        }
        let n = sx[0];
        let rest = sx[1..].iter().product();
        let value = self.value(x).clone().reshape(&[n, rest])?;
        Ok(self.push(Op::Flatten(x), value, &[x]))
    }

    /// Inverted dropout: zeroes a `p` fraction and rescales survivors by
    /// `1/(1-p)` in train mode; identity in eval mode.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("dropout rate {p} not in [0, 1)")));
        }
        let mut value = self.value(x).clone();
        let mask = match (self.mode, self.rng.as_mut()) {
            (Mode::Train, Some(rng)) if p > 0.0 => {
                let keep = T::from_f64(1.0 / (1.0 - p));
                let mask: Vec<T> = (0..value.len())
                    .map(|_| if rng.gen::<f64>() < p { T::ZERO } else { keep })
                    .collect();
                for (v, &m) in value.data_mut().iter_mut().zip(&mask) {
                    *v = *v * m;
                }
                Some(mask)
            }
            _ => None,
        };
        Ok(self.push(Op::Dropout { x, mask }, value, &[x]))
    }

    /// Mean softmax cross-entropy over the batch; returns a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: Targets<T>) -> Result<NodeId> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] == 0 {
            return Err(Error::ShapeMismatch(format!("logits {sl:?}")));
        }
        let (n, k) = (sl[0], sl[1]);
        match &targets {
            Targets::Indices(idx) => {
                if idx.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "{} targets for {n} rows",
                        idx.len()
                    )));
                }
                if let Some(bad) = idx.iter().find(|&&c| c >= k) {
                    return Err(Error::ShapeMismatch(format!("class {bad} >= {k} logits")));
                }
            }
            Targets::Dense(t) => {
                if t.shape() != sl.as_slice() {
                    return Err(Error::ShapeMismatch(format!(
                        "targets {:?} vs logits {sl:?}",
                        t.shape()
                    )));
                }
            }
        }
        let data = self.value(logits).data();
        let mut probs = vec![T::ZERO; n * k];
        let mut total = 0.0f64;
        for r in 0..n {
            let row = &data[r * k..(r + 1) * k];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
            let sum: f64 = row.iter().map(|v| (v.to_f64() - max).exp()).sum();
            let log_z = max + sum.ln();
            for (j, v) in row.iter().enumerate() {
                probs[r * k + j] = T::from_f64((v.to_f64() - log_z).exp());
            }
            total += match &targets {
                Targets::Indices(idx) => log_z - row[idx[r]].to_f64(),
                Targets::Dense(t) => {
                    let trow = &t.data()[r * k..(r + 1) * k];
                    row.iter()
                        .zip(trow)
                        .map(|(v, tv)| tv.to_f64() * (log_z - v.to_f64()))
                        .sum()
                }
            };
        }
        let value = Tensor::scalar(T::from_f64(total / n as f64));
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
            },
            value,
            &[logits],
        ))
    }

    /// Identity forward; multiplies the incoming gradient by `-alpha`.
    pub fn grad_reverse(&mut self, x: NodeId, alpha: T) -> NodeId {
        let value = self.value(x).clone();
        self.push(Op::GradReverse { x, alpha }, value, &[x])
    }

    /// Changes the backward scale of an existing reversal node.
    pub fn set_reversal_scale(&mut self, id: NodeId, scale: T) -> Result<()> {
        match &mut self.nodes[id.0].op {
            Op::GradReverse { alpha, .. } => {
                *alpha = scale;
                Ok(())
            }
            other => Err(Error::ShapeMismatch(format!("node {} is {}, not grad_reverse", id.0, other.tag()))),
        }
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> NodeId {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v = *v * s;
        }
        self.push(Op::Scale(x, s), value, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch(format!(
                "add {:?} + {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(Op::Add(a, b), value, &[a, b]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NotScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_fn(loss_shape, |_| T::ONE));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![T::ZERO; m * k];
                    T::gemm(m, n, k, T::ONE, g.data(), (n as isize, 1), vb.data(), (1, n as isize), T::ZERO, &mut da);
                    self.accumulate(grads, *a, Tensor::new(&[m, k], da)?);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![T::ZERO; k * n];
                    T::gemm(k, m, n, T::ONE, va.data(), (1, k as isize), g.data(), (n as isize, 1), T::ZERO, &mut db);
                    self.accumulate(grads, *b, Tensor::new(&[k, n], db)?);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*b) {
                    let f = self.shape(*b)[0];
                    let mut acc = vec![0.0f64; f];
                    for row in g.data().chunks(f) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += v.to_f64();
                        }
                    }
                    let db = acc.into_iter().map(T::from_f64).collect();
                    self.accumulate(grads, *b, Tensor::new(&[f], db)?);
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::Conv2d { x, w, b, pad, cols } => {
                let geom = ConvGeom::new(
                    self.shape(*x),
                    self.shape(*w),
                    if *pad == 0 { Padding::Valid } else { Padding::Same },
                )?;
                let (o, ckk, p) = (geom.out_c, geom.ckk(), geom.p());
                let gd = g.data();
                if self.wants(*b) {
                    let mut acc = vec![0f64; o];
                    for (k, row) in gd.chunks(p).enumerate() {
                        acc[k % o] += row.iter().map(|v| v.to_f64()).sum::<f64>();
                    }
                    let db = acc.into_iter().map(T::from_f64).collect();
                    self.accumulate(grads, *b, Tensor::new(&[o], db)?);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::ZERO; o * ckk];
                    for n in 0..geom.n {
                        let gn = &gd[n * o * p..(n + 1) * o * p];
                        let cn = &cols[n * ckk * p..(n + 1) * ckk * p];
                        T::gemm(o, p, ckk, T::ONE, gn, (p as isize, 1), cn, (1, p as isize), T::ONE, &mut dw);
                    }
                    self.accumulate(grads, *w, Tensor::new(self.shape(*w), dw)?);
                }
                if self.wants(*x) {
                    let in_len = geom.in_c * geom.h * geom.w;
                    let mut dx = vec![T::ZERO; geom.n * in_len];
                    let mut dcols = vec![T::ZERO; ckk * p];
                    let wv = self.value(*w).data();
                    for n in 0..geom.n {
                        let gn = &gd[n * o * p..(n + 1) * o * p];
                        T::gemm(ckk, o, p, T::ONE, wv, (1, ckk as isize), gn, (p as isize, 1), T::ZERO, &mut dcols);
                        col2im_one(&dcols, &geom, &mut dx[n * in_len..(n + 1) * in_len]);
                    }
                    self.accumulate(grads, *x, Tensor::new(self.shape(*x), dx)?);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(self.shape(*x));
                let d = dx.data_mut();
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    d[src as usize] += gv;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Relu(x) => {
                let mut dx = g.clone();
                for (d, &y) in dx.data_mut().iter_mut().zip(out.data()) {
                    if !(y > T::ZERO) {
                        *d = T::ZERO;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Flatten(x) => {
                let dx = g.clone().reshape(self.shape(*x))?;
                self.accumulate(grads, *x, dx);
            }
            Op::Dropout { x, mask } => {
                let mut dx = g.clone();
                if let Some(mask) = mask {
                    for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                        *d = *d * m;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
            } => {
                let sl = self.shape(*logits);
                let (n, k) = (sl[0], sl[1]);
                let scale = g.item() / T::from_f64(n as f64);
                let mut dl = probs.clone();
                match targets {
                    Targets::Indices(idx) => {
                        for (r, &c) in idx.iter().enumerate() {
                            dl[r * k + c] -= T::ONE;
                        }
                    }
                    Targets::Dense(t) => {
                        // d/dz of -Σ t log softmax(z) = softmax(z)·Σt - t
                        for r in 0..n {
                            let trow = &t.data()[r * k..(r + 1) * k];
                            let mass = trow.iter().fold(T::ZERO, |a, &v| a + v);
                            for j in 0..k {
                                dl[r * k + j] = dl[r * k + j] * mass - trow[j];
                            }
                        }
                    }
                }
                for v in &mut dl {
                    *v = *v * scale;
                }
                self.accumulate(grads, *logits, Tensor::new(sl, dl)?);
            }
            Op::GradReverse { x, alpha } => {
                let neg = -*alpha;
                let mut dx = g.clone();
                for v in dx.data_mut() {
                    *v = neg * *v;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Scale(x, s) => {
                let mut dx = g.clone();
                for v in dx.data_mut() {
                    *v = *v * *s;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
        }
        Ok(())
    }
}

struct ConvGeom {
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    k: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn new(sx: &[usize], sw: &[usize], padding: Padding) -> Result<Self> {
        let k = sw[2];
        let pad = match padding {
            Padding::Valid => 0,
            Padding::Same => {
                if k % 2 == 0 {
                    return Err(Error::ShapeMismatch(format!(
                        "same padding needs an odd kernel, got {k}"
                    )));
                }
                k / 2
            }
        };
        let (h, w) = (sx[2], sx[3]);
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::ShapeMismatch(format!(
                "kernel {k} larger than input {h}x{w}"
            )));
        }
        Ok(ConvGeom {
            n: sx[0],
            in_c: sx[1],
            h,
            w,
            out_c: sw[0],
            k,
            pad,
            out_h: h + 2 * pad - k + 1,
            out_w: w + 2 * pad - k + 1,
        })
    }

    fn ckk(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn p(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Columns of one sample, laid out as `[c*k*k, out_h*out_w]`.
fn im2col_one<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.p();
    for c in 0..g.in_c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst_row = &mut cols[row * p..(row + 1) * p];
                // ix = ox + kj - pad must lie in [0, w)
                let lo = g.pad.saturating_sub(kj);
                let hi = (g.w + g.pad - kj).min(g.out_w);
                for oy in 0..g.out_h {
                    let dst = &mut dst_row[oy * g.out_w..(oy + 1) * g.out_w];
                    let iy = oy + ki;
                    if iy < g.pad || iy - g.pad >= g.h || lo >= hi {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src_row = &plane[(iy - g.pad) * g.w..(iy - g.pad + 1) * g.w];
                    dst[..lo].fill(T::ZERO);
                    let s0 = lo + kj - g.pad;
                    dst[lo..hi].copy_from_slice(&src_row[s0..s0 + (hi - lo)]);
                    dst[hi..].fill(T::ZERO);
                }
            }
        }
    }
}

/// Scatters one sample's column gradients back onto its input planes.
fn col2im_one<T: Element>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let p = g.p();
    for c in 0..g.in_c {
        let base = c * g.h * g.w;
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src_row = &cols[row * p..(row + 1) * p];
                let lo = g.pad.saturating_sub(kj);
                let hi = (g.w + g.pad - kj).min(g.out_w);
                if lo >= hi {
                    continue;
                }
                let s0 = lo + kj - g.pad;
                for oy in 0..g.out_h {
                    let iy = oy + ki;
                    if iy < g.pad || iy - g.pad >= g.h {
                        continue;
                    }
                    let at = base + (iy - g.pad) * g.w + s0;
                    let dst = &mut x[at..at + (hi - lo)];
                    let src = &src_row[oy * g.out_w + lo..oy * g.out_w + hi];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::<f32>::eval();
        let x = g.input(Tensor::new(&[2], vec![-1.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn uniform_logits_give_ln3() {
        let mut g = Graph::<f64>::eval();
        let z = g.input(t(&[1, 3], &[0.0, 0.0, 0.0]));
        let l = g.softmax_cross_entropy(z, Targets::Indices(vec![1])).unwrap();
        assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dense_one_hot_matches_indices() {
        let logits = t(&[2, 3], &[0.3, -1.2, 2.0, 1.0, 0.5, -0.5]);
        let mut g = Graph::<f64>::eval();
        let z = g.param(logits.clone());
        let a = g.softmax_cross_entropy(z, Targets::Indices(vec![2, 0])).unwrap();
        let oh = t(&[2, 3], &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let b = g.softmax_cross_entropy(z, Targets::Dense(oh)).unwrap();
        assert!((g.value(a).item() - g.value(b).item()).abs() < 1e-12);
        let ga = g.backward(a).unwrap().get(z);
        let gb = g.backward(b).unwrap().get(z);
        for (x, y) in ga.data().iter().zip(gb.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_reverse_negates_downstream_sum() {
        let mut g = Graph::<f32>::eval();
        let x = g.param(Tensor::new(&[1, 3], vec![0.5, -2.0, 3.0]).unwrap());
        let r = g.grad_reverse(x, 1.0);
        assert_eq!(g.value(r), g.value(x));
        let ones = g.input(Tensor::new(&[3, 1], vec![1.0; 3]).unwrap());
        let s = g.matmul(r, ones).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[-1.0, -1.0, -1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f32>::eval();
        let x = g.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(Error::NotScalarLoss(_))));
    }

    #[test]
    fn unused_nodes_get_zero_gradient() {
        let mut g = Graph::<f64>::eval();
        let a = g.param(t(&[1, 1], &[2.0]));
        let unused = g.param(t(&[1, 2], &[1.0, 1.0]));
        let l = g.scale(a, 3.0);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a).data(), &[3.0]);
        assert_eq!(grads.get(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut g = Graph::<f32>::eval();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::ShapeMismatch(_))));
        let bias = g.input(Tensor::zeros(&[2]));
        assert!(g.add_bias(a, bias).is_err());
        let logits = g.input(Tensor::zeros(&[2, 3]));
        assert!(g.softmax_cross_entropy(logits, Targets::Indices(vec![0, 3])).is_err());
    }

    #[test]
    fn conv_same_padding_keeps_size_and_matches_direct_sum() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 5, 4], |i| ((i * 7) % 11) as f64 - 5.0);
        let w = Tensor::<f64>::from_fn(&[3, 2, 3, 3], |i| ((i * 5) % 7) as f64 * 0.1 - 0.3);
        let b = t(&[3], &[0.1, -0.2, 0.3]);
        let mut g = Graph::<f64>::eval();
        let (xi, wi, bi) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
        let y = g.conv2d(xi, wi, bi, Padding::Same).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 3, 5, 4]);
        let (h, wd) = (5isize, 4isize);
        for n in 0..2 {
            for o in 0..3 {
                for oy in 0..h {
                    for ox in 0..wd {
                        let mut s = b.data()[o];
                        for c in 0..2 {
                            for ki in 0..3isize {
                                for kj in 0..3isize {
                                    let (iy, ix) = (oy + ki - 1, ox + kj - 1);
                                    if iy < 0 || ix < 0 || iy >= h || ix >= wd {
                                        continue;
                                    }
                                    s += x.data()[((n * 2 + c) * 5 + iy as usize) * 4 + ix as usize]
                                        * w.data()[((o * 2 + c) * 3 + ki as usize) * 3 + kj as usize];
                                }
                            }
                        }
                        let got = g.value(y).data()[((n * 3 + o) * 5 + oy as usize) * 4 + ox as usize];
                        assert!((got - s).abs() < 1e-12);
                    }
                }
            }
        }
        let yv = g.conv2d(xi, wi, bi, Padding::Valid).unwrap();
        assert_eq!(g.value(yv).shape(), &[2, 3, 3, 2]);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let mut g = Graph::<f64>::eval();
        let x = g.param(t(&[1, 1, 2, 3], &[1.0, 5.0, 0.0, 2.0, 3.0, 9.0]));
        let y = g.max_pool2(x).unwrap();
        assert_eq!(g.value(y).data(), &[5.0]);
        let grads = g.backward(g.len().checked_sub(1).map(NodeId).unwrap()).unwrap();
        assert_eq!(grads.get(x).data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_eval_identity_and_train_rescale() {
        let x = Tensor::<f32>::from_fn(&[4, 5], |i| i as f32 + 1.0);
        let mut g = Graph::<f32>::eval();
        let xi = g.input(x.clone());
        let y = g.dropout(xi, 0.5).unwrap();
        assert_eq!(g.value(y), &x);

        let mut g = Graph::<f32>::train(stream(1, Stream::Dropout, 0, 0, 0));
        let xi = g.input(x.clone());
        let y = g.dropout(xi, 0.5).unwrap();
        for (a, b) in g.value(y).data().iter().zip(x.data()) {
            assert!(*a == 0.0 || *a == 2.0 * b);
        }
        assert!(g.dropout(xi, 1.0).is_err());
    }
}
