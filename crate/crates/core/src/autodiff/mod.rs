//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every forward operation as a node in creation
//! order, which is already a topological order. [`Graph::backward`] walks
//! the tape in reverse. Graphs are built per forward pass and dropped after
//! the gradients have been read out.

mod conv;
mod resample;

pub use conv::Padding;

use conv::Geometry;
use resample::Tap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        geometry: Geometry,
        padding: Padding,
    },
    ConvTranspose {
        input: Var,
        kernel: Var,
        geometry: Geometry,
    },
    Resample {
        input: Var,
        ys: Vec<Tap<T>>,
        xs: Vec<Tap<T>>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Sqrt(Var),
    Relu(Var),
    AddBias(Var, Var),
    Softmax(Var),
    ConcatChannels(Vec<Var>),
    SliceChannels { input: Var, start: usize },
    SumChannels(Var),
    Sum(Var),
    Mean(Var),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    WeightedCe {
        logits: Var,
        labels: Vec<u8>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Per-channel statistics produced by a training-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf; gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(sa)
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(va.shape(), data).expect("zip of equal shapes");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    /// Same-padded convolution with kernel `(out, in, kh, kw)`; output is
    /// `ceil(H/stride) × ceil(W/stride)`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (value, geometry) = conv::conv_forward(self.value(input), self.value(kernel), stride, padding)?;
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            value,
            Op::Conv {
                input,
                kernel,
                geometry,
                padding,
            },
            rg,
        ))
    }

    /// Transposed convolution (deconvolution). Stride 2 doubles the spatial
    /// extents, stride 1 preserves them.
    pub fn transposed_conv2d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (value, geometry) = conv::transposed_forward(self.value(input), self.value(kernel), stride)?;
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            value,
            Op::ConvTranspose {
                input,
                kernel,
                geometry,
            },
            rg,
        ))
    }

    pub fn bilinear_resample(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("bilinear_resample", "target extents must be ≥ 1"));
        }
        let shape = self.shape(input);
        let [n, c, h, w] = shape.0;
        if h == out_h && w == out_w {
            let value = self.value(input).clone();
            let rg = self.rg(input);
            return Ok(self.push(
                value,
                Op::Resample {
                    input,
                    ys: axis_identity(h),
                    xs: axis_identity(w),
                },
                rg,
            ));
        }
        let ys = resample::axis_taps::<T>(h, out_h);
        let xs = resample::axis_taps::<T>(w, out_w);
        let mut out = Tensor::zeros(Shape::new(n, c, out_h, out_w));
        let src = self.value(input);
        for (i, dst) in out.data_mut().chunks_mut(out_h * out_w).enumerate() {
            resample::resample_plane(&src.data()[i * h * w..(i + 1) * h * w], w, dst, out_w, &ys, &xs);
        }
        let rg = self.rg(input);
        Ok(self.push(out, Op::Resample { input, ys, xs }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise_mul", a, b)?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), |x| x.sqrt())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    /// Adds a per-channel bias of shape `1×C×1×1`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(bias);
        if bs != Shape::new(1, xs.c(), 1, 1) {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: xs,
                right: bs,
            });
        }
        let plane = xs.plane();
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, chunk) in value.data_mut().chunks_mut(plane).enumerate() {
            let bv = b[i % xs.c()];
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    /// Softmax across channels at every pixel, stabilized by subtracting the
    /// per-pixel maximum.
    pub fn softmax_channels(&mut self, logits: Var) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.c() < 2 {
            return Err(Error::invalid("softmax_channels", format!("needs ≥ 2 channels, got {shape}")));
        }
        let value = softmax(self.value(logits));
        let rg = self.rg(logits);
        Ok(self.push(value, Op::Softmax(logits), rg))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.n() != s0.n() || s.h() != s0.h() || s.w() != s0.w() {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    left: s0,
                    right: s,
                });
            }
            channels += s.c();
        }
        let shape = Shape::new(s0.n(), channels, s0.h(), s0.w());
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..s0.n() {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape().c() * t.shape().plane();
                data.extend_from_slice(&t.data()[b * len..(b + 1) * len]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push(value, Op::ConcatChannels(parts.to_vec()), rg))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(input);
        if len == 0 || start + len > s.c() {
            return Err(Error::invalid(
                "slice_channels",
                format!("channels {start}..{} out of range for {s}", start + len),
            ));
        }
        let shape = Shape::new(s.n(), len, s.h(), s.w());
        let src = self.value(input);
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..s.n() {
            for c in start..start + len {
                data.extend_from_slice(src.plane(b, c));
            }
        }
        let rg = self.rg(input);
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push(value, Op::SliceChannels { input, start }, rg))
    }

    /// Sum across channels, producing `N×1×H×W`.
    pub fn sum_channels(&mut self, input: Var) -> Var {
        let s = self.shape(input);
        let src = self.value(input);
        let mut out = Tensor::zeros(Shape::new(s.n(), 1, s.h(), s.w()));
        for b in 0..s.n() {
            let dst = &mut out.data_mut()[b * s.plane()..(b + 1) * s.plane()];
            for c in 0..s.c() {
                for (d, v) in dst.iter_mut().zip(src.plane(b, c)) {
                    *d = *d + *v;
                }
            }
        }
        let rg = self.rg(input);
        self.push(out, Op::SumChannels(input), rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.rg(input);
        self.push(value, Op::Sum(input), rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let value = Tensor::scalar(t.sum() / T::from_f64(t.shape().numel() as f64));
        let rg = self.rg(input);
        self.push(value, Op::Mean(input), rg)
    }

    /// Batch normalization using the statistics of the current batch.
    /// `gamma`/`beta` are `1×C×1×1`. Returns the biased batch statistics
    /// for running-average bookkeeping.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let s = self.check_norm_params(x, gamma, beta)?;
        let t = self.value(x);
        let count = T::from_f64((s.n() * s.plane()) as f64);
        let mut mean = vec![T::zero(); s.c()];
        let mut var = vec![T::zero(); s.c()];
        for c in 0..s.c() {
            let mut acc = T::zero();
            for b in 0..s.n() {
                acc = acc + t.plane(b, c).iter().fold(T::zero(), |a, &v| a + v);
            }
            mean[c] = acc / count;
            let mut acc = T::zero();
            for b in 0..s.n() {
                acc = acc + t.plane(b, c).iter().fold(T::zero(), |a, &v| a + (v - mean[c]) * (v - mean[c]));
            }
            var[c] = acc / count;
        }
        let stats = BatchStats { mean, var };
        let v = self.apply_norm(x, gamma, beta, &stats.mean, &stats.var, eps, true);
        Ok((v, stats))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let s = self.check_norm_params(x, gamma, beta)?;
        if mean.len() != s.c() || var.len() != s.c() {
            return Err(Error::invalid("batch_norm_eval", "running statistics length mismatch"));
        }
        Ok(self.apply_norm(x, gamma, beta, mean, var, eps, false))
    }

    fn check_norm_params(&self, x: Var, gamma: Var, beta: Var) -> Result<Shape> {
        let s = self.shape(x);
        let want = Shape::new(1, s.c(), 1, 1);
        for p in [gamma, beta] {
            if self.shape(p) != want {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm",
                    left: s,
                    right: self.shape(p),
                });
            }
        }
        Ok(s)
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_norm(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T, batch_stats: bool) -> Var {
        let s = self.shape(x);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        let t = self.value(x);
        let mut normalized = vec![T::zero(); s.numel()];
        let mut out = Tensor::zeros(s);
        let plane = s.plane();
        for (i, (nchunk, src)) in normalized.chunks_mut(plane).zip(t.data().chunks(plane)).enumerate() {
            let c = i % s.c();
            for (n, &v) in nchunk.iter_mut().zip(src) {
                *n = (v - mean[c]) * inv_std[c];
            }
        }
        for (i, (ochunk, nchunk)) in out.data_mut().chunks_mut(plane).zip(normalized.chunks(plane)).enumerate() {
            let c = i % s.c();
            for (o, &n) in ochunk.iter_mut().zip(nchunk) {
                *o = g[c] * n + bt[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            },
            rg,
        )
    }

    /// Class-weighted softmax cross entropy, averaged over all pixels.
    ///
    /// `labels` holds one class index per pixel in `N×H×W` order and
    /// `weights` one weight per channel of `logits`.
    pub fn weighted_softmax_ce(&mut self, logits: Var, labels: &[u8], weights: &[T]) -> Result<Var> {
        let s = self.shape(logits);
        if labels.len() != s.n() * s.plane() {
            return Err(Error::invalid(
                "weighted_softmax_ce",
                format!("{} labels for logits {s}", labels.len()),
            ));
        }
        if weights.len() != s.c() {
            return Err(Error::invalid(
                "weighted_softmax_ce",
                format!("{} class weights for {} channels", weights.len(), s.c()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= s.c()) {
            return Err(Error::LabelOutOfRange {
                value: bad,
                classes: s.c(),
            });
        }
        let x = self.value(logits);
        let plane = s.plane();
        let mut total = T::zero();
        for b in 0..s.n() {
            let base = b * s.c() * plane;
            for p in 0..plane {
                let mut m = T::neg_infinity();
                for c in 0..s.c() {
                    m = m.max(x.data()[base + c * plane + p]);
                }
                let mut z = T::zero();
                for c in 0..s.c() {
                    z = z + (x.data()[base + c * plane + p] - m).exp();
                }
                let y = labels[b * plane + p] as usize;
                let nll = m + z.ln() - x.data()[base + y * plane + p];
                total = total + weights[y] * nll;
            }
        }
        let count = T::from_f64((s.n() * plane) as f64);
        let probs = softmax(x).into_data();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / count),
            Op::WeightedCe {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate across calls
    /// until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.numel() != 1 {
            return Err(Error::NotScalar(shape));
        }
        let mut pending: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = pending[idx].take() else { continue };
            self.propagate(idx, &g, &mut pending);
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, d)| *a = *a + *d),
                None => node.grad = Some(Tensor::from_vec(node.value.shape(), g)?),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], pending: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                input,
                kernel,
                geometry,
                padding,
            } => {
                let mut di = self.rg(*input).then(|| take_or_zero(pending, self, *input));
                let mut dk = self.rg(*kernel).then(|| take_or_zero(pending, self, *kernel));
                conv::conv_backward(
                    geometry,
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *padding,
                    di.as_deref_mut(),
                    dk.as_deref_mut(),
                );
                restore(pending, *input, di);
                restore(pending, *kernel, dk);
            }
            Op::ConvTranspose {
                input,
                kernel,
                geometry,
            } => {
                let mut di = self.rg(*input).then(|| take_or_zero(pending, self, *input));
                let mut dk = self.rg(*kernel).then(|| take_or_zero(pending, self, *kernel));
                conv::transposed_backward(
                    geometry,
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    di.as_deref_mut(),
                    dk.as_deref_mut(),
                );
                restore(pending, *input, di);
                restore(pending, *kernel, dk);
            }
            Op::Resample { input, ys, xs } => {
                let src = self.shape(*input);
                let (oh, ow) = (out.shape().h(), out.shape().w());
                self.accumulate(pending, *input, |d| {
                    for (i, d_src) in d.chunks_mut(src.plane()).enumerate() {
                        resample::resample_plane_backward(&g[i * oh * ow..(i + 1) * oh * ow], ow, d_src, src.w(), ys, xs);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(pending, *a, |d| add_into(d, g));
                self.accumulate(pending, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(pending, *a, |d| add_into(d, g));
                self.accumulate(pending, *b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d = *d - *g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(pending, *a, |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(vb) {
                        *d = *d + *g * *y;
                    }
                });
                self.accumulate(pending, *b, |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(va) {
                        *d = *d + *g * *x;
                    }
                });
            }
            Op::Scale(a, s) => self.accumulate(pending, *a, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d = *d + *g * *s);
            }),
            Op::AddScalar(a) => self.accumulate(pending, *a, |d| add_into(d, g)),
            Op::Square(a) => {
                let x = self.value(*a).data();
                let two = T::from_f64(2.0);
                self.accumulate(pending, *a, |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(x) {
                        *d = *d + two * *x * *g;
                    }
                });
            }
            Op::Sqrt(a) => {
                let half = T::from_f64(0.5);
                self.accumulate(pending, *a, |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(out.data()) {
                        *d = *d + *g * half / *y;
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(pending, *a, |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(x) {
                        if *x > T::zero() {
                            *d = *d + *g;
                        }
                    }
                });
            }
            Op::AddBias(x, bias) => {
                let s = out.shape();
                self.accumulate(pending, *x, |d| add_into(d, g));
                self.accumulate(pending, *bias, |d| {
                    for (i, chunk) in g.chunks(s.plane()).enumerate() {
                        let c = i % s.c();
                        d[c] = chunk.iter().fold(d[c], |a, &v| a + v);
                    }
                });
            }
            Op::Softmax(a) => {
                let s = out.shape();
                let p = out.data();
                let plane = s.plane();
                self.accumulate(pending, *a, |d| {
                    for b in 0..s.n() {
                        let base = b * s.c() * plane;
                        for px in 0..plane {
                            let mut dot = T::zero();
                            for c in 0..s.c() {
                                let i = base + c * plane + px;
                                dot = dot + g[i] * p[i];
                            }
                            for c in 0..s.c() {
                                let i = base + c * plane + px;
                                d[i] = d[i] + p[i] * (g[i] - dot);
                            }
                        }
                    }
                });
            }
            Op::ConcatChannels(parts) => {
                let s = out.shape();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).c();
                    let len = pc * s.plane();
                    self.accumulate(pending, p, |d| {
                        for b in 0..s.n() {
                            let src = &g[b * s.c() * s.plane() + offset..][..len];
                            add_into(&mut d[b * len..(b + 1) * len], src);
                        }
                    });
                    offset += len;
                }
            }
            Op::SliceChannels { input, start } => {
                let src = self.shape(*input);
                let s = out.shape();
                self.accumulate(pending, *input, |d| {
                    for b in 0..s.n() {
                        for c in 0..s.c() {
                            let from = &g[(b * s.c() + c) * s.plane()..][..s.plane()];
                            let to = &mut d[(b * src.c() + start + c) * s.plane()..][..s.plane()];
                            add_into(to, from);
                        }
                    }
                });
            }
            Op::SumChannels(a) => {
                let s = self.shape(*a);
                self.accumulate(pending, *a, |d| {
                    for b in 0..s.n() {
                        let from = &g[b * s.plane()..(b + 1) * s.plane()];
                        for c in 0..s.c() {
                            add_into(&mut d[(b * s.c() + c) * s.plane()..][..s.plane()], from);
                        }
                    }
                });
            }
            Op::Sum(a) => self.accumulate(pending, *a, |d| d.iter_mut().for_each(|d| *d = *d + g[0])),
            Op::Mean(a) => {
                let k = g[0] / T::from_f64(self.shape(*a).numel() as f64);
                self.accumulate(pending, *a, |d| d.iter_mut().for_each(|d| *d = *d + k));
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            } => {
                let s = out.shape();
                let plane = s.plane();
                let gm = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); s.c()];
                let mut sum_gx = vec![T::zero(); s.c()];
                for (i, (gc, nc)) in g.chunks(plane).zip(normalized.chunks(plane)).enumerate() {
                    let c = i % s.c();
                    for (&gv, &nv) in gc.iter().zip(nc) {
                        sum_g[c] = sum_g[c] + gv;
                        sum_gx[c] = sum_gx[c] + gv * nv;
                    }
                }
                self.accumulate(pending, *gamma, |d| add_into(d, &sum_gx));
                self.accumulate(pending, *beta, |d| add_into(d, &sum_g));
                let count = T::from_f64((s.n() * plane) as f64);
                self.accumulate(pending, *input, |d| {
                    for (i, ((dc, gc), nc)) in d.chunks_mut(plane).zip(g.chunks(plane)).zip(normalized.chunks(plane)).enumerate() {
                        let c = i % s.c();
                        let k = gm[c] * inv_std[c];
                        for ((dv, &gv), &nv) in dc.iter_mut().zip(gc).zip(nc) {
                            let v = if *batch_stats {
                                k * (gv - sum_g[c] / count - nv * sum_gx[c] / count)
                            } else {
                                k * gv
                            };
                            *dv = *dv + v;
                        }
                    }
                });
            }
            Op::WeightedCe {
                logits,
                labels,
                weights,
                probs,
            } => {
                let s = self.shape(*logits);
                let plane = s.plane();
                let scale = g[0] / T::from_f64((s.n() * plane) as f64);
                self.accumulate(pending, *logits, |d| {
                    for b in 0..s.n() {
                        let base = b * s.c() * plane;
                        for px in 0..plane {
                            let y = labels[b * plane + px] as usize;
                            let w = weights[y] * scale;
                            for c in 0..s.c() {
                                let i = base + c * plane + px;
                                let target = if c == y { T::one() } else { T::zero() };
                                d[i] = d[i] + w * (probs[i] - target);
                            }
                        }
                    }
                });
            }
        }
    }

    fn accumulate(&self, pending: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let mut buf = take_or_zero(pending, self, v);
        f(&mut buf);
        pending[v.0] = Some(buf);
    }
}

fn take_or_zero<T: Real>(pending: &mut [Option<Vec<T>>], g: &Graph<T>, v: Var) -> Vec<T> {
    pending[v.0]
        .take()
        .unwrap_or_else(|| vec![T::zero(); g.shape(v).numel()])
}

fn restore<T>(pending: &mut [Option<Vec<T>>], v: Var, buf: Option<Vec<T>>) {
    if let Some(b) = buf {
        pending[v.0] = Some(b);
    }
}

fn add_into<T: Real>(d: &mut [T], g: &[T]) {
    d.iter_mut().zip(g).for_each(|(d, g)| *d = *d + *g);
}

fn axis_identity<T: Real>(n: usize) -> Vec<Tap<T>> {
    (0..n)
        .map(|i| Tap {
            lo: i,
            hi: i,
            frac: T::zero(),
        })
        .collect()
}

/// Channel softmax of a plain tensor.
pub fn softmax<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    for b in 0..s.n() {
        let base = b * s.c() * plane;
        for p in 0..plane {
            let mut m = T::neg_infinity();
            for c in 0..s.c() {
                m = m.max(x.data()[base + c * plane + p]);
            }
            let mut z = T::zero();
            for c in 0..s.c() {
                let e = (x.data()[base + c * plane + p] - m).exp();
                out.data_mut()[base + c * plane + p] = e;
                z = z + e;
            }
            for c in 0..s.c() {
                let i = base + c * plane + p;
                out.data_mut()[i] = out.data()[i] / z;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
