//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and enough state
//! to run its backward rule. Nodes only ever reference earlier nodes, so the
//! tape is topologically ordered by construction and backward is a single
//! reverse sweep.

use super::conv::{col2im_add, conv_output_dim, im2col_into, ConvGeometry};
use super::{check_finite, gemm, MatRef, Real, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    ChannelAffine {
        input: Var,
        scale: Vec<T>,
        plane: usize,
    },
    Relu {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Sum {
        input: Var,
    },
    SquaredDistance {
        a: Var,
        b: Var,
    },
    Gram {
        input: Var,
        d: usize,
        m: usize,
    },
    Softmax {
        input: Var,
        temperature: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-threaded recording of a computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input; `backward` fills its gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        check_finite(value.data(), "leaf")?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Input that never receives a gradient (frozen parameters, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        check_finite(value.data(), "constant")?;
        Ok(self.push(value, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0].f64()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var], name: &str) -> Result<Var> {
        check_finite(&data, name)?;
        let requires_grad = self.any_grad(inputs);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, op, requires_grad))
    }

    /// 2-D convolution of a `1×Cin×H×W` input with a `Cout×Cin×kh×kw` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (n, cin, h, w) = self.value(input).dims4()?;
        let (cout, wcin, kh, kw) = self.value(weight).dims4()?;
        if n != 1 {
            return Err(Error::config(format!("conv2d expects batch 1, got {n}")));
        }
        if wcin != cin {
            return Err(Error::config(format!(
                "conv2d weight expects {wcin} input channels, input has {cin}"
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv2d stride must be >= 1"));
        }
        let (ho, wo) = match (
            conv_output_dim(h, kh, stride, padding),
            conv_output_dim(w, kw, stride, padding),
        ) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(Error::config(format!(
                    "conv2d kernel {kh}x{kw} does not fit {h}x{w} with padding {padding}"
                )))
            }
        };
        if let Some(b) = bias {
            if self.value(b).len() != cout {
                return Err(Error::config(format!(
                    "conv2d bias has {} entries, expected {cout}",
                    self.value(b).len()
                )));
            }
        }
        let geom = ConvGeometry {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            ho,
            wo,
        };
        let (k, p) = (geom.col_rows(), geom.col_cols());
        let x = self.value(input).data();
        let mut out = vec![T::zero(); cout * p];
        let wmat = MatRef::row_major(self.value(weight).data(), cout, k);
        if geom.is_pointwise() {
            gemm(T::one(), wmat, MatRef::row_major(x, k, p), T::zero(), &mut out);
        } else {
            let mut cols = vec![T::zero(); k * p];
            im2col_into(x, &geom, &mut cols);
            gemm(T::one(), wmat, MatRef::row_major(&cols, k, p), T::zero(), &mut out);
        }
        if let Some(b) = bias {
            let b = self.value(b).data();
            for (row, &bv) in out.chunks_exact_mut(p).zip(b) {
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.record(
            vec![1, cout, ho, wo],
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &inputs,
            "conv2d",
        )
    }

    /// 2×2 max pooling with stride 2. Ties go to the first cell in row-major order.
    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        if kernel != 2 || stride != 2 {
            return Err(Error::config(format!(
                "max_pool2d supports kernel 2 stride 2 only, got kernel {kernel} stride {stride}"
            )));
        }
        let (n, c, h, w) = self.value(input).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::config(format!(
                "max_pool2d needs even spatial dims, got {h}x{w}"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
        self.record(
            vec![n, c, ho, wo],
            out,
            Op::MaxPool { input, argmax },
            &[input],
            "max_pool2d",
        )
    }

    /// Evaluation-mode batch normalization with stored statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: T,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        for (name, t) in [
            ("gamma", gamma),
            ("beta", beta),
            ("running_mean", running_mean),
            ("running_var", running_var),
        ] {
            if t.len() != c {
                return Err(Error::config(format!(
                    "batch norm {name} has {} entries, input has {c} channels",
                    t.len()
                )));
            }
        }
        if running_var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::config("batch norm running_var must be non-negative"));
        }
        let scale: Vec<T> = gamma
            .data()
            .iter()
            .zip(running_var.data())
            .map(|(&g, &v)| g / (v + eps).sqrt())
            .collect();
        let shift: Vec<T> = beta
            .data()
            .iter()
            .zip(running_mean.data())
            .zip(&scale)
            .map(|((&b, &m), &s)| b - m * s)
            .collect();
        let plane = h * w;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(x.len());
        for (i, chunk) in x.chunks_exact(plane).enumerate() {
            let ch = i % c;
            let (s, b) = (scale[ch], shift[ch]);
            out.extend(chunk.iter().map(|&v| v * s + b));
        }
        self.record(
            vec![n, c, h, w],
            out,
            Op::ChannelAffine {
                input,
                scale,
                plane,
            },
            &[input],
            "batch_norm",
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        let shape = t.shape().to_vec();
        let out = t.data().iter().map(|&v| v.max(T::zero())).collect();
        self.record(shape, out, Op::Relu { input }, &[input], "relu")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::config(format!(
                "add shape mismatch {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let shape = ta.shape().to_vec();
        let out = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        self.record(shape, out, Op::Add { a, b }, &[a, b], "add")
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let t = self.value(input);
        let shape = t.shape().to_vec();
        let out = t.data().iter().map(|&v| v * factor).collect();
        self.record(shape, out, Op::Scale { input, factor }, &[input], "scale")
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s: f64 = self.value(input).data().iter().map(|v| v.f64()).sum();
        self.record(vec![1], vec![T::of(s)], Op::Sum { input }, &[input], "sum")
    }

    /// `Σ (a − b)²` as a scalar.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::usage(format!(
                "squared distance shape mismatch {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| {
                let d = (x - y).f64();
                d * d
            })
            .sum();
        self.record(
            vec![1],
            vec![T::of(s)],
            Op::SquaredDistance { a, b },
            &[a, b],
            "squared_distance",
        )
    }

    /// Channel correlation `F·Fᵀ` of a feature map viewed as `D×M`.
    pub fn gram(&mut self, input: Var) -> Result<Var> {
        let (d, m) = self.value(input).as_channels_by_positions()?;
        let f = MatRef::row_major(self.value(input).data(), d, m);
        let mut g = vec![T::zero(); d * d];
        gemm(T::one(), f, f.t(), T::zero(), &mut g);
        for i in 0..d {
            for j in 0..i {
                g[i * d + j] = g[j * d + i];
            }
        }
        self.record(vec![d, d], g, Op::Gram { input, d, m }, &[input], "gram")
    }

    /// Softmax over every entry jointly: `exp(x/T) / Σ exp(x/T)`, max-shifted.
    pub fn softmax(&mut self, input: Var, temperature: T) -> Result<Var> {
        if temperature.is_nan() || temperature <= T::zero() {
            return Err(Error::config(format!(
                "softmax temperature must be > 0, got {temperature}"
            )));
        }
        let t = self.value(input);
        let shape = t.shape().to_vec();
        let out = softmax_values(t.data(), temperature);
        self.record(
            shape,
            out,
            Op::Softmax { input, temperature },
            &[input],
            "softmax",
        )
    }

    /// Reverse sweep from a scalar; leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::usage("backward on a variable from another tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize_with(self.nodes.len(), || None);
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => {
                    let slot = &mut self.leaf_grads[id];
                    match slot {
                        Some(acc) => {
                            for (a, &v) in acc.data_mut().iter_mut().zip(&g) {
                                *a = *a + v;
                            }
                        }
                        None => *slot = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                    }
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => conv_backward(nodes, &mut grads, &g, *input, *weight, *bias, geom),
                Op::MaxPool { input, argmax } => {
                    if let Some(dx) = slot(nodes, &mut grads, *input) {
                        for (&gi, &idx) in g.iter().zip(argmax) {
                            dx[idx as usize] = dx[idx as usize] + gi;
                        }
                    }
                }
                Op::ChannelAffine {
                    input,
                    scale,
                    plane,
                } => {
                    let c = scale.len();
                    if let Some(dx) = slot(nodes, &mut grads, *input) {
                        for (i, (dchunk, gchunk)) in dx
                            .chunks_exact_mut(*plane)
                            .zip(g.chunks_exact(*plane))
                            .enumerate()
                        {
                            let s = scale[i % c];
                            for (d, &gv) in dchunk.iter_mut().zip(gchunk) {
                                *d = *d + gv * s;
                            }
                        }
                    }
                }
                Op::Relu { input } => {
                    let x = nodes[input.0].value.data();
                    if let Some(dx) = slot(nodes, &mut grads, *input) {
                        for ((d, &gv), &xv) in dx.iter_mut().zip(&g).zip(x) {
                            if xv > T::zero() {
                                *d = *d + gv;
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if let Some(dx) = slot(nodes, &mut grads, v) {
                            for (d, &gv) in dx.iter_mut().zip(&g) {
                                *d = *d + gv;
                            }
                        }
                    }
                }
                Op::Scale { input, factor } => {
                    if let Some(dx) = slot(nodes, &mut grads, *input) {
                        for (d, &gv) in dx.iter_mut().zip(&g) {
                            *d = *d + gv * *factor;
                        }
                    }
                }
                Op::Sum { input } => {
                    if let Some(dx) = slot(nodes, &mut grads, *input) {
                        dx.iter_mut().for_each(|d| *d = *d + g[0]);
                    }
                }
                Op::SquaredDistance { a, b } => {
                    let two_g = g[0] + g[0];
                    let (xa, xb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if let Some(da) = slot(nodes, &mut grads, *a) {
                        for ((d, &p), &q) in da.iter_mut().zip(xa).zip(xb) {
                            *d = *d + two_g * (p - q);
                        }
                    }
                    if let Some(db) = slot(nodes, &mut grads, *b) {
                        for ((d, &p), &q) in db.iter_mut().zip(xa).zip(xb) {
                            *d = *d - two_g * (p - q);
                        }
                    }
                }
                Op::Gram { input, d, m } => {
                    let (d, m) = (*d, *m);
                    let f = nodes[input.0].value.data();
                    if let Some(df) = slot(nodes, &mut grads, *input) {
                        // dF = (dG + dGᵀ) F
                        let mut sym = vec![T::zero(); d * d];
                        for i in 0..d {
                            for j in 0..d {
                                sym[i * d + j] = g[i * d + j] + g[j * d + i];
                            }
                        }
                        gemm(
                            T::one(),
                            MatRef::row_major(&sym, d, d),
                            MatRef::row_major(f, d, m),
                            T::one(),
                            df,
                        );
                    }
                }
                Op::Softmax { input, temperature } => {
                    let y = node.value.data();
                    let dot: f64 = y.iter().zip(&g).map(|(a, b)| a.f64() * b.f64()).sum();
                    let dot = T::of(dot);
                    let inv_t = T::one() / *temperature;
                    if let Some(dx) = slot(nodes, &mut grads, *input) {
                        for ((d, &yv), &gv) in dx.iter_mut().zip(y).zip(&g) {
                            *d = *d + yv * (gv - dot) * inv_t;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradient buffer for `v`, allocated on first use; `None` when `v` is frozen.
fn slot<'g, T: Real>(
    nodes: &[Node<T>],
    grads: &'g mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'g mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

fn conv_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    input: Var,
    weight: Var,
    bias: Option<Var>,
    geom: &ConvGeometry,
) {
    let (k, p) = (geom.col_rows(), geom.col_cols());
    let wt = &nodes[weight.0].value;
    let cout = wt.shape()[0];
    let gmat = MatRef::row_major(g, cout, p);
    let x = nodes[input.0].value.data();

    if let Some(db) = bias.and_then(|b| slot(nodes, grads, b)) {
        for (d, row) in db.iter_mut().zip(g.chunks_exact(p)) {
            let s: f64 = row.iter().map(|v| v.f64()).sum();
            *d = *d + T::of(s);
        }
    }
    if let Some(dw) = slot(nodes, grads, weight) {
        if geom.is_pointwise() {
            gemm(T::one(), gmat, MatRef::row_major(x, k, p).t(), T::one(), dw);
        } else {
            let mut cols = vec![T::zero(); k * p];
            im2col_into(x, geom, &mut cols);
            gemm(T::one(), gmat, MatRef::row_major(&cols, k, p).t(), T::one(), dw);
        }
    }
    if let Some(dx) = slot(nodes, grads, input) {
        let wmat = MatRef::row_major(wt.data(), cout, k).t();
        if geom.is_pointwise() {
            gemm(T::one(), wmat, gmat, T::one(), dx);
        } else {
            let mut dcols = vec![T::zero(); k * p];
            gemm(T::one(), wmat, gmat, T::zero(), &mut dcols);
            col2im_add(&dcols, geom, dx);
        }
    }
}

/// Max-shifted joint softmax of `x / temperature`.
pub(crate) fn softmax_values<T: Real>(x: &[T], temperature: T) -> Vec<T> {
    let inv_t = T::one() / temperature;
    let max = x
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut out: Vec<T> = x.iter().map(|&v| ((v - max) * inv_t).exp()).collect();
    let z: f64 = out.iter().map(|v| v.f64()).sum();
    let inv_z = T::of(1.0 / z);
    out.iter_mut().for_each(|v| *v = *v * inv_z);
    out
}
