//! Reverse-mode tape. Every op appends one node; `backward` walks the nodes
//! in exact reverse order and accumulates gradients additively.

use crate::diffcore::params::{ParamId, ParamSet};
use crate::diffcore::real::matmul;
use crate::diffcore::tensor::check_axis;
use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};

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
    Relu,
    Sigmoid,
}

/// Stabilizer inside the cross-entropy logarithm.
pub const CE_EPSILON: f64 = 1e-12;

enum Op<T: Real> {
    Constant,
    Variable,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        cols: Vec<T>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2x {
        input: Var,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Softmax {
        input: Var,
    },
    CrossEntropy {
        posterior: Var,
        onehot: Vec<T>,
    },
    Mse {
        input: Var,
        target: Vec<T>,
    },
    GlobalAvgPool {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        input: Var,
    },
    /// Adds a constant tensor; the gradient passes through unchanged.
    AddConstant {
        input: Var,
    },
    GatherPixels {
        input: Var,
        pixels: Vec<[usize; 3]>,
    },
    WeightedSquaredError {
        input: Var,
        target: Vec<T>,
        weights: Vec<T>,
    },
}

impl<T: Real> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Variable => "variable",
            Op::Param(_) => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool { .. } => "pool_max",
            Op::Upsample2x { .. } => "upsample2x",
            Op::Activation { kind: Activation::Relu, .. } => "relu",
            Op::Activation { kind: Activation::Sigmoid, .. } => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse { .. } => "mse",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Linear { .. } => "linear",
            Op::ConcatChannels { .. } => "concat_channels",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Sum { .. } => "sum",
            Op::AddConstant { .. } => "add_constant",
            Op::GatherPixels { .. } => "gather_pixels",
            Op::WeightedSquaredError { .. } => "weighted_squared_error",
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    non_finite: Option<String>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), non_finite: None }
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

    pub fn take_value(&self, v: Var) -> Tensor<T> {
        self.nodes[v.0].value.clone()
    }

    /// Fails if any recorded op produced a NaN or infinity.
    pub fn ensure_finite(&self) -> Result<()> {
        match &self.non_finite {
            Some(op) => Err(Error::NonFinite(op.clone())),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(format!("{} (node {})", op.name(), self.nodes.len()));
        }
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A free leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Variable, true)
    }

    pub fn param(&mut self, set: &ParamSet<T>, id: ParamId) -> Var {
        let value = set.get(id).tensor.clone();
        self.push(value, Op::Param(id), true)
    }

    /// A parameter used as a constant (frozen network).
    pub fn frozen_param(&mut self, set: &ParamSet<T>, id: ParamId) -> Var {
        let value = set.get(id).tensor.clone();
        self.push(value, Op::Constant, false)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let x = &self.nodes[input.0].value;
        let k = &self.nodes[kernel.0].value;
        let b = &self.nodes[bias.0].value;
        let (n, c, h, w) = x.dims4(OP)?;
        let (f, kc, kh, kw) = k.dims4(OP)?;
        check_axis(OP, "C", kc, c)?;
        if b.shape() != [f] {
            return Err(Error::Dimension { op: OP, axis: "F (bias)", expected: f, actual: b.len() });
        }
        if kh > h + 2 * padding {
            return Err(Error::Dimension { op: OP, axis: "H", expected: kh, actual: h + 2 * padding });
        }
        if kw > w + 2 * padding {
            return Err(Error::Dimension { op: OP, axis: "W", expected: kw, actual: w + 2 * padding });
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let geom = ConvGeometry { c, h, w, kh, kw, stride, padding, ho, wo };
        let rows = c * kh * kw;
        let plane = ho * wo;
        let keep_cols = self.tracked(kernel);
        let mut cols_all = if keep_cols { vec![T::zero(); n * rows * plane] } else { Vec::new() };
        let mut scratch = if keep_cols { Vec::new() } else { vec![T::zero(); rows * plane] };
        let mut out = vec![T::zero(); n * f * plane];
        let xd = x.data();
        for s in 0..n {
            let cols: &mut [T] =
                if keep_cols { &mut cols_all[s * rows * plane..(s + 1) * rows * plane] } else { &mut scratch };
            im2col(&xd[s * c * h * w..(s + 1) * c * h * w], &geom, cols);
            let o = &mut out[s * f * plane..(s + 1) * f * plane];
            matmul(f, rows, plane, k.data(), false, cols, false, o, false);
            for (fi, &bv) in b.data().iter().enumerate() {
                o[fi * plane..(fi + 1) * plane].iter_mut().for_each(|v| *v += bv);
            }
        }
        let tracked = self.tracked(input) || self.tracked(kernel) || self.tracked(bias);
        let value = Tensor::new(&[n, f, ho, wo], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, stride, padding, cols: cols_all }, tracked))
    }

    pub fn pool_max(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        const OP: &str = "pool_max";
        if window == 0 || stride == 0 {
            return Err(Error::InvalidArgument("pool window and stride must be positive".into()));
        }
        let x = &self.nodes[input.0].value;
        let (n, c, h, w) = x.dims4(OP)?;
        if window > h {
            return Err(Error::Dimension { op: OP, axis: "H", expected: window, actual: h });
        }
        if window > w {
            return Err(Error::Dimension { op: OP, axis: "W", expected: window, actual: w });
        }
        let ho = (h - window) / stride + 1;
        let wo = (w - window) / stride + 1;
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride * w + ox * stride;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + (oy * stride + dy) * w + ox * stride + dx;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let tracked = self.tracked(input);
        let value = Tensor::new(&[n, c, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }, tracked))
    }

    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let x = &self.nodes[input.0].value;
        let (n, c, h, w) = x.dims4("upsample2x")?;
        let xd = x.data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for plane in 0..n * c {
            let src = &xd[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * h2 * w2..(plane + 1) * h2 * w2];
            for y in 0..h2 {
                for xo in 0..w2 {
                    dst[y * w2 + xo] = src[(y / 2) * w + xo / 2];
                }
            }
        }
        let tracked = self.tracked(input);
        let value = Tensor::new(&[n, c, h2, w2], out)?;
        Ok(self.push(value, Op::Upsample2x { input }, tracked))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let x = &self.nodes[input.0].value;
        let data = match kind {
            Activation::Relu => x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
            Activation::Sigmoid => x.data().iter().map(|&v| sigmoid(v)).collect(),
        };
        let value = Tensor::new(x.shape(), data).expect("same shape");
        let tracked = self.tracked(input);
        self.push(value, Op::Activation { input, kind }, tracked)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let x = &self.nodes[input.0].value;
        let classes = *x.shape().last().unwrap();
        if classes < 2 {
            return Err(Error::Shape { op: "softmax", detail: "needs at least 2 classes".into() });
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(classes) {
            softmax_in_place(row);
        }
        let value = Tensor::new(x.shape(), out)?;
        let tracked = self.tracked(input);
        Ok(self.push(value, Op::Softmax { input }, tracked))
    }

    /// `-Σ onehot · ln(posterior + ε)`, summed over every row.
    pub fn cross_entropy(&mut self, posterior: Var, onehot: &[T]) -> Result<Var> {
        let p = &self.nodes[posterior.0].value;
        check_axis("cross_entropy", "C", p.len(), onehot.len())?;
        let eps = T::of(CE_EPSILON);
        let loss = p.data().iter().zip(onehot).fold(T::zero(), |acc, (&pv, &y)| acc - y * (pv + eps).ln());
        let tracked = self.tracked(posterior);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { posterior, onehot: onehot.to_vec() }, tracked))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, input: Var, target: &Tensor<T>) -> Result<Var> {
        let x = &self.nodes[input.0].value;
        if x.shape() != target.shape() {
            return Err(Error::Shape {
                op: "mse",
                detail: format!("prediction {:?} vs target {:?}", x.shape(), target.shape()),
            });
        }
        let n = T::of(x.len() as f64);
        let sq = x.data().iter().zip(target.data()).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        let tracked = self.tracked(input);
        Ok(self.push(Tensor::scalar(sq / n), Op::Mse { input, target: target.data().to_vec() }, tracked))
    }

    /// `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = &self.nodes[input.0].value;
        let (n, c, h, w) = x.dims4("global_avg_pool")?;
        let plane = h * w;
        let inv = T::of(1.0 / plane as f64);
        let out = x.data().chunks(plane).map(|p| p.iter().fold(T::zero(), |a, &b| a + b) * inv).collect();
        let value = Tensor::new(&[n, c], out)?;
        let tracked = self.tracked(input);
        Ok(self.push(value, Op::GlobalAvgPool { input }, tracked))
    }

    /// `x·Wᵀ + b` with `x: [N,K]`, `W: [O,K]`, `b: [O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "linear";
        let x = &self.nodes[input.0].value;
        let wt = &self.nodes[weight.0].value;
        let b = &self.nodes[bias.0].value;
        let (n, k) = match x.shape() {
            [n, k] => (*n, *k),
            s => return Err(Error::Shape { op: OP, detail: format!("input must be [N,K], got {s:?}") }),
        };
        let (o, wk) = match wt.shape() {
            [o, wk] => (*o, *wk),
            s => return Err(Error::Shape { op: OP, detail: format!("weight must be [O,K], got {s:?}") }),
        };
        check_axis(OP, "K", wk, k)?;
        check_axis(OP, "O (bias)", o, b.len())?;
        let mut out = vec![T::zero(); n * o];
        matmul(n, k, o, x.data(), false, wt.data(), true, &mut out, false);
        for row in out.chunks_mut(o) {
            row.iter_mut().zip(b.data()).for_each(|(v, &bv)| *v += bv);
        }
        let value = Tensor::new(&[n, o], out)?;
        let tracked = self.tracked(input) || self.tracked(weight) || self.tracked(bias);
        Ok(self.push(value, Op::Linear { input, weight, bias }, tracked))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Tensor::concat_channels(&[&self.nodes[a.0].value, &self.nodes[b.0].value])?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::ConcatChannels { a, b }, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.shape() != y.shape() {
            return Err(Error::Shape { op: "add", detail: format!("{:?} vs {:?}", x.shape(), y.shape()) });
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(x.shape(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add { a, b }, tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.shape() != y.shape() {
            return Err(Error::Shape { op: "mul", detail: format!("{:?} vs {:?}", x.shape(), y.shape()) });
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let value = Tensor::new(x.shape(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul { a, b }, tracked))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.nodes[input.0].value.data().iter().fold(T::zero(), |a, &b| a + b);
        let tracked = self.tracked(input);
        self.push(Tensor::scalar(total), Op::Sum { input }, tracked)
    }

    /// Adds a constant of identical shape; used for implanting into a map.
    pub fn add_constant(&mut self, input: Var, addend: &Tensor<T>) -> Result<Var> {
        let x = &self.nodes[input.0].value;
        if x.shape() != addend.shape() {
            return Err(Error::Shape {
                op: "add_constant",
                detail: format!("{:?} vs {:?}", x.shape(), addend.shape()),
            });
        }
        let data = x.data().iter().zip(addend.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(x.shape(), data)?;
        let tracked = self.tracked(input);
        Ok(self.push(value, Op::AddConstant { input }, tracked))
    }

    /// Picks channel vectors at `(batch, row, col)` from `[N,C,H,W]`, giving `[P,C]`.
    pub fn gather_pixels(&mut self, input: Var, pixels: &[[usize; 3]]) -> Result<Var> {
        const OP: &str = "gather_pixels";
        let x = &self.nodes[input.0].value;
        let (n, c, h, w) = x.dims4(OP)?;
        if pixels.is_empty() {
            return Err(Error::InvalidArgument("gather_pixels needs at least one pixel".into()));
        }
        let mut out = Vec::with_capacity(pixels.len() * c);
        for &[b, row, col] in pixels {
            if b >= n || row >= h || col >= w {
                return Err(Error::InvalidArgument(format!("pixel ({b},{row},{col}) outside [{n},{c},{h},{w}]")));
            }
            for ch in 0..c {
                out.push(x.data()[((b * c + ch) * h + row) * w + col]);
            }
        }
        let value = Tensor::new(&[pixels.len(), c], out)?;
        let tracked = self.tracked(input);
        Ok(self.push(value, Op::GatherPixels { input, pixels: pixels.to_vec() }, tracked))
    }

    /// `Σ_p weight_p · ‖x_p − target_p‖²` over rows of `x: [P,C]`.
    pub fn weighted_squared_error(&mut self, input: Var, target: &[T], weights: &[T]) -> Result<Var> {
        const OP: &str = "weighted_squared_error";
        let x = &self.nodes[input.0].value;
        let (p, c) = match x.shape() {
            [p, c] => (*p, *c),
            s => return Err(Error::Shape { op: OP, detail: format!("expected [P,C], got {s:?}") }),
        };
        check_axis(OP, "P·C (target)", p * c, target.len())?;
        check_axis(OP, "P (weights)", p, weights.len())?;
        let mut total = T::zero();
        for (i, row) in x.data().chunks(c).enumerate() {
            let sq = row.iter().zip(&target[i * c..(i + 1) * c]).fold(T::zero(), |a, (&u, &t)| a + (u - t) * (u - t));
            total += weights[i] * sq;
        }
        let tracked = self.tracked(input);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSquaredError { input, target: target.to_vec(), weights: weights.to_vec() },
            tracked,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.ensure_finite()?;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.nodes[loss.0].value.shape()),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.tracked {
                self.backward_node(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds every parameter gradient into its [`ParamSet`] buffer.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, set: &mut ParamSet<T>) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = grads.get(Var(i)) {
                    set.get_mut(id).tensor.accumulate_grad(g);
                }
            }
        }
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let v = |var: Var| &self.nodes[var.0].value;
        match &node.op {
            Op::Constant | Op::Variable | Op::Param(_) => {}
            Op::Conv2d { input, kernel, bias, stride, padding, cols } => {
                let x = v(*input);
                let k = v(*kernel);
                let (n, c, h, w) = x.dims4("conv2d").unwrap();
                let (f, _, kh, kw) = k.dims4("conv2d").unwrap();
                let (_, _, ho, wo) = node.value.dims4("conv2d").unwrap();
                let geom = ConvGeometry { c, h, w, kh, kw, stride: *stride, padding: *padding, ho, wo };
                let rows = c * kh * kw;
                let plane = ho * wo;
                if self.tracked(*bias) {
                    let mut gb = vec![T::zero(); f];
                    for s in 0..n {
                        for (fi, acc) in gb.iter_mut().enumerate() {
                            let off = (s * f + fi) * plane;
                            *acc += g[off..off + plane].iter().fold(T::zero(), |a, &b| a + b);
                        }
                    }
                    accumulate(grads, *bias, &gb);
                }
                if self.tracked(*kernel) {
                    let mut gk = vec![T::zero(); f * rows];
                    for s in 0..n {
                        let go = &g[s * f * plane..(s + 1) * f * plane];
                        let cs = &cols[s * rows * plane..(s + 1) * rows * plane];
                        matmul(f, plane, rows, go, false, cs, true, &mut gk, true);
                    }
                    accumulate(grads, *kernel, &gk);
                }
                if self.tracked(*input) {
                    let mut gx = vec![T::zero(); n * c * h * w];
                    let mut gcols = vec![T::zero(); rows * plane];
                    for s in 0..n {
                        let go = &g[s * f * plane..(s + 1) * f * plane];
                        matmul(rows, f, plane, k.data(), true, go, false, &mut gcols, false);
                        col2im(&gcols, &geom, &mut gx[s * c * h * w..(s + 1) * c * h * w]);
                    }
                    accumulate(grads, *input, &gx);
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut gx = vec![T::zero(); v(*input).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src] += gv;
                }
                accumulate(grads, *input, &gx);
            }
            Op::Upsample2x { input } => {
                let (n, c, h, w) = v(*input).dims4("upsample2x").unwrap();
                let w2 = 2 * w;
                let mut gx = vec![T::zero(); n * c * h * w];
                for plane in 0..n * c {
                    let src = &g[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                    for (y2, row) in src.chunks(w2).enumerate() {
                        for (x2, &gv) in row.iter().enumerate() {
                            dst[(y2 / 2) * w + x2 / 2] += gv;
                        }
                    }
                }
                accumulate(grads, *input, &gx);
            }
            Op::Activation { input, kind } => {
                let gx: Vec<T> = match kind {
                    Activation::Relu => v(*input)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() })
                        .collect(),
                    Activation::Sigmoid => {
                        node.value.data().iter().zip(g).map(|(&s, &gv)| gv * s * (T::one() - s)).collect()
                    }
                };
                accumulate(grads, *input, &gx);
            }
            Op::Softmax { input } => {
                let classes = *node.value.shape().last().unwrap();
                let mut gx = Vec::with_capacity(g.len());
                for (p, gr) in node.value.data().chunks(classes).zip(g.chunks(classes)) {
                    let dot = p.iter().zip(gr).fold(T::zero(), |a, (&pi, &gi)| a + pi * gi);
                    gx.extend(p.iter().zip(gr).map(|(&pi, &gi)| pi * (gi - dot)));
                }
                accumulate(grads, *input, &gx);
            }
            Op::CrossEntropy { posterior, onehot } => {
                let eps = T::of(CE_EPSILON);
                let gx: Vec<T> =
                    v(*posterior).data().iter().zip(onehot).map(|(&p, &y)| -g[0] * y / (p + eps)).collect();
                accumulate(grads, *posterior, &gx);
            }
            Op::Mse { input, target } => {
                let x = v(*input);
                let scale = g[0] * T::of(2.0 / x.len() as f64);
                let gx: Vec<T> = x.data().iter().zip(target).map(|(&a, &b)| scale * (a - b)).collect();
                accumulate(grads, *input, &gx);
            }
            Op::GlobalAvgPool { input } => {
                let (_, _, h, w) = v(*input).dims4("global_avg_pool").unwrap();
                let plane = h * w;
                let inv = T::of(1.0 / plane as f64);
                let gx: Vec<T> = g.iter().flat_map(|&gv| std::iter::repeat(gv * inv).take(plane)).collect();
                accumulate(grads, *input, &gx);
            }
            Op::Linear { input, weight, bias } => {
                let x = v(*input);
                let wt = v(*weight);
                let (n, k) = (x.shape()[0], x.shape()[1]);
                let o = wt.shape()[0];
                if self.tracked(*input) {
                    let mut gx = vec![T::zero(); n * k];
                    matmul(n, o, k, g, false, wt.data(), false, &mut gx, false);
                    accumulate(grads, *input, &gx);
                }
                if self.tracked(*weight) {
                    let mut gw = vec![T::zero(); o * k];
                    matmul(o, n, k, g, true, x.data(), false, &mut gw, false);
                    accumulate(grads, *weight, &gw);
                }
                if self.tracked(*bias) {
                    let mut gb = vec![T::zero(); o];
                    for row in g.chunks(o) {
                        gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    accumulate(grads, *bias, &gb);
                }
            }
            Op::ConcatChannels { a, b } => {
                let (n, ca, h, w) = v(*a).dims4("concat_channels").unwrap();
                let cb = v(*b).shape()[1];
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for s in 0..n {
                    let base = s * (ca + cb) * plane;
                    ga.extend_from_slice(&g[base..base + ca * plane]);
                    gb.extend_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
                }
                if self.tracked(*a) {
                    accumulate(grads, *a, &ga);
                }
                if self.tracked(*b) {
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Add { a, b } => {
                if self.tracked(*a) {
                    accumulate(grads, *a, g);
                }
                if self.tracked(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::Mul { a, b } => {
                if self.tracked(*a) {
                    let ga: Vec<T> = v(*b).data().iter().zip(g).map(|(&y, &gv)| y * gv).collect();
                    accumulate(grads, *a, &ga);
                }
                if self.tracked(*b) {
                    let gb: Vec<T> = v(*a).data().iter().zip(g).map(|(&x, &gv)| x * gv).collect();
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Sum { input } => {
                let gx = vec![g[0]; v(*input).len()];
                accumulate(grads, *input, &gx);
            }
            Op::AddConstant { input } => accumulate(grads, *input, g),
            Op::GatherPixels { input, pixels } => {
                let x = v(*input);
                let (_, c, h, w) = x.dims4("gather_pixels").unwrap();
                let mut gx = vec![T::zero(); x.len()];
                for (i, &[b, row, col]) in pixels.iter().enumerate() {
                    for ch in 0..c {
                        gx[((b * c + ch) * h + row) * w + col] += g[i * c + ch];
                    }
                }
                accumulate(grads, *input, &gx);
            }
            Op::WeightedSquaredError { input, target, weights } => {
                let x = v(*input);
                let c = x.shape()[1];
                let two = T::of(2.0);
                let gx: Vec<T> = x
                    .data()
                    .iter()
                    .zip(target)
                    .enumerate()
                    .map(|(i, (&u, &t))| g[0] * two * weights[i / c] * (u - t))
                    .collect();
                accumulate(grads, *input, &gx);
            }
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
    match &mut grads[v.0] {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-subtracted softmax over one row.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

fn im2col<T: Real>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let plane = g.ho * g.wo;
    for ch in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ch * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(ch * g.h + iy as usize) * g.w..(ch * g.h + iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *o = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeometry, gx: &mut [T]) {
    let plane = g.ho * g.wo;
    for ch in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ch * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_base = (ch * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            gx[dst_base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}
