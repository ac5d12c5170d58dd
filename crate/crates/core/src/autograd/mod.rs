//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive in forward order; [`Tape::backward`]
//! replays the record in exact reverse order and returns the gradient of a
//! scalar loss with respect to every node that requires one. A tape can be
//! replayed only once.

pub mod kernels;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use kernels::{col2im, conv_out_extent, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeometry};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    Scale {
        input: Var,
        factor: S,
    },
    StackCentered {
        inputs: Vec<Var>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<S>,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    grad_enabled: bool,
    replayed: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
            replayed: false,
        }
    }

    /// A tape that records values only; nothing on it requires a gradient.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        let requires_grad = self.grad_enabled;
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        self.grad_enabled && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// 2-D convolution of `input[N×D×H×W]` with `weight[F×D×Kh×Kw]` plus `bias[F]`,
    /// zero padding `padding` and step `stride` (both `(rows, cols)`).
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let xs = self.value(input).shape();
        let ws = self.value(weight).shape();
        let bs = self.value(bias).shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::structural(format!(
                "conv2d expects 4-D input and weight, got {xs:?} and {ws:?}"
            )));
        }
        if xs[1] != ws[1] {
            return Err(Error::structural(format!(
                "conv2d depth mismatch: input has {} channels, kernels span {}",
                xs[1], ws[1]
            )));
        }
        if bs != [ws[0]] {
            return Err(Error::structural(format!(
                "conv2d bias shape {bs:?} does not match {} filters",
                ws[0]
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::structural("conv2d stride must be at least 1"));
        }
        if ws[2] > xs[2] + 2 * padding.0 || ws[3] > xs[3] + 2 * padding.1 {
            return Err(Error::structural(format!(
                "kernel {}×{} larger than padded input {}×{}",
                ws[2],
                ws[3],
                xs[2] + 2 * padding.0,
                xs[3] + 2 * padding.1
            )));
        }
        let geom = ConvGeometry {
            batch: xs[0],
            in_channels: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            filters: ws[0],
            kernel_h: ws[2],
            kernel_w: ws[3],
            stride_h: stride.0,
            stride_w: stride.1,
            pad_h: padding.0,
            pad_w: padding.1,
            out_h: conv_out_extent(xs[2], ws[2], stride.0, padding.0),
            out_w: conv_out_extent(xs[3], ws[3], stride.1, padding.1),
        };

        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let (k, p, f) = (geom.patch_len(), geom.out_area(), geom.filters);
        let mut out = vec![S::zero(); geom.batch * f * p];
        let mut cols = vec![S::zero(); k * p];
        for n in 0..geom.batch {
            im2col(&geom, &x[n * geom.in_len()..(n + 1) * geom.in_len()], &mut cols);
            let out_n = &mut out[n * f * p..(n + 1) * f * p];
            for (fi, &bias_f) in b.iter().enumerate() {
                out_n[fi * p..(fi + 1) * p].iter_mut().for_each(|v| *v = bias_f);
            }
            gemm_nn(f, p, k, w, &cols, out_n);
        }
        let value = Tensor::from_vec(&[geom.batch, f, geom.out_h, geom.out_w], out)?;
        let rg = self.needs_grad(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Affine map `input[N×I] · weight[O×I]ᵀ + bias[O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.value(input).shape();
        let ws = self.value(weight).shape();
        let bs = self.value(bias).shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(Error::structural(format!(
                "linear: incompatible shapes input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        let b = self.value(bias).data();
        let mut out: Vec<S> = (0..n).flat_map(|_| b.iter().copied()).collect();
        gemm_nt(
            n,
            o,
            i,
            self.value(input).data(),
            self.value(weight).data(),
            &mut out,
        );
        let value = Tensor::from_vec(&[n, o], out)?;
        let rg = self.needs_grad(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| if x > S::zero() { x } else { S::zero() });
        let rg = self.needs_grad(&[input]);
        self.push(value, Op::Relu { input }, rg)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let rg = self.needs_grad(&[input]);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: S) -> Var {
        let value = self.value(input).map(|x| x * factor);
        let rg = self.needs_grad(&[input]);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    /// Stacks same-rank tensors along a new leading axis, zero-padding each one
    /// symmetrically to the per-axis maximum so that central elements coincide.
    ///
    /// Every extent difference must be even (odd kernels, or equal extents).
    pub fn stack_centered(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::structural("stack_centered needs at least one input"))?;
        let rank = self.value(*first).ndim();
        if rank > 3 {
            return Err(Error::structural("stack_centered supports rank ≤ 3 inputs"));
        }
        let mut max = [1usize; 3];
        for v in inputs {
            let s = self.value(*v).shape();
            if s.len() != rank {
                return Err(Error::structural("stack_centered: rank mismatch"));
            }
            for (m, &e) in max[3 - rank..].iter_mut().zip(s) {
                *m = (*m).max(e);
            }
        }
        let dims3 = |s: &[usize]| {
            let mut d = [1usize; 3];
            d[3 - s.len()..].copy_from_slice(s);
            d
        };
        for v in inputs {
            let d = dims3(self.value(*v).shape());
            if d.iter().zip(&max).any(|(&e, &m)| (m - e) % 2 != 0) {
                return Err(Error::structural(
                    "stack_centered: extents cannot share a central element",
                ));
            }
        }
        let block = max[0] * max[1] * max[2];
        let mut out = vec![S::zero(); inputs.len() * block];
        for (slot, v) in inputs.iter().enumerate() {
            let t = self.value(*v);
            let d = dims3(t.shape());
            let off = [(max[0] - d[0]) / 2, (max[1] - d[1]) / 2, (max[2] - d[2]) / 2];
            let dst = &mut out[slot * block..(slot + 1) * block];
            for a in 0..d[0] {
                for b in 0..d[1] {
                    let src_row = &t.data()[(a * d[1] + b) * d[2]..(a * d[1] + b + 1) * d[2]];
                    let start = ((a + off[0]) * max[1] + (b + off[1])) * max[2] + off[2];
                    dst[start..start + d[2]].copy_from_slice(src_row);
                }
            }
        }
        let mut shape = vec![inputs.len()];
        shape.extend_from_slice(&max[3 - rank..]);
        let value = Tensor::from_vec(&shape, out)?;
        let rg = self.needs_grad(inputs);
        Ok(self.push(
            value,
            Op::StackCentered {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy of `logits[N×C]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.value(logits).shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::structural(format!(
                "softmax_cross_entropy: logits {shape:?} vs {} labels",
                labels.len()
            )));
        }
        let (n, c) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::input(format!("label {bad} out of range for {c} classes")));
        }
        let data = self.value(logits).data();
        let mut probs = vec![S::zero(); n * c];
        let mut total = S::zero();
        for (row, &label) in labels.iter().enumerate() {
            let z = &data[row * c..(row + 1) * c];
            let max = z.iter().copied().fold(S::neg_infinity(), S::max);
            let p = &mut probs[row * c..(row + 1) * c];
            let mut sum = S::zero();
            for (pj, &zj) in p.iter_mut().zip(z) {
                *pj = (zj - max).exp();
                sum += *pj;
            }
            p.iter_mut().for_each(|pj| *pj /= sum);
            // -log softmax = log Σ exp(z - max) - (z_label - max)
            total += sum.ln() - (z[label] - max);
        }
        let loss = total / S::lit(n as f64);
        let rg = self.needs_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Replays the tape backwards from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<S>> {
        if self.replayed {
            return Err(Error::Usage("backward already ran on this tape".into()));
        }
        if !self.grad_enabled {
            return Err(Error::Usage("backward on an inference tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.replayed = true;

        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), S::one()));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backprop_node(idx, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], var: Var, g: Tensor<S>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn backprop_node(&self, idx: usize, up: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let g = geom;
                let (k, p, f) = (g.patch_len(), g.out_area(), g.filters);
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                let dy = up.data();
                if self.wants(*bias) {
                    let mut db = vec![S::zero(); f];
                    for n in 0..g.batch {
                        for (fi, d) in db.iter_mut().enumerate() {
                            let base = (n * f + fi) * p;
                            *d += dy[base..base + p].iter().copied().sum::<S>();
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::from_vec(&[f], db).unwrap());
                }
                let want_w = self.wants(*weight);
                let want_x = self.wants(*input);
                if want_w || want_x {
                    let mut dw = vec![S::zero(); if want_w { f * k } else { 0 }];
                    let mut dx = vec![S::zero(); if want_x { g.batch * g.in_len() } else { 0 }];
                    let mut cols = vec![S::zero(); k * p];
                    let mut dcols = vec![S::zero(); k * p];
                    for n in 0..g.batch {
                        let dy_n = &dy[n * f * p..(n + 1) * f * p];
                        if want_w {
                            im2col(g, &x[n * g.in_len()..(n + 1) * g.in_len()], &mut cols);
                            gemm_nt(f, k, p, dy_n, &cols, &mut dw);
                        }
                        if want_x {
                            dcols.iter_mut().for_each(|v| *v = S::zero());
                            gemm_tn(k, p, f, w, dy_n, &mut dcols);
                            col2im(g, &dcols, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
                        }
                    }
                    if want_w {
                        let shape = self.value(*weight).shape().to_vec();
                        self.accumulate(grads, *weight, Tensor::from_vec(&shape, dw).unwrap());
                    }
                    if want_x {
                        let shape = self.value(*input).shape().to_vec();
                        self.accumulate(grads, *input, Tensor::from_vec(&shape, dx).unwrap());
                    }
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let xs = self.value(*input).shape();
                let (n, i) = (xs[0], xs[1]);
                let o = self.value(*weight).shape()[0];
                let dy = up.data();
                if self.wants(*bias) {
                    let mut db = vec![S::zero(); o];
                    for row in dy.chunks_exact(o) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::from_vec(&[o], db).unwrap());
                }
                if self.wants(*weight) {
                    let mut dw = vec![S::zero(); o * i];
                    gemm_tn(o, i, n, dy, self.value(*input).data(), &mut dw);
                    self.accumulate(grads, *weight, Tensor::from_vec(&[o, i], dw).unwrap());
                }
                if self.wants(*input) {
                    let mut dx = vec![S::zero(); n * i];
                    gemm_nn(n, i, o, dy, self.value(*weight).data(), &mut dx);
                    self.accumulate(grads, *input, Tensor::from_vec(&[n, i], dx).unwrap());
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                let g = Tensor::from_vec(
                    x.shape(),
                    x.data()
                        .iter()
                        .zip(up.data())
                        .map(|(&xv, &gv)| if xv > S::zero() { gv } else { S::zero() })
                        .collect(),
                )
                .unwrap();
                self.accumulate(grads, *input, g);
            }
            Op::Reshape { input } => {
                let shape = self.value(*input).shape().to_vec();
                self.accumulate(grads, *input, up.clone().reshape(&shape).unwrap());
            }
            Op::Scale { input, factor } => {
                self.accumulate(grads, *input, up.map(|g| g * *factor));
            }
            Op::StackCentered { inputs } => {
                let out_shape = up.shape();
                let rank = out_shape.len() - 1;
                let mut max = [1usize; 3];
                max[3 - rank..].copy_from_slice(&out_shape[1..]);
                let block = max[0] * max[1] * max[2];
                for (slot, v) in inputs.iter().enumerate() {
                    if !self.wants(*v) {
                        continue;
                    }
                    let shape = self.value(*v).shape().to_vec();
                    let mut d = [1usize; 3];
                    d[3 - rank..].copy_from_slice(&shape);
                    let off = [(max[0] - d[0]) / 2, (max[1] - d[1]) / 2, (max[2] - d[2]) / 2];
                    let src = &up.data()[slot * block..(slot + 1) * block];
                    let mut g = Vec::with_capacity(d[0] * d[1] * d[2]);
                    for a in 0..d[0] {
                        for b in 0..d[1] {
                            let start = ((a + off[0]) * max[1] + (b + off[1])) * max[2] + off[2];
                            g.extend_from_slice(&src[start..start + d[2]]);
                        }
                    }
                    self.accumulate(grads, *v, Tensor::from_vec(&shape, g).unwrap());
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.value(*logits).shape()[1];
                let n = labels.len();
                let scale = up.data()[0] / S::lit(n as f64);
                let mut g = probs.clone();
                for (row, &label) in labels.iter().enumerate() {
                    g[row * c + label] -= S::one();
                }
                g.iter_mut().for_each(|v| *v *= scale);
                let shape = [n, c];
                self.accumulate(grads, *logits, Tensor::from_vec(&shape, g).unwrap());
            }
        }
    }
}

/// Gradients produced by one [`Tape::backward`] call, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to `var`; `None` if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor<S>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}
