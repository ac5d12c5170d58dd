//! Layers as ordered lists of genes: convolution kernels or fully connected nodes.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernel::{derived_padding, KernelShape, Stride};
use crate::optim::Parameter;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of every freshly created connection weight.
pub const INIT_STD: f64 = 0.1;

/// Tensor of `N(0, INIT_STD)` samples.
pub fn normal_tensor<S: Scalar>(rng: &mut impl Rng, shape: &[usize]) -> Tensor<S> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    Tensor::from_fn(shape, |_| S::lit(normal.sample(rng)))
}

/// One `N(0, INIT_STD)` sample.
pub fn normal_value<S: Scalar>(rng: &mut impl Rng) -> S {
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    S::lit(normal.sample(rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    Fc,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Conv => "Conv",
            LayerKind::Fc => "FC",
        })
    }
}

/// A convolution kernel spanning the full input depth: weights `D×height×width`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernelGene<S> {
    pub weights: Parameter<S>,
    pub bias: Parameter<S>,
}

impl<S: Scalar> ConvKernelGene<S> {
    pub fn random(rng: &mut impl Rng, depth: usize, shape: KernelShape) -> Self {
        ConvKernelGene {
            weights: Parameter::new(normal_tensor(rng, &[depth, shape.height(), shape.width()])),
            bias: Parameter::new(Tensor::scalar(S::zero())),
        }
    }

    pub fn shape(&self) -> KernelShape {
        let s = self.weights.shape();
        KernelShape::new(s[2], s[1]).expect("kernel genes always hold odd extents")
    }

    pub fn depth(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.numel() + 1
    }
}

/// A fully connected unit with its full fan-in.
#[derive(Clone, Debug, PartialEq)]
pub struct FcNodeGene<S> {
    pub weights: Parameter<S>,
    pub bias: Parameter<S>,
}

impl<S: Scalar> FcNodeGene<S> {
    pub fn random(rng: &mut impl Rng, fan_in: usize) -> Self {
        FcNodeGene {
            weights: Parameter::new(normal_tensor(rng, &[fan_in])),
            bias: Parameter::new(Tensor::scalar(S::zero())),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.numel()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.numel() + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<S> {
    pub kernels: Vec<ConvKernelGene<S>>,
    pub stride: Stride,
}

impl<S: Scalar> ConvLayer<S> {
    /// `(rows, cols)` zero padding derived from the largest kernel.
    pub fn padding(&self) -> (usize, usize) {
        derived_padding(self.kernels.iter().map(ConvKernelGene::shape))
    }

    /// Largest kernel extents `(rows, cols)`.
    pub fn max_extents(&self) -> (usize, usize) {
        let (ph, pw) = self.padding();
        (2 * ph + 1, 2 * pw + 1)
    }

    /// Stacks the kernels along their central elements into one `F×D×Kh×Kw`
    /// weight tensor, returning it with a mask that is 1 on real elements and 0
    /// on padding.
    pub fn stack_kernels(&self) -> (Tensor<S>, Tensor<S>) {
        let (kh, kw) = self.max_extents();
        let depth = self.kernels[0].depth();
        let f = self.kernels.len();
        let block = depth * kh * kw;
        let mut weight = vec![S::zero(); f * block];
        let mut mask = vec![S::zero(); f * block];
        for (slot, k) in self.kernels.iter().enumerate() {
            let s = k.shape();
            let (oh, ow) = ((kh - s.height()) / 2, (kw - s.width()) / 2);
            let src = k.weights.value().data();
            for c in 0..depth {
                for i in 0..s.height() {
                    for j in 0..s.width() {
                        let dst = slot * block + (c * kh + i + oh) * kw + j + ow;
                        weight[dst] = src[(c * s.height() + i) * s.width() + j];
                        mask[dst] = S::one();
                    }
                }
            }
        }
        let shape = [f, depth, kh, kw];
        (
            Tensor::from_vec(&shape, weight).expect("stack shape"),
            Tensor::from_vec(&shape, mask).expect("stack shape"),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcLayer<S> {
    pub nodes: Vec<FcNodeGene<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<S> {
    Conv(ConvLayer<S>),
    Fc(FcLayer<S>),
}

impl<S: Scalar> Layer<S> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::Fc(_) => LayerKind::Fc,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.kernels.len(),
            Layer::Fc(f) => f.nodes.len(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.kernels.iter().map(ConvKernelGene::parameter_count).sum(),
            Layer::Fc(f) => f.nodes.iter().map(FcNodeGene::parameter_count).sum(),
        }
    }

    /// Weight connections, biases excluded.
    pub fn connection_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.kernels.iter().map(|k| k.weights.numel()).sum(),
            Layer::Fc(f) => f.nodes.iter().map(|n| n.weights.numel()).sum(),
        }
    }

    pub fn as_conv(&self) -> Option<&ConvLayer<S>> {
        match self {
            Layer::Conv(c) => Some(c),
            Layer::Fc(_) => None,
        }
    }

    pub fn as_fc(&self) -> Option<&FcLayer<S>> {
        match self {
            Layer::Fc(f) => Some(f),
            Layer::Conv(_) => None,
        }
    }

    pub(crate) fn for_each_parameter_mut(&mut self, mut f: impl FnMut(&mut Parameter<S>)) {
        match self {
            Layer::Conv(c) => c.kernels.iter_mut().for_each(|k| {
                f(&mut k.weights);
                f(&mut k.bias);
            }),
            Layer::Fc(l) => l.nodes.iter_mut().for_each(|n| {
                f(&mut n.weights);
                f(&mut n.bias);
            }),
        }
    }

    pub(crate) fn for_each_parameter(&self, mut f: impl FnMut(&Parameter<S>)) {
        match self {
            Layer::Conv(c) => c.kernels.iter().for_each(|k| {
                f(&k.weights);
                f(&k.bias);
            }),
            Layer::Fc(l) => l.nodes.iter().for_each(|n| {
                f(&n.weights);
                f(&n.bias);
            }),
        }
    }
}
