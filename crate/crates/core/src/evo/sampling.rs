use rand::Rng;

use super::weighted_choice;
use crate::model::{kernel_extent_cap, stride_cap, KernelShape, Stride};

/// Largest per-dimension extent offered when sampling a fresh kernel.
const MAX_SAMPLED_EXTENT: usize = 7;
/// Largest per-dimension stride offered when sampling a fresh layer.
const MAX_SAMPLED_STRIDE: usize = 3;

/// Unnormalised sampling weight `exp(−width·height)`.
pub fn shape_weight(shape: KernelShape) -> f64 {
    (-(shape.area() as f64)).exp()
}

/// Unnormalised sampling weight `exp(−Sh·Sw)`.
pub fn stride_weight(stride: Stride) -> f64 {
    (-(stride.area() as f64)).exp()
}

fn normalized(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Kernel shapes favouring small areas.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeDistribution {
    candidates: Vec<KernelShape>,
    weights: Vec<f64>,
}

impl ShapeDistribution {
    pub fn new(candidates: Vec<KernelShape>) -> Self {
        assert!(!candidates.is_empty(), "shape distribution needs a candidate");
        let weights = candidates.iter().map(|&s| shape_weight(s)).collect();
        ShapeDistribution { candidates, weights }
    }

    /// Every odd shape allowed on an input of the given extents.
    pub fn for_input(height: usize, width: usize) -> Self {
        let odd = |cap: usize| (1..=cap.min(MAX_SAMPLED_EXTENT)).step_by(2).collect::<Vec<_>>();
        let hs = odd(kernel_extent_cap(height));
        let ws = odd(kernel_extent_cap(width));
        let candidates = hs
            .iter()
            .flat_map(|&h| ws.iter().map(move |&w| KernelShape::new(w, h).expect("odd extents")))
            .collect();
        Self::new(candidates)
    }

    pub fn candidates(&self) -> &[KernelShape] {
        &self.candidates
    }

    pub fn probabilities(&self) -> Vec<f64> {
        normalized(&self.weights)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> KernelShape {
        self.candidates[weighted_choice(&self.weights, rng).expect("positive weights")]
    }
}

/// Strides favouring small steps.
#[derive(Clone, Debug, PartialEq)]
pub struct StrideDistribution {
    candidates: Vec<Stride>,
    weights: Vec<f64>,
}

impl StrideDistribution {
    pub fn for_input(height: usize, width: usize) -> Self {
        let range = |e: usize| 1..=stride_cap(e).min(MAX_SAMPLED_STRIDE);
        let candidates: Vec<Stride> = range(height)
            .flat_map(|h| range(width).map(move |w| Stride::new(h, w).expect("positive stride")))
            .collect();
        let weights = candidates.iter().map(|&s| stride_weight(s)).collect();
        StrideDistribution { candidates, weights }
    }

    pub fn candidates(&self) -> &[Stride] {
        &self.candidates
    }

    pub fn probabilities(&self) -> Vec<f64> {
        normalized(&self.weights)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Stride {
        self.candidates[weighted_choice(&self.weights, rng).expect("positive weights")]
    }
}
