//! Evolutionary operators: shape sampling, calibration, mutation, crossover
//! and culling. Every stochastic operator takes its RNG explicitly.

mod calibrate;
mod crossover;
mod cull;
mod mutation;
mod refit;
mod sampling;

pub use calibrate::{calibrate, logistic, relative_scores, CalibrationStats};
pub use crossover::{crossover, CrossoverReport};
pub use cull::{cull, cull_weight, CullReport};
pub use mutation::{
    mutate, mutate_structure, mutation_weights, FailureReason, MutationClass, MutationKind,
    MutationOutcome, MutationWeights,
};
pub use refit::kernel_caps_ok;
pub use sampling::{shape_weight, stride_weight, ShapeDistribution, StrideDistribution};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

/// Index drawn with probability proportional to `weights`; `None` when no
/// weight is positive.
pub(crate) fn weighted_choice(weights: &[f64], rng: &mut impl Rng) -> Option<usize> {
    WeightedIndex::new(weights).ok().map(|d| d.sample(rng))
}
