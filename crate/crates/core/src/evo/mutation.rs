use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::refit::{kernel_caps_ok, refit_from, resize_centered, Draws};
use super::sampling::{ShapeDistribution, StrideDistribution};
use super::weighted_choice;
use crate::genome::{GenomeKey, NetworkStats, SpeciesRegistry};
use crate::model::{
    kernel_extent_cap, stride_cap, ConvKernelGene, ConvLayer, Dim, FcLayer, FcNodeGene,
    FeatureShape, Layer, LayerKind, Network,
};
use crate::scalar::Scalar;

/// Attempts at finding an applicable edit before reporting failure.
const MAX_ATTEMPTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutationKind {
    AddLayer,
    RemoveLayer,
    AddNode,
    RemoveNode,
    ResizeStride,
    ResizeKernel,
}

impl fmt::Display for MutationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Mutation kinds sharing one probability weight; add/remove and grow/shrink
/// directions are chosen afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutationClass {
    Layer,
    Node,
    Stride,
    Kernel,
}

impl MutationClass {
    pub const ALL: [MutationClass; 4] =
        [MutationClass::Layer, MutationClass::Node, MutationClass::Stride, MutationClass::Kernel];
}

/// Unnormalised weights, each inversely proportional to the number of
/// connections its mutation is expected to disturb.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationWeights {
    pub layer: f64,
    pub node: f64,
    pub stride: f64,
    pub kernel: f64,
}

impl MutationWeights {
    pub fn get(&self, class: MutationClass) -> f64 {
        match class {
            MutationClass::Layer => self.layer,
            MutationClass::Node => self.node,
            MutationClass::Stride => self.stride,
            MutationClass::Kernel => self.kernel,
        }
    }

    /// Probabilities in `MutationClass::ALL` order, or `None` if every weight is zero.
    pub fn normalized(&self) -> Option<[f64; 4]> {
        let w = MutationClass::ALL.map(|c| self.get(c));
        let total: f64 = w.iter().sum();
        (total > 0.0).then(|| w.map(|x| x / total))
    }
}

fn inverse(denominator: f64) -> f64 {
    if denominator.is_finite() && denominator > 0.0 {
        1.0 / denominator
    } else {
        0.0
    }
}

pub fn mutation_weights(stats: &NetworkStats) -> MutationWeights {
    MutationWeights {
        layer: inverse(stats.mean_connections * (stats.mean_nodes + stats.std_nodes)),
        node: inverse(stats.mean_connections),
        stride: inverse(stats.conv_layers as f64 * stats.mean_conv_outputs),
        kernel: inverse(stats.nodes_per_layer * stats.mean_kernel_area),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    /// The edit produced a novel genome and no species slot was free.
    SpeciesCap,
    /// No sampled edit could be applied to this network.
    NoLegalEdit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutationOutcome {
    Applied(MutationKind),
    Failed(FailureReason),
}

/// Applies one structural mutation and keeps the network's species membership
/// in step with its genome key. A novel key with the registry full reverts the
/// edit and reports [`FailureReason::SpeciesCap`].
pub fn mutate<S: Scalar>(
    net: &mut Network<S>,
    registry: Option<&mut SpeciesRegistry>,
    rng: &mut impl Rng,
) -> MutationOutcome {
    let snapshot = net.layers().to_vec();
    let old_key = GenomeKey::of(net);
    let Some(kind) = mutate_structure(net, rng) else {
        return MutationOutcome::Failed(FailureReason::NoLegalEdit);
    };
    if let Some(registry) = registry {
        let key = GenomeKey::of(net);
        if key != old_key || net.species.is_none() {
            if !registry.admits(&key) {
                *net.layers_mut() = snapshot;
                return MutationOutcome::Failed(FailureReason::SpeciesCap);
            }
            if let Some(old) = net.species {
                registry.leave(net.id(), old);
            }
            net.species = registry.join(net.id(), &key);
        }
    }
    MutationOutcome::Applied(kind)
}

/// Samples and applies one structural edit, ignoring species. The network is
/// left untouched when `None` is returned.
pub fn mutate_structure<S: Scalar>(net: &mut Network<S>, rng: &mut impl Rng) -> Option<MutationKind> {
    for _ in 0..MAX_ATTEMPTS {
        let weights = mutation_weights(&NetworkStats::of(net));
        let hidden = net.layers().len() > 1;
        let w: Vec<f64> = MutationClass::ALL
            .iter()
            .map(|&c| if c == MutationClass::Node && !hidden { 0.0 } else { weights.get(c) })
            .collect();
        let class = MutationClass::ALL[weighted_choice(&w, rng)?];
        let grow = rng.random_bool(0.5);
        let snapshot = net.layers().to_vec();
        let mut log = Vec::new();
        let applied = apply(net, class, grow, rng, &mut log)
            .or_else(|| apply(net, class, !grow, rng, &mut log));
        if let Some(kind) = applied {
            if net.validate().is_ok() && kernel_caps_ok(net.layers(), net.input_shape()) {
                return Some(kind);
            }
            *net.layers_mut() = snapshot;
        }
    }
    None
}

fn apply<S: Scalar, R: Rng>(
    net: &mut Network<S>,
    class: MutationClass,
    grow: bool,
    rng: &mut R,
    log: &mut Vec<f64>,
) -> Option<MutationKind> {
    let mut draws = Draws::new(rng, log);
    match (class, grow) {
        (MutationClass::Layer, true) => add_layer(net, &mut draws),
        (MutationClass::Layer, false) => remove_layer(net, &mut draws),
        (MutationClass::Node, true) => add_node(net, &mut draws),
        (MutationClass::Node, false) => remove_node(net, &mut draws),
        (MutationClass::Stride, _) => resize_stride(net, grow, &mut draws),
        (MutationClass::Kernel, _) => resize_kernel(net, grow, &mut draws),
    }
}

fn spatial(shape: FeatureShape) -> crate::data::ImageShape {
    shape.spatial().expect("convolutions read spatial inputs")
}

fn first_fc<S: Scalar>(layers: &[Layer<S>]) -> usize {
    layers.iter().position(|l| l.kind() == LayerKind::Fc).expect("output layer is dense")
}

/// Picks a slot uniformly over every legal `(position, kind)` insertion.
fn add_layer<S: Scalar, R: Rng>(net: &mut Network<S>, d: &mut Draws<'_, R>) -> Option<MutationKind> {
    let input = net.input_shape();
    let shapes = net.feature_shapes();
    let layers = net.layers_mut();
    let fc0 = first_fc(layers);
    let conv_slots = fc0 + 1;
    let fc_slots = layers.len() - fc0;
    let pick = d.rng().random_range(0..conv_slots + fc_slots);
    let (pos, layer) = if pick < conv_slots {
        let s = spatial(shapes[pick]);
        let shape = ShapeDistribution::for_input(s.height, s.width).sample(d.rng());
        let stride = StrideDistribution::for_input(s.height, s.width).sample(d.rng());
        let kernel = ConvKernelGene::random(d.rng(), s.channels, shape);
        (pick, Layer::Conv(ConvLayer { kernels: vec![kernel], stride }))
    } else {
        let pos = fc0 + pick - conv_slots;
        let below = match pos.checked_sub(1).map(|i| &layers[i]) {
            Some(Layer::Fc(fc)) => fc.nodes.len(),
            _ => shapes[pos].len(),
        };
        let above = layers[pos].node_count();
        let width = ((below as f64 * above as f64).sqrt().round() as usize).max(1);
        let fan_in = shapes[pos].len();
        let nodes = (0..width).map(|_| FcNodeGene::random(d.rng(), fan_in)).collect();
        (pos, Layer::Fc(FcLayer { nodes }))
    };
    layers.insert(pos, layer);
    refit_from(layers, input, pos + 1, shapes[pos], None, d);
    Some(MutationKind::AddLayer)
}

fn remove_layer<S: Scalar, R: Rng>(net: &mut Network<S>, d: &mut Draws<'_, R>) -> Option<MutationKind> {
    let input = net.input_shape();
    let shapes = net.feature_shapes();
    let layers = net.layers_mut();
    if layers.len() < 2 {
        return None;
    }
    let i = d.rng().random_range(0..layers.len() - 1);
    layers.remove(i);
    refit_from(layers, input, i, shapes[i + 1], None, d);
    Some(MutationKind::RemoveLayer)
}

fn add_node<S: Scalar, R: Rng>(net: &mut Network<S>, d: &mut Draws<'_, R>) -> Option<MutationKind> {
    let input = net.input_shape();
    let shapes = net.feature_shapes();
    let layers = net.layers_mut();
    if layers.len() < 2 {
        return None;
    }
    let i = d.rng().random_range(0..layers.len() - 1);
    match &mut layers[i] {
        Layer::Conv(conv) => {
            let s = spatial(shapes[i]);
            let shape = ShapeDistribution::for_input(s.height, s.width).sample(d.rng());
            conv.kernels.push(ConvKernelGene::random(d.rng(), s.channels, shape));
        }
        Layer::Fc(fc) => fc.nodes.push(FcNodeGene::random(d.rng(), shapes[i].len())),
    }
    refit_from(layers, input, i + 1, shapes[i + 1], None, d);
    Some(MutationKind::AddNode)
}

fn remove_node<S: Scalar, R: Rng>(net: &mut Network<S>, d: &mut Draws<'_, R>) -> Option<MutationKind> {
    let input = net.input_shape();
    let shapes = net.feature_shapes();
    let layers = net.layers_mut();
    let hidden = layers.len().saturating_sub(1);
    let candidates: Vec<usize> = (0..hidden).filter(|&i| layers[i].node_count() >= 2).collect();
    if candidates.is_empty() {
        return None;
    }
    let i = candidates[d.rng().random_range(0..candidates.len())];
    let n = layers[i].node_count();
    let r = d.rng().random_range(0..n);
    match &mut layers[i] {
        Layer::Conv(conv) => drop(conv.kernels.remove(r)),
        Layer::Fc(fc) => drop(fc.nodes.remove(r)),
    }
    let map = (0..n - 1).map(|c| Some(if c < r { c } else { c + 1 })).collect();
    refit_from(layers, input, i + 1, shapes[i + 1], Some(map), d);
    Some(MutationKind::RemoveNode)
}

fn pick_dim<R: Rng>(d: &mut Draws<'_, R>) -> Dim {
    Dim::BOTH[d.rng().random_range(0..2)]
}

fn extent(s: crate::data::ImageShape, dim: Dim) -> usize {
    match dim {
        Dim::Height => s.height,
        Dim::Width => s.width,
    }
}

/// One dimension of one kernel grows or shrinks by 2, keeping its centre.
fn resize_kernel<S: Scalar, R: Rng>(
    net: &mut Network<S>,
    grow: bool,
    d: &mut Draws<'_, R>,
) -> Option<MutationKind> {
    let input = net.input_shape();
    let shapes = net.feature_shapes();
    let layers = net.layers_mut();
    let all: Vec<(usize, usize)> = layers
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.as_conv().map(|c| (i, c.kernels.len())))
        .flat_map(|(i, n)| (0..n).map(move |k| (i, k)))
        .collect();
    if all.is_empty() {
        return None;
    }
    let (i, k) = all[d.rng().random_range(0..all.len())];
    let dim = pick_dim(d);
    let cap = kernel_extent_cap(extent(spatial(shapes[i]), dim));
    let Layer::Conv(conv) = &mut layers[i] else { unreachable!() };
    let gene = &mut conv.kernels[k];
    let e = gene.shape().extent(dim);
    let can_grow = e + 2 <= cap;
    let can_shrink = e >= 3;
    let grow = match (grow, can_grow, can_shrink) {
        (true, true, _) | (false, true, false) => true,
        (false, _, true) | (true, false, true) => false,
        _ => return None,
    };
    let target = if grow { e + 2 } else { e - 2 };
    let to = gene.shape().with_extent(dim, target).ok()?;
    resize_centered(gene, to, d);
    refit_from(layers, input, i + 1, shapes[i + 1], None, d);
    Some(MutationKind::ResizeKernel)
}

/// One stride component of one conv layer moves by ±1 within `[1, input extent]`.
fn resize_stride<S: Scalar, R: Rng>(
    net: &mut Network<S>,
    grow: bool,
    d: &mut Draws<'_, R>,
) -> Option<MutationKind> {
    let input = net.input_shape();
    let shapes = net.feature_shapes();
    let layers = net.layers_mut();
    let convs: Vec<usize> = (0..layers.len()).filter(|&i| layers[i].kind() == LayerKind::Conv).collect();
    if convs.is_empty() {
        return None;
    }
    let i = convs[d.rng().random_range(0..convs.len())];
    let dim = pick_dim(d);
    let cap = stride_cap(extent(spatial(shapes[i]), dim));
    let Layer::Conv(conv) = &mut layers[i] else { unreachable!() };
    let s = conv.stride.get(dim);
    let can_grow = s < cap;
    let can_shrink = s > 1;
    let grow = match (grow, can_grow, can_shrink) {
        (true, true, _) | (false, true, false) => true,
        (false, _, true) | (true, false, true) => false,
        _ => return None,
    };
    conv.stride.set(dim, if grow { s + 1 } else { s - 1 });
    refit_from(layers, input, i + 1, shapes[i + 1], None, d);
    Some(MutationKind::ResizeStride)
}
