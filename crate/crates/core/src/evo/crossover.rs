use rand::Rng;
use serde::{Deserialize, Serialize};

use super::refit::{identity_map, refit_layer, resize_centered, Draws};
use crate::error::{Error, Result};
use crate::model::{
    kernel_extent_cap, layer_output, ConvLayer, FcLayer, FeatureShape, Layer, LayerKind, Network,
    NetworkId, Stride,
};
use crate::rng::StreamRng;
use crate::scalar::Scalar;

/// Provenance summary of one crossover.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossoverReport {
    pub genes_from_first: usize,
    pub genes_from_second: usize,
    /// Genes whose input connections had to be re-indexed.
    pub repaired_genes: usize,
    /// Kernels cropped to fit a smaller input than in their parent.
    pub cropped_kernels: usize,
    /// Every freshly drawn connection weight, in draw order.
    pub drawn: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Source {
    parent: usize,
    layer: usize,
    gene: usize,
}

struct Plan {
    kind: LayerKind,
    stride: Stride,
    genes: Vec<Source>,
}

/// Layer indices of a network split into conv, hidden dense, and the output.
fn groups<S: Scalar>(net: &Network<S>) -> [Vec<usize>; 3] {
    let last = net.layers().len() - 1;
    let mut conv = Vec::new();
    let mut hidden = Vec::new();
    for (i, l) in net.layers()[..last].iter().enumerate() {
        match l.kind() {
            LayerKind::Conv => conv.push(i),
            LayerKind::Fc => hidden.push(i),
        }
    }
    [conv, hidden, vec![last]]
}

fn stride_of<S: Scalar>(net: &Network<S>, layer: usize) -> Stride {
    net.layers()[layer].as_conv().map_or(Stride::UNIT, |c| c.stride)
}

/// Builds an offspring by walking aligned layers: conv with conv and hidden
/// dense with hidden dense in order, output with output. Shared gene slots come
/// from the first parent with probability `f1 / (f1 + f2)` of the relative
/// fitnesses; genes and layers only one parent has are kept with that parent's
/// relative fitness. Inherited genes carry their trained weights; input
/// connections that no longer line up are re-indexed and missing ones drawn
/// fresh. The child gets age 0, fresh optimiser state, and the offspring flag.
pub fn crossover<S: Scalar>(
    first: &Network<S>,
    second: &Network<S>,
    id: NetworkId,
    child_rng: StreamRng,
    rng: &mut impl Rng,
) -> Result<(Network<S>, CrossoverReport)> {
    if first.input_shape() != second.input_shape() || first.classes() != second.classes() {
        return Err(Error::structural("crossover parents solve different tasks"));
    }
    let parents = [first, second];
    let f = [first.relative_fitness, second.relative_fitness].map(|x| x.clamp(0.0, 1.0));
    let p_first = if f[0] + f[1] > 0.0 { f[0] / (f[0] + f[1]) } else { 0.5 };
    let g = [groups(first), groups(second)];

    let mut plans = Vec::new();
    for (a, b) in g[0].iter().zip(&g[1]) {
        for k in 0..a.len().max(b.len()) {
            match (a.get(k), b.get(k)) {
                (Some(&la), Some(&lb)) => {
                    let (na, nb) = (first.layers()[la].node_count(), second.layers()[lb].node_count());
                    let larger = if na >= nb { 0 } else { 1 };
                    let larger_layer = if larger == 0 { la } else { lb };
                    let mut genes = Vec::with_capacity(na.max(nb));
                    for slot in 0..na.max(nb) {
                        if slot < na.min(nb) {
                            let src = if rng.random_bool(p_first) { (0, la) } else { (1, lb) };
                            genes.push(Source { parent: src.0, layer: src.1, gene: slot });
                        } else if rng.random_bool(f[larger]) {
                            genes.push(Source { parent: larger, layer: larger_layer, gene: slot });
                        }
                    }
                    let stride = if rng.random_bool(p_first) {
                        stride_of(first, la)
                    } else {
                        stride_of(second, lb)
                    };
                    plans.push(Plan { kind: first.layers()[la].kind(), stride, genes });
                }
                (Some(&l), None) | (None, Some(&l)) => {
                    let parent = if a.get(k).is_some() { 0 } else { 1 };
                    if rng.random_bool(f[parent]) {
                        let layer = &parents[parent].layers()[l];
                        plans.push(Plan {
                            kind: layer.kind(),
                            stride: stride_of(parents[parent], l),
                            genes: (0..layer.node_count())
                                .map(|gene| Source { parent, layer: l, gene })
                                .collect(),
                        });
                    }
                }
                (None, None) => unreachable!(),
            }
        }
    }

    let shapes = [first.feature_shapes(), second.feature_shapes()];
    let mut report = CrossoverReport::default();
    let mut draws = Draws::new(rng, &mut report.drawn);
    let mut layers = Vec::with_capacity(plans.len());
    let mut current = FeatureShape::Spatial(first.input_shape());
    let (mut from_first, mut from_second, mut repaired, mut cropped) = (0, 0, 0, 0);
    for plan in plans {
        let mut layer = match plan.kind {
            LayerKind::Conv => Layer::Conv(ConvLayer { kernels: Vec::new(), stride: plan.stride }),
            LayerKind::Fc => Layer::Fc(FcLayer { nodes: Vec::new() }),
        };
        for src in &plan.genes {
            if src.parent == 0 {
                from_first += 1;
            } else {
                from_second += 1;
            }
            let parent_layer = &parents[src.parent].layers()[src.layer];
            let source_in = shapes[src.parent][src.layer];
            let mut single = match parent_layer {
                Layer::Conv(c) => Layer::Conv(ConvLayer {
                    kernels: vec![c.kernels[src.gene].clone()],
                    stride: plan.stride,
                }),
                Layer::Fc(d) => Layer::Fc(FcLayer { nodes: vec![d.nodes[src.gene].clone()] }),
            };
            let needs_refit = match &single {
                Layer::Conv(c) => c.kernels[0].depth() != current.spatial().map_or(0, |s| s.channels),
                Layer::Fc(_) => source_in != current,
            };
            if needs_refit {
                let map = identity_map(source_in, current);
                refit_layer(&mut single, source_in, current, &map, &mut draws);
                repaired += 1;
            }
            match (&mut layer, single) {
                (Layer::Conv(dst), Layer::Conv(mut src)) => {
                    let mut k = src.kernels.pop().expect("one kernel");
                    let s = current.spatial().expect("conv input is spatial");
                    let (ch, cw) = (kernel_extent_cap(s.height), kernel_extent_cap(s.width));
                    let shape = k.shape();
                    if shape.height() > ch || shape.width() > cw {
                        let to = crate::model::KernelShape::new(shape.width().min(cw), shape.height().min(ch))
                            .expect("caps are odd");
                        resize_centered(&mut k, to, &mut draws);
                        cropped += 1;
                    }
                    dst.kernels.push(k);
                }
                (Layer::Fc(dst), Layer::Fc(mut src)) => dst.nodes.push(src.nodes.pop().expect("one node")),
                _ => unreachable!("aligned layers share a kind"),
            }
        }
        current = layer_output(current, &layer);
        layers.push(layer);
    }

    let mut child = Network::new(id, first.input_shape(), first.classes(), layers, child_rng)?;
    child.reset_optimizer_state();
    child.is_new_offspring = true;
    report.genes_from_first = from_first;
    report.genes_from_second = from_second;
    report.repaired_genes = repaired;
    report.cropped_kernels = cropped;
    Ok((child, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageShape;
    use crate::evo::mutate_structure;
    use crate::genome::GenomeKey;
    use crate::model::{ConvKernelGene, FcNodeGene, KernelShape};
    use crate::rng::stream;

    fn net(id: u64, seed: u64) -> Network<f64> {
        let mut rng = stream(seed, id);
        let input = ImageShape::new(1, 8, 8);
        let conv = ConvLayer {
            kernels: (0..3)
                .map(|_| ConvKernelGene::random(&mut rng, 1, KernelShape::new(3, 1).unwrap()))
                .collect(),
            stride: Stride::UNIT,
        };
        let hidden = FcLayer { nodes: (0..4).map(|_| FcNodeGene::random(&mut rng, 192)).collect() };
        let out = FcLayer { nodes: (0..2).map(|_| FcNodeGene::random(&mut rng, 4)).collect() };
        Network::new(
            NetworkId(id),
            input,
            2,
            vec![Layer::Conv(conv), Layer::Fc(hidden), Layer::Fc(out)],
            rng,
        )
        .unwrap()
    }

    #[test]
    fn identical_parents_give_an_identical_child() {
        let p = net(1, 1);
        let mut rng = stream(0, 0);
        let (child, report) = crossover(&p, &p, NetworkId(9), stream(0, 9), &mut rng).unwrap();
        assert_eq!(child.layers(), p.layers());
        assert!(report.drawn.is_empty());
        assert!(child.is_new_offspring);
        assert_eq!(child.age, 0);
    }

    #[test]
    fn dominant_parent_wins_every_slot() {
        let mut a = net(1, 1);
        let mut b = net(2, 2);
        a.relative_fitness = 1.0;
        b.relative_fitness = 0.0;
        let mut rng = stream(0, 0);
        let (child, _) = crossover(&a, &b, NetworkId(9), stream(0, 9), &mut rng).unwrap();
        assert_eq!(child.layers(), a.layers());
    }

    #[test]
    fn mismatched_structures_are_repaired() {
        let mut rng = stream(3, 0);
        for _ in 0..50 {
            let mut a = net(1, 1);
            let mut b = net(2, 2);
            for _ in 0..3 {
                mutate_structure(&mut a, &mut rng);
                mutate_structure(&mut b, &mut rng);
            }
            a.relative_fitness = rng.random();
            b.relative_fitness = rng.random();
            let (child, _) = crossover(&a, &b, NetworkId(9), stream(0, 9), &mut rng).unwrap();
            child.validate().unwrap();
            assert!(crate::evo::kernel_caps_ok(child.layers(), child.input_shape()));
            let len = child.layers().len();
            assert_eq!(child.layers()[len - 1].node_count(), 2);
        }
    }

    #[test]
    fn same_key_parents_give_the_same_key() {
        let (a, b) = (net(1, 1), net(2, 2));
        let mut rng = stream(4, 0);
        for _ in 0..100 {
            let (child, report) = crossover(&a, &b, NetworkId(9), stream(0, 9), &mut rng).unwrap();
            assert_eq!(GenomeKey::of(&child), GenomeKey::of(&a));
            assert!(report.drawn.is_empty());
        }
    }
}
