//! Keeps genes consistent with the shapes feeding them after structural edits.
//! Surviving connections keep their trained values; missing ones are drawn
//! fresh and logged.

use rand::Rng;

use crate::data::ImageShape;
use crate::model::{
    feature_shapes, kernel_extent_cap, layer_output, normal_value, ConvKernelGene, FeatureShape,
    KernelShape, Layer,
};
use crate::optim::Parameter;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Source of fresh connection weights; every value handed out is recorded.
pub(crate) struct Draws<'a, R> {
    rng: &'a mut R,
    log: &'a mut Vec<f64>,
}

impl<'a, R: Rng> Draws<'a, R> {
    pub fn new(rng: &'a mut R, log: &'a mut Vec<f64>) -> Self {
        Draws { rng, log }
    }

    pub fn next<S: Scalar>(&mut self) -> S {
        let v: f64 = normal_value(self.rng);
        self.log.push(v);
        S::lit(v)
    }

    pub fn rng(&mut self) -> &mut R {
        self.rng
    }
}

fn channels(shape: FeatureShape) -> usize {
    match shape {
        FeatureShape::Spatial(s) => s.channels,
        FeatureShape::Flat(n) => n,
    }
}

/// Maps each channel of `to` to the same-numbered channel of `from` if it exists.
pub(crate) fn identity_map(from: FeatureShape, to: FeatureShape) -> Vec<Option<usize>> {
    let have = channels(from);
    (0..channels(to)).map(|c| (c < have).then_some(c)).collect()
}

/// Dense-node weights re-indexed from input shape `from` to `to`.
/// `map[c]` names the old channel (or flat feature) that new channel `c` reads.
fn fit_dense<S: Scalar, R: Rng>(
    old: &[S],
    from: FeatureShape,
    to: FeatureShape,
    map: &[Option<usize>],
    draws: &mut Draws<'_, R>,
) -> Vec<S> {
    match (from, to) {
        (FeatureShape::Spatial(a), FeatureShape::Spatial(b)) => {
            let mut out = Vec::with_capacity(b.len());
            for src in map {
                for y in 0..b.height {
                    for x in 0..b.width {
                        out.push(match src {
                            Some(c) if y < a.height && x < a.width => {
                                old[(c * a.height + y) * a.width + x]
                            }
                            _ => draws.next(),
                        });
                    }
                }
            }
            out
        }
        (FeatureShape::Flat(_), FeatureShape::Flat(_)) => map
            .iter()
            .map(|src| match src {
                Some(i) => old[*i],
                None => draws.next(),
            })
            .collect(),
        // across a flatten boundary there is no channel structure to follow
        _ => (0..to.len())
            .map(|i| if i < old.len() { old[i] } else { draws.next() })
            .collect(),
    }
}

/// Kernel weights re-indexed along the depth axis.
fn fit_depth<S: Scalar, R: Rng>(
    old: &Tensor<S>,
    map: &[Option<usize>],
    draws: &mut Draws<'_, R>,
) -> Tensor<S> {
    let (h, w) = (old.shape()[1], old.shape()[2]);
    let plane = h * w;
    let mut data = Vec::with_capacity(map.len() * plane);
    for src in map {
        match src {
            Some(c) => data.extend_from_slice(&old.data()[c * plane..(c + 1) * plane]),
            None => data.extend((0..plane).map(|_| draws.next::<S>())),
        }
    }
    Tensor::from_vec(&[map.len(), h, w], data).expect("fitted kernel shape")
}

/// Re-indexes every gene of `layer` from input `from` to input `to`.
pub(crate) fn refit_layer<S: Scalar, R: Rng>(
    layer: &mut Layer<S>,
    from: FeatureShape,
    to: FeatureShape,
    map: &[Option<usize>],
    draws: &mut Draws<'_, R>,
) {
    match layer {
        Layer::Conv(conv) => {
            if channels(from) == channels(to) && map.iter().enumerate().all(|(i, m)| *m == Some(i)) {
                return;
            }
            for k in &mut conv.kernels {
                k.weights = Parameter::new(fit_depth(k.weights.value(), map, draws));
            }
        }
        Layer::Fc(fc) => {
            for n in &mut fc.nodes {
                let w = fit_dense(n.weights.value().data(), from, to, map, draws);
                let len = w.len();
                n.weights = Parameter::new(Tensor::from_vec(&[len], w).expect("flat weights"));
            }
        }
    }
}

/// After the input of layer `start` changed from `old_in` (channel `map`, or
/// identity when `None`), refits that layer and keeps going downstream while
/// output shapes keep changing.
pub(crate) fn refit_from<S: Scalar, R: Rng>(
    layers: &mut [Layer<S>],
    input: ImageShape,
    start: usize,
    old_in: FeatureShape,
    map: Option<Vec<Option<usize>>>,
    draws: &mut Draws<'_, R>,
) {
    let shapes = feature_shapes(input, layers);
    let mut old_in = old_in;
    let mut map = map;
    for j in start..layers.len() {
        let new_in = shapes[j];
        let m = map.take().unwrap_or_else(|| identity_map(old_in, new_in));
        let identity = old_in == new_in && m.iter().enumerate().all(|(i, s)| *s == Some(i));
        if identity {
            break;
        }
        let old_out = layer_output(old_in, &layers[j]);
        refit_layer(&mut layers[j], old_in, new_in, &m, draws);
        if old_out == shapes[j + 1] {
            break;
        }
        old_in = old_out;
    }
}

/// Whether every kernel respects the half-input cap of the layer it sits in.
pub fn kernel_caps_ok<S: Scalar>(layers: &[Layer<S>], input: ImageShape) -> bool {
    let shapes = feature_shapes(input, layers);
    layers.iter().zip(&shapes).all(|(layer, shape)| match (layer, shape) {
        (Layer::Conv(conv), FeatureShape::Spatial(s)) => {
            let (ch, cw) = (kernel_extent_cap(s.height), kernel_extent_cap(s.width));
            conv.kernels.iter().all(|k| k.shape().height() <= ch && k.shape().width() <= cw)
        }
        _ => true,
    })
}

/// Kernel resized about its centre: cropped rows/columns are dropped, new
/// border elements drawn fresh.
pub(crate) fn resize_centered<S: Scalar, R: Rng>(
    gene: &mut ConvKernelGene<S>,
    to: KernelShape,
    draws: &mut Draws<'_, R>,
) {
    let from = gene.shape();
    let depth = gene.depth();
    let off_h = (to.height() as isize - from.height() as isize) / 2;
    let off_w = (to.width() as isize - from.width() as isize) / 2;
    let old = gene.weights.value().data();
    let mut data = Vec::with_capacity(depth * to.area());
    for c in 0..depth {
        for i in 0..to.height() as isize {
            for j in 0..to.width() as isize {
                let (oi, oj) = (i - off_h, j - off_w);
                let inside = (0..from.height() as isize).contains(&oi)
                    && (0..from.width() as isize).contains(&oj);
                data.push(if inside {
                    old[(c * from.height() + oi as usize) * from.width() + oj as usize]
                } else {
                    draws.next()
                });
            }
        }
    }
    gene.weights = Parameter::new(
        Tensor::from_vec(&[depth, to.height(), to.width()], data).expect("resized kernel"),
    );
}
