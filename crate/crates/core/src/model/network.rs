use std::fmt;

use serde::{Deserialize, Serialize};

use super::layer::{ConvKernelGene, FcLayer, FcNodeGene, Layer, LayerKind};
use crate::autograd::kernels::conv_out_extent;
use crate::autograd::{Tape, Var};
use crate::data::{batches, Dataset, ImageShape};
use crate::error::{Error, Result};
use crate::genome::SpeciesId;
use crate::optim::{Adadelta, Parameter};
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NetworkId(pub u64);

impl fmt::Display for NetworkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Shape of the activations flowing between two layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureShape {
    Spatial(ImageShape),
    Flat(usize),
}

impl FeatureShape {
    /// Fan-in a fully connected node needs to consume this shape.
    pub fn len(&self) -> usize {
        match self {
            FeatureShape::Spatial(s) => s.len(),
            FeatureShape::Flat(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> Option<ImageShape> {
        match self {
            FeatureShape::Spatial(s) => Some(*s),
            FeatureShape::Flat(_) => None,
        }
    }
}

/// Output of one epoch of training.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub batch_losses: Vec<f64>,
}

impl EpochStats {
    pub fn mean_loss(&self) -> f64 {
        self.batch_losses.iter().sum::<f64>() / self.batch_losses.len().max(1) as f64
    }
}

/// A phenotype: structure, every trainable weight, and evolutionary bookkeeping.
#[derive(Clone, Debug)]
pub struct Network<S> {
    id: NetworkId,
    input: ImageShape,
    classes: usize,
    layers: Vec<Layer<S>>,
    /// Epochs trained.
    pub age: u32,
    /// Test accuracy.
    pub absolute_fitness: f64,
    pub relative_fitness: f64,
    pub relative_complexity: f64,
    pub is_new_offspring: bool,
    pub species: Option<SpeciesId>,
    rng: StreamRng,
}

impl<S: Scalar> Network<S> {
    pub fn new(
        id: NetworkId,
        input: ImageShape,
        classes: usize,
        layers: Vec<Layer<S>>,
        rng: StreamRng,
    ) -> Result<Self> {
        let net = Network {
            id,
            input,
            classes,
            layers,
            age: 0,
            absolute_fitness: 0.0,
            relative_fitness: 0.5,
            relative_complexity: 0.5,
            is_new_offspring: false,
            species: None,
            rng,
        };
        net.validate()?;
        Ok(net)
    }

    /// A single output layer looking directly at the input.
    pub fn minimal(id: NetworkId, input: ImageShape, classes: usize, mut rng: StreamRng) -> Self {
        let nodes = (0..classes)
            .map(|_| FcNodeGene::random(&mut rng, input.len()))
            .collect();
        Network::new(id, input, classes, vec![Layer::Fc(FcLayer { nodes })], rng)
            .expect("minimal network is valid")
    }

    pub fn id(&self) -> NetworkId {
        self.id
    }

    pub fn input_shape(&self) -> ImageShape {
        self.input
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut Vec<Layer<S>> {
        &mut self.layers
    }

    pub fn rng(&self) -> &StreamRng {
        &self.rng
    }

    pub fn rng_mut(&mut self) -> &mut StreamRng {
        &mut self.rng
    }

    pub fn conv_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.kind() == LayerKind::Conv).count()
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(Layer::node_count).sum()
    }

    /// Σ over genes of weight elements plus one bias.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    pub fn connection_count(&self) -> usize {
        self.layers.iter().map(Layer::connection_count).sum()
    }

    /// Activation shapes: entry `i` feeds layer `i`; the last entry is the network output.
    pub fn feature_shapes(&self) -> Vec<FeatureShape> {
        feature_shapes(self.input, &self.layers)
    }

    pub fn for_each_parameter(&self, mut f: impl FnMut(&Parameter<S>)) {
        self.layers.iter().for_each(|l| l.for_each_parameter(&mut f));
    }

    pub fn for_each_parameter_mut(&mut self, mut f: impl FnMut(&mut Parameter<S>)) {
        self.layers
            .iter_mut()
            .for_each(|l| l.for_each_parameter_mut(&mut f));
    }

    pub fn reset_optimizer_state(&mut self) {
        self.for_each_parameter_mut(Parameter::reset_state);
    }

    /// Checks layer ordering, gene counts and every inter-layer dimension.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::structural(format!("network {}: {msg}", self.id)));
        match self.layers.last() {
            Some(Layer::Fc(out)) if out.nodes.len() == self.classes => {}
            Some(Layer::Fc(out)) => {
                return fail(format!(
                    "output layer has {} nodes for {} classes",
                    out.nodes.len(),
                    self.classes
                ))
            }
            _ => return fail("the last layer must be fully connected".into()),
        }
        let mut seen_fc = false;
        let mut shape = FeatureShape::Spatial(self.input);
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.node_count() == 0 {
                return fail(format!("layer {i} has no genes"));
            }
            match layer {
                Layer::Conv(conv) => {
                    if seen_fc {
                        return fail(format!("convolutional layer {i} follows a dense layer"));
                    }
                    let s = shape.spatial().expect("conv inputs stay spatial");
                    if let Some(k) = conv.kernels.iter().find(|k| k.depth() != s.channels) {
                        return fail(format!(
                            "layer {i}: kernel depth {} but {} input channels",
                            k.depth(),
                            s.channels
                        ));
                    }
                    if conv.stride.h == 0 || conv.stride.w == 0 {
                        return fail(format!("layer {i}: zero stride"));
                    }
                }
                Layer::Fc(fc) => {
                    seen_fc = true;
                    if let Some(n) = fc.nodes.iter().find(|n| n.fan_in() != shape.len()) {
                        return fail(format!(
                            "layer {i}: node fan-in {} but input has {} features",
                            n.fan_in(),
                            shape.len()
                        ));
                    }
                }
            }
            shape = layer_output(shape, layer);
        }
        Ok(())
    }

    /// Records the forward pass; returns the logits and, per gene in layer
    /// order, the `(weights, bias)` leaves.
    pub fn record_forward(&self, tape: &mut Tape<S>, input: Var) -> Result<(Var, Vec<(Var, Var)>)> {
        let batch = tape.value(input).shape()[0];
        let mut leaves = Vec::new();
        let mut x = input;
        let mut flat = false;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(conv) => {
                    let mut ws = Vec::with_capacity(conv.kernels.len());
                    let mut bs = Vec::with_capacity(conv.kernels.len());
                    for k in &conv.kernels {
                        let (w, b) = leaf_pair(tape, &k.weights, &k.bias);
                        leaves.push((w, b));
                        ws.push(w);
                        bs.push(b);
                    }
                    let weight = tape.stack_centered(&ws)?;
                    let bias = stacked_bias(tape, &bs)?;
                    let y = tape.conv2d(x, weight, bias, (conv.stride.h, conv.stride.w), conv.padding())?;
                    x = tape.relu(y);
                }
                Layer::Fc(fc) => {
                    if !flat {
                        let features = tape.value(x).numel() / batch;
                        x = tape.reshape(x, &[batch, features])?;
                        flat = true;
                    }
                    let mut ws = Vec::with_capacity(fc.nodes.len());
                    let mut bs = Vec::with_capacity(fc.nodes.len());
                    for n in &fc.nodes {
                        let (w, b) = leaf_pair(tape, &n.weights, &n.bias);
                        leaves.push((w, b));
                        ws.push(w);
                        bs.push(b);
                    }
                    let weight = tape.stack_centered(&ws)?;
                    let bias = stacked_bias(tape, &bs)?;
                    let y = tape.linear(x, weight, bias)?;
                    x = if i == last { y } else { tape.relu(y) };
                }
            }
        }
        Ok((x, leaves))
    }

    fn check_batch(&self, batch: &Tensor<S>) -> Result<()> {
        let s = batch.shape();
        let i = self.input;
        if s.len() != 4 || s[1..] != [i.channels, i.height, i.width] {
            return Err(Error::structural(format!(
                "batch shape {s:?} does not match network input {i}"
            )));
        }
        Ok(())
    }

    /// Inference-only forward pass returning `N×classes` logits.
    pub fn forward(&self, batch: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_batch(batch)?;
        let mut tape = Tape::inference();
        let x = tape.constant(batch.clone());
        let (logits, _) = self.record_forward(&mut tape, x)?;
        Ok(tape.value(logits).clone())
    }

    /// One gradient step on one mini-batch; returns the batch loss.
    pub fn train_batch(&mut self, batch: &Tensor<S>, labels: &[usize], opt: &Adadelta) -> Result<f64> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let (logits, leaves) = self.record_forward(&mut tape, x)?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        let loss_value = tape.value(loss).data()[0].widen();
        let mut grads = tape.backward(loss)?;
        let mut leaf = leaves.into_iter();
        let mut apply = |p: &mut Parameter<S>, var: Var| {
            if let Some(g) = grads.take(var) {
                p.accumulate_grad(&g);
            }
            p.adadelta_step(opt);
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(conv) => {
                    for ConvKernelGene { weights, bias } in &mut conv.kernels {
                        let (w, b) = leaf.next().expect("one leaf pair per gene");
                        apply(weights, w);
                        apply(bias, b);
                    }
                }
                Layer::Fc(fc) => {
                    for FcNodeGene { weights, bias } in &mut fc.nodes {
                        let (w, b) = leaf.next().expect("one leaf pair per gene");
                        apply(weights, w);
                        apply(bias, b);
                    }
                }
            }
        }
        Ok(loss_value)
    }

    /// One pass over `indices` of `data` in mini-batches; increments `age`.
    pub fn train_epoch(
        &mut self,
        data: &Dataset,
        indices: &[usize],
        batch_size: usize,
        opt: &Adadelta,
    ) -> Result<EpochStats> {
        if indices.is_empty() {
            return Err(Error::input("cannot train on an empty subset"));
        }
        let mut batch_losses = Vec::with_capacity(indices.len().div_ceil(batch_size.max(1)));
        for chunk in batches(indices, batch_size) {
            let (x, labels) = data.batch::<S>(chunk);
            batch_losses.push(self.train_batch(&x, &labels, opt)?);
        }
        self.age += 1;
        Ok(EpochStats { batch_losses })
    }

    /// Fraction of samples whose arg-max logit (lowest index on ties) is the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        const CHUNK: usize = 500;
        if data.is_empty() {
            return Ok(0.0);
        }
        let all: Vec<usize> = (0..data.len()).collect();
        let mut correct = 0usize;
        for chunk in all.chunks(CHUNK) {
            let (x, labels) = data.batch::<S>(chunk);
            let logits = self.forward(&x)?;
            for (row, &label) in logits.data().chunks(self.classes).zip(&labels) {
                if argmax(row) == label {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    /// Measures test accuracy and stores it as the absolute fitness.
    pub fn evaluate(&mut self, data: &Dataset) -> Result<f64> {
        self.absolute_fitness = self.accuracy(data)?;
        Ok(self.absolute_fitness)
    }
}

fn leaf_pair<S: Scalar>(tape: &mut Tape<S>, w: &Parameter<S>, b: &Parameter<S>) -> (Var, Var) {
    (tape.param(w.value().clone()), tape.param(b.value().clone()))
}

fn stacked_bias<S: Scalar>(tape: &mut Tape<S>, biases: &[Var]) -> Result<Var> {
    let stacked = tape.stack_centered(biases)?;
    tape.reshape(stacked, &[biases.len()])
}

/// First index of the maximum.
pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn layer_output<S: Scalar>(input: FeatureShape, layer: &Layer<S>) -> FeatureShape {
    match layer {
        Layer::Conv(conv) => {
            let s = input.spatial().expect("conv inputs stay spatial");
            let (kh, kw) = conv.max_extents();
            let (ph, pw) = conv.padding();
            FeatureShape::Spatial(ImageShape::new(
                conv.kernels.len(),
                conv_out_extent(s.height, kh, conv.stride.h, ph),
                conv_out_extent(s.width, kw, conv.stride.w, pw),
            ))
        }
        Layer::Fc(fc) => FeatureShape::Flat(fc.nodes.len()),
    }
}

pub(crate) fn feature_shapes<S: Scalar>(input: ImageShape, layers: &[Layer<S>]) -> Vec<FeatureShape> {
    let mut shapes = Vec::with_capacity(layers.len() + 1);
    let mut s = FeatureShape::Spatial(input);
    shapes.push(s);
    for layer in layers {
        s = layer_output(s, layer);
        shapes.push(s);
    }
    shapes
}
