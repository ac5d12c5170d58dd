//! Acceptance gate. Runs each criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if any failed.
//!
//! Criteria 7 and 8 train on MNIST. The IDX files are read from `data/mnist`
//! at the workspace root, or from `$EPINET_MNIST_DIR`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::PathBuf;
use std::time::Instant;

use epinet::autograd::Tape;
use epinet::data::{load_mnist_dir, synthetic_task, Dataset, ImageShape, SyntheticTask};
use epinet::ecosystem::{EcosystemConfig, GenerationMetrics, MetricsWriter, Workers, METRICS_CSV, METRICS_JSONL};
use epinet::evo::{
    calibrate, crossover, cull, cull_weight, mutate, shape_weight, FailureReason, MutationOutcome,
};
use epinet::genome::{layer_intersection, similarity, GenomeKey, SpeciesRegistry};
use epinet::model::{
    ConvKernelGene, ConvLayer, FcLayer, FcNodeGene, KernelShape, Layer, LayerKind, Network, NetworkId, Stride,
};
use epinet::rng::stream;
use epinet::tensor::Tensor;
use epinet::Ecosystem;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn shape(w: usize, h: usize) -> KernelShape {
    KernelShape::new(w, h).unwrap()
}

// ---------------------------------------------------------------- 1

/// Direct convolution of one kernel in its own shape, centred on the same
/// input position as the stacked kernel: output (y, x) reads input rows
/// `y·sh + i − h/2` and columns `x·sw + j − w/2`, zero outside.
fn naive_conv(
    input: &[f64],
    (c_in, h_in, w_in): (usize, usize, usize),
    kernel: &[f64],
    (kh, kw): (usize, usize),
    bias: f64,
    (sh, sw): (usize, usize),
    (h_out, w_out): (usize, usize),
) -> Vec<f64> {
    let mut out = vec![bias; h_out * w_out];
    for y in 0..h_out {
        for x in 0..w_out {
            let mut acc = 0.0;
            for c in 0..c_in {
                for i in 0..kh {
                    for j in 0..kw {
                        let r = (y * sh + i) as isize - (kh / 2) as isize;
                        let q = (x * sw + j) as isize - (kw / 2) as isize;
                        if r < 0 || q < 0 || r >= h_in as isize || q >= w_in as isize {
                            continue;
                        }
                        acc += input[(c * h_in + r as usize) * w_in + q as usize]
                            * kernel[(c * kh + i) * kw + j];
                    }
                }
            }
            out[y * w_out + x] += acc;
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(101, 0);
    let odd = [1usize, 3, 5, 7];
    let mut worst = 0.0f64;
    let configs = 150;
    for _ in 0..configs {
        let (c_in, h_in, w_in) = (rng.random_range(1..=3), rng.random_range(4..=12), rng.random_range(4..=12));
        let n = rng.random_range(1..=2);
        let kernels: Vec<ConvKernelGene<f64>> = (0..rng.random_range(1..=5))
            .map(|_| {
                let s = shape(odd[rng.random_range(0..4)], odd[rng.random_range(0..4)]);
                let mut k = ConvKernelGene::random(&mut rng, c_in, s);
                k.bias.value_mut().data_mut()[0] = rng.random_range(-0.5..0.5);
                k
            })
            .collect();
        let stride = Stride::new(rng.random_range(1..=3), rng.random_range(1..=3)).unwrap();
        let layer = ConvLayer { kernels, stride };
        let input = Tensor::from_fn(&[n, c_in, h_in, w_in], |_| rng.random::<f64>());

        // stacked route on the tape, as the network records it
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(input.clone());
        let ws: Vec<_> = layer.kernels.iter().map(|k| tape.param(k.weights.value().clone())).collect();
        let bs: Vec<_> = layer.kernels.iter().map(|k| tape.param(k.bias.value().clone())).collect();
        let w = tape.stack_centered(&ws).map_err(|e| e.to_string())?;
        let b = tape.stack_centered(&bs).map_err(|e| e.to_string())?;
        let b = tape.reshape(b, &[bs.len()]).map_err(|e| e.to_string())?;
        let y = tape.conv2d(x, w, b, (stride.h, stride.w), layer.padding()).map_err(|e| e.to_string())?;
        let taped = tape.value(y).clone();

        // stacked route through the layer's own weight tensor
        let (stacked, _) = layer.stack_kernels();
        let mut tape = Tape::<f64>::inference();
        let x = tape.constant(input.clone());
        let w = tape.constant(stacked);
        let bias = Tensor::from_vec(
            &[layer.kernels.len()],
            layer.kernels.iter().map(|k| k.bias.value().data()[0]).collect(),
        )
        .unwrap();
        let b = tape.constant(bias);
        let y = tape.conv2d(x, w, b, (stride.h, stride.w), layer.padding()).map_err(|e| e.to_string())?;
        let direct = tape.value(y).clone();

        let s = taped.shape().to_vec();
        let (h_out, w_out) = ((h_in - 1) / stride.h + 1, (w_in - 1) / stride.w + 1);
        check(s == [n, layer.kernels.len(), h_out, w_out], format!("output shape {s:?}"))?;
        for img in 0..n {
            let plane = &input.data()[img * c_in * h_in * w_in..(img + 1) * c_in * h_in * w_in];
            for (f, k) in layer.kernels.iter().enumerate() {
                let ks = k.shape();
                let expect = naive_conv(
                    plane,
                    (c_in, h_in, w_in),
                    k.weights.value().data(),
                    (ks.height(), ks.width()),
                    k.bias.value().data()[0],
                    (stride.h, stride.w),
                    (h_out, w_out),
                );
                let off = (img * layer.kernels.len() + f) * h_out * w_out;
                for (i, e) in expect.iter().enumerate() {
                    worst = worst.max((taped.data()[off + i] - e).abs());
                    worst = worst.max((direct.data()[off + i] - e).abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-12, format!("max abs difference {worst:e} > 1e-12"))?;
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("{configs} configurations, max abs difference {worst:.1e}, {secs:.2}s"))
}

// ---------------------------------------------------------------- 2

fn cross_entropy(logits: &Tensor<f64>, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let rows = logits.data().chunks(k);
    let total: f64 = rows
        .zip(labels)
        .map(|(row, &l)| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[l]
        })
        .sum();
    total / labels.len() as f64
}

fn set_param(net: &mut Network<f64>, index: usize, value: f64) {
    let mut seen = 0;
    net.for_each_parameter_mut(|p| {
        let n = p.numel();
        if index >= seen && index < seen + n {
            p.value_mut().data_mut()[index - seen] = value;
        }
        seen += n;
    });
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let input = ImageShape::new(2, 7, 7);
    let mut rng = stream(202, 0);
    let conv1 = ConvLayer {
        kernels: [shape(1, 3), shape(3, 1), shape(3, 3)]
            .into_iter()
            .map(|s| ConvKernelGene::random(&mut rng, 2, s))
            .collect(),
        stride: Stride::UNIT,
    };
    let conv2 = ConvLayer {
        kernels: [shape(1, 1), shape(3, 3)]
            .into_iter()
            .map(|s| ConvKernelGene::random(&mut rng, 3, s))
            .collect(),
        stride: Stride::new(1, 2).unwrap(),
    };
    // 2 channels × 7 × 4 after the second conv
    let hidden = FcLayer { nodes: (0..4).map(|_| FcNodeGene::random(&mut rng, 56)).collect() };
    let output = FcLayer { nodes: (0..3).map(|_| FcNodeGene::random(&mut rng, 4)).collect() };
    let layers = vec![Layer::Conv(conv1), Layer::Conv(conv2), Layer::Fc(hidden), Layer::Fc(output)];
    let mut net = Network::<f64>::new(NetworkId(1), input, 3, layers, stream(202, 1)).map_err(|e| e.to_string())?;
    // non-zero biases so that no unit sits at the origin of its activation
    net.for_each_parameter_mut(|p| {
        if p.numel() == 1 {
            p.value_mut().data_mut()[0] = rng.random_range(0.05..0.2);
        }
    });
    let batch = Tensor::from_fn(&[3, 2, 7, 7], |_| rng.random::<f64>());
    let labels = [0usize, 2, 1];

    let mut tape = Tape::new();
    let x = tape.constant(batch.clone());
    let (logits, leaves) = net.record_forward(&mut tape, x).map_err(|e| e.to_string())?;
    let loss = tape.softmax_cross_entropy(logits, &labels).map_err(|e| e.to_string())?;
    let analytic_loss = tape.value(loss).data()[0];
    let grads = tape.backward(loss).map_err(|e| e.to_string())?;
    let mut analytic = Vec::new();
    for (w, b) in leaves {
        for v in [w, b] {
            analytic.extend_from_slice(grads.get(v).ok_or("missing gradient")?.data());
        }
    }
    let mut values = Vec::new();
    net.for_each_parameter(|p| values.extend_from_slice(p.value().data()));
    check(values.len() == analytic.len(), "gradient count mismatch")?;
    let oracle_loss = cross_entropy(&net.forward(&batch).map_err(|e| e.to_string())?, &labels);
    check((oracle_loss - analytic_loss).abs() < 1e-12, "taped loss disagrees with oracle loss")?;

    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, &v) in values.iter().enumerate() {
        let mut probe = net.clone();
        set_param(&mut probe, i, v + h);
        let up = cross_entropy(&probe.forward(&batch).unwrap(), &labels);
        set_param(&mut probe, i, v - h);
        let down = cross_entropy(&probe.forward(&batch).unwrap(), &labels);
        let numeric = (up - down) / (2.0 * h);
        let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-4, format!("max relative error {worst:e} > 1e-4"))?;
    check(secs < 300.0, format!("took {secs:.1}s"))?;
    Ok(format!("{} parameters, max relative error {worst:.1e}, {secs:.2}s", values.len()))
}

// ---------------------------------------------------------------- 3

fn key(layers: &[(LayerKind, usize)]) -> GenomeKey {
    GenomeKey(layers.to_vec())
}

fn criterion_3() -> Outcome {
    let w = shape_weight(shape(3, 3));
    let expect = (-9.0f64).exp();
    check((w - expect).abs() <= 1e-8, format!("3×3 weight {w}"))?;
    check((w - 1.2341e-4).abs() <= 1e-8, format!("3×3 weight {w} vs 1.2341e-4"))?;

    // the mean of these is exact in binary, so the middle one is the mean
    let mut nets: Vec<Network<f64>> = [0.25, 0.5, 0.75]
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let mut n = Network::minimal(NetworkId(i as u64), ImageShape::new(1, 2, 2), 2, stream(3, i as u64));
            n.absolute_fitness = f;
            n
        })
        .collect();
    calibrate(nets.iter_mut());
    let mid = nets[1].relative_fitness;
    check(mid == 0.5, format!("mean fitness maps to {mid}"))?;

    let a = key(&[(LayerKind::Conv, 3), (LayerKind::Fc, 10)]);
    let s = similarity(&a, &a.clone());
    check(s == 1.0, format!("self-similarity {s}"))?;
    let i = key(&[(LayerKind::Conv, 3), (LayerKind::Fc, 10)]);
    let j = key(&[(LayerKind::Conv, 5), (LayerKind::Fc, 10)]);
    let o = layer_intersection(&i, &j);
    check(o == 13, format!("intersection {o}"))?;
    let s = similarity(&i, &j);
    check((s - 13.0 / 15.0).abs() <= 1e-12, format!("similarity {s}"))?;
    Ok(format!("weight(3×3) {w:.5e}, mean → {mid}, O = {o}, s = {s:.6}"))
}

// ---------------------------------------------------------------- 4

/// Gives every gene a unique bias tag (positive for `sign = 1`, negative for
/// `-1`) and unique weight tags, returning bias tag → weight tags.
fn tag(net: &mut Network<f64>, sign: f64, next: &mut f64) -> HashMap<u64, HashSet<u64>> {
    let mut genes = HashMap::new();
    let mut current: Vec<u64> = Vec::new();
    net.for_each_parameter_mut(|p| {
        if p.numel() == 1 && !current.is_empty() {
            // every gene is weights followed by a one-element bias
            *next += 1.0;
            let b = sign * *next;
            p.value_mut().data_mut()[0] = b;
            genes.insert(b.to_bits(), current.drain(..).collect());
            return;
        }
        for v in p.value_mut().data_mut() {
            *next += 1.0;
            *v = sign * *next;
            current.push(v.to_bits());
        }
    });
    genes
}

fn tagged_parent(id: u64, stride: Stride, shapes: [KernelShape; 3], fitness: f64) -> Network<f64> {
    let input = ImageShape::new(1, 10, 10);
    let mut rng = stream(404, id);
    let conv = ConvLayer {
        kernels: shapes.iter().map(|&s| ConvKernelGene::random(&mut rng, 1, s)).collect(),
        stride,
    };
    let flat = 3 * (9 / stride.h + 1) * (9 / stride.w + 1);
    let hidden = FcLayer { nodes: (0..6).map(|_| FcNodeGene::random(&mut rng, flat)).collect() };
    let out = FcLayer { nodes: (0..3).map(|_| FcNodeGene::random(&mut rng, 6)).collect() };
    let layers = vec![Layer::Conv(conv), Layer::Fc(hidden), Layer::Fc(out)];
    let mut n = Network::new(NetworkId(id), input, 3, layers, stream(404, 100 + id)).unwrap();
    n.relative_fitness = fitness;
    n
}

fn criterion_4() -> Outcome {
    let mut a = tagged_parent(1, Stride::UNIT, [shape(3, 3), shape(1, 5), shape(5, 1)], 0.75);
    let mut b = tagged_parent(2, Stride::new(2, 1).unwrap(), [shape(5, 5), shape(3, 1), shape(1, 1)], 0.25);
    let mut next = 0.0;
    let genes_a = tag(&mut a, 1.0, &mut next);
    let genes_b = tag(&mut b, -1.0, &mut next);
    let parent_key = GenomeKey::of(&a);
    check(parent_key == GenomeKey::of(&b), "parents must share a genome key")?;

    let trials = 10_000;
    let mut rng = stream(404, 0);
    let (mut from_a, mut total, mut drawn_used) = (0usize, 0usize, 0usize);
    for t in 0..trials {
        let (child, report) =
            crossover(&a, &b, NetworkId(1000 + t), stream(404, 1000 + t), &mut rng).map_err(|e| e.to_string())?;
        check(GenomeKey::of(&child) == parent_key, format!("child key {}", GenomeKey::of(&child)))?;
        let drawn: HashSet<u64> = report.drawn.iter().map(|v| v.to_bits()).collect();
        let mut weights: Vec<u64> = Vec::new();
        let mut failure = None;
        child.for_each_parameter(|p| {
            if failure.is_some() {
                return;
            }
            if p.numel() == 1 && !weights.is_empty() {
                let bias = p.value().data()[0];
                let source = if bias > 0.0 { genes_a.get(&bias.to_bits()) } else { genes_b.get(&bias.to_bits()) };
                match source {
                    None => failure = Some(format!("bias {bias} has no parent gene")),
                    Some(allowed) => {
                        for w in weights.drain(..) {
                            if drawn.contains(&w) {
                                drawn_used += 1;
                            } else if !allowed.contains(&w) {
                                failure = Some(format!(
                                    "weight {} in gene {bias} is neither inherited nor logged",
                                    f64::from_bits(w)
                                ));
                            }
                        }
                    }
                }
                total += 1;
                if bias > 0.0 {
                    from_a += 1;
                }
                return;
            }
            weights.extend(p.value().data().iter().map(|v| v.to_bits()));
        });
        if let Some(f) = failure {
            return Err(f);
        }
        check(
            report.genes_from_first + report.genes_from_second == child.node_count(),
            "report gene counts do not cover the child",
        )?;
    }
    let frac = from_a as f64 / total as f64;
    check((frac - 0.75).abs() <= 0.02, format!("first-parent gene fraction {frac:.4}, expected 0.75 ± 0.02"))?;
    Ok(format!(
        "{trials} crossovers, first-parent fraction {frac:.4}, {drawn_used} logged fresh weights, every key preserved"
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let mut rng = stream(505, 0);
    let mut anomalies = 0;
    for trial in 0..1000u64 {
        let n = rng.random_range(4..=30u64);
        let mut nets: Vec<Network<f64>> = (0..n)
            .map(|i| {
                let mut net = Network::minimal(NetworkId(i), ImageShape::new(1, 2, 2), 2, stream(trial, i));
                net.age = rng.random_range(0..20);
                net.relative_fitness = rng.random();
                net.relative_complexity = rng.random();
                net.is_new_offspring = rng.random_bool(0.25);
                net
            })
            .collect();
        let champions: BTreeSet<NetworkId> =
            nets.iter().filter(|_| rng.random_bool(0.2)).map(|n| n.id()).collect();
        let protected: BTreeSet<NetworkId> = nets
            .iter()
            .filter(|n| n.is_new_offspring || champions.contains(&n.id()))
            .map(|n| n.id())
            .collect();
        let limit = rng.random_range(protected.len().max(1)..=n as usize);
        let report = cull(&mut nets, limit, &champions, &mut rng);
        check(nets.len() == limit, format!("trial {trial}: {} left, limit {limit}", nets.len()))?;
        anomalies += report.anomalies.len();
        for id in &report.removed {
            check(!protected.contains(id), format!("trial {trial}: protected {id} removed"))?;
        }
    }
    check(anomalies == 0, format!("{anomalies} anomalies"))?;

    let check_ratio = cull_weight(10, 0.5, 0.5) / cull_weight(1, 0.5, 0.5);
    check((check_ratio - 10.0).abs() < 1e-12, "weight ratio")?;
    let trials = 10_000;
    let mut old = 0usize;
    for t in 0..trials {
        let mut nets: Vec<Network<f64>> = (0..2)
            .map(|i| {
                let mut net = Network::minimal(NetworkId(i), ImageShape::new(1, 2, 2), 2, stream(t, i));
                net.age = if i == 0 { 10 } else { 1 };
                net.relative_fitness = 0.5;
                net.relative_complexity = 0.5;
                net
            })
            .collect();
        let report = cull(&mut nets, 1, &BTreeSet::new(), &mut rng);
        if report.removed == [NetworkId(0)] {
            old += 1;
        }
    }
    let ratio = old as f64 / (trials as usize - old) as f64;
    check((8.5..=11.5).contains(&ratio), format!("removal ratio {ratio:.2} outside [8.5, 11.5]"))?;
    Ok(format!("1000 culls respect protection, removal ratio {ratio:.2} for weights 10:1"))
}

// ---------------------------------------------------------------- 6

fn parameters(net: &Network<f64>) -> Vec<f64> {
    let mut v = Vec::new();
    net.for_each_parameter(|p| v.extend_from_slice(p.value().data()));
    v
}

fn criterion_6() -> Outcome {
    // registry at its cap of two species
    let input = ImageShape::new(1, 10, 10);
    let mut registry = SpeciesRegistry::new(2);
    let hidden_key = key(&[(LayerKind::Fc, 4), (LayerKind::Fc, 3)]);
    let mut nets: Vec<Network<f64>> = (0..8)
        .map(|i| {
            let k = if i % 2 == 0 { key(&[(LayerKind::Fc, 3)]) } else { hidden_key.clone() };
            let mut n = epinet::ecosystem::instantiate(&k, input, 3, NetworkId(i), stream(606, i)).unwrap();
            n.species = registry.join(n.id(), &k);
            n
        })
        .collect();
    check(registry.len() == 2, "registry should be full")?;
    let mut rng = stream(606, 99);
    let (mut reverted, mut applied) = (0, 0);
    for step in 0..2000 {
        let i = rng.random_range(0..nets.len());
        let before_key = GenomeKey::of(&nets[i]);
        let before = parameters(&nets[i]);
        let outcome = mutate(&mut nets[i], Some(&mut registry), &mut rng);
        let after_key = GenomeKey::of(&nets[i]);
        match outcome {
            MutationOutcome::Failed(FailureReason::SpeciesCap) => {
                reverted += 1;
                check(after_key == before_key && parameters(&nets[i]) == before, format!("step {step}: not reverted"))?;
            }
            MutationOutcome::Applied(_) => {
                applied += 1;
                check(registry.find(&after_key) == nets[i].species, format!("step {step}: species out of step"))?;
            }
            MutationOutcome::Failed(FailureReason::NoLegalEdit) => {}
        }
        check(registry.len() <= 2, format!("step {step}: {} species", registry.len()))?;
        registry.audit(&nets).map_err(|e| format!("step {step}: {e}"))?;
    }
    check(reverted > 0, "no mutation ever hit the cap")?;

    // and inside a running ecosystem
    let (train, test) = synthetic_task(SyntheticTask::Bars, &mut stream(606, 7));
    let config = EcosystemConfig {
        initial_size: 6,
        max_size: 9,
        initial_species: 3,
        species_cap: 3,
        generations: 6,
        mutation_probability: 1.0,
        master_seed: 606,
        ..EcosystemConfig::default()
    };
    let mut eco = Ecosystem::init(config, train.shape(), train.classes()).map_err(|e| e.to_string())?;
    let mut eco_failed = 0;
    while !eco.is_finished() {
        let report = eco.run_generation(&train, &test, &Workers::sequential()).map_err(|e| e.to_string())?;
        eco.audit().map_err(|e| format!("generation {}: {e}", eco.generation()))?;
        let failed = report.mutations.iter().filter(|(_, o)| matches!(o, MutationOutcome::Failed(_))).count();
        check(failed == report.metrics.failed_mutation_count, "failed mutation count mismatch")?;
        check(report.metrics.species_count <= 3, "species cap exceeded")?;
        eco_failed += failed;
    }
    Ok(format!(
        "{reverted} capped mutations reverted, {applied} applied; ecosystem audited over 6 generations ({eco_failed} failed)"
    ))
}

// ---------------------------------------------------------------- 7 and 8

fn mnist_dir() -> PathBuf {
    std::env::var_os("EPINET_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn desk_config(seed: u64) -> EcosystemConfig {
    EcosystemConfig {
        initial_size: 8,
        max_size: 12,
        initial_species: 2,
        species_cap: 4,
        generations: 10,
        master_seed: seed,
        ..EcosystemConfig::default()
    }
}

fn desk_run(seed: u64, train: &Dataset, test: &Dataset) -> Result<(Vec<GenerationMetrics>, f64), String> {
    let start = Instant::now();
    let mut eco = Ecosystem::init(desk_config(seed), train.shape(), train.classes()).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    while !eco.is_finished() {
        let report = eco.run_generation(train, test, &Workers::new(0).unwrap()).map_err(|e| e.to_string())?;
        rows.push(report.metrics);
    }
    Ok((rows, start.elapsed().as_secs_f64()))
}

fn offspring_mean(rows: &[GenerationMetrics], generations: std::ops::RangeInclusive<u32>) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|m| generations.contains(&m.generation))
        .filter_map(|m| m.average_offspring_fitness_before_bp)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn epigenetic_ok(rows: &[GenerationMetrics]) -> (bool, String) {
    match (offspring_mean(rows, 1..=3), offspring_mean(rows, 8..=10)) {
        (Some(early), Some(late)) => (late > early && late > 0.40, format!("{early:.3} → {late:.3}")),
        _ => (false, "no offspring recorded".into()),
    }
}

fn criteria_7_and_8() -> (Outcome, Outcome) {
    let dir = mnist_dir();
    let (train, test) = match load_mnist_dir(&dir) {
        Ok(d) => d,
        Err(e) => {
            let msg = format!(
                "MNIST not available ({e}); place the four IDX files in {} or set EPINET_MNIST_DIR",
                dir.display()
            );
            return (Err(msg.clone()), Err(msg));
        }
    };
    let mut runs = Vec::new();
    for seed in 1..=5u64 {
        match desk_run(seed, &train, &test) {
            Ok(r) => runs.push(r),
            Err(e) => return (Err(format!("seed {seed}: {e}")), Err(format!("seed {seed}: {e}"))),
        }
    }

    let (rows, secs) = &runs[0];
    let best = rows.last().map_or(0.0, |m| m.highest_fitness);
    let c7 = check(best >= 0.90, format!("best fitness {best:.4} < 0.90"))
        .and_then(|_| check(*secs <= 1800.0, format!("run took {secs:.0}s")))
        .map(|_| format!("seed 1: best fitness {best:.4} after 10 generations in {secs:.0}s"));

    let results: Vec<(bool, String)> = runs.iter().map(|(rows, _)| epigenetic_ok(rows)).collect();
    let passed = results.iter().filter(|r| r.0).count();
    let detail = results
        .iter()
        .enumerate()
        .map(|(i, (ok, d))| format!("seed {} {d}{}", i + 1, if *ok { "" } else { " (fail)" }))
        .collect::<Vec<_>>()
        .join("; ");
    let c8 = if passed >= 4 {
        Ok(format!("{passed}/5 seeds: {detail}"))
    } else {
        Err(format!("{passed}/5 seeds: {detail}"))
    };
    (c7, c8)
}

// ---------------------------------------------------------------- 9

fn bars_config(generations: u32) -> EcosystemConfig {
    EcosystemConfig {
        initial_size: 6,
        max_size: 9,
        initial_species: 2,
        species_cap: 4,
        generations,
        master_seed: 909,
        ..EcosystemConfig::default()
    }
}

fn run_to_end(eco: &mut Ecosystem, train: &Dataset, test: &Dataset, dir: &std::path::Path, workers: &Workers, resume: bool) -> Result<(), String> {
    let mut w = if resume {
        MetricsWriter::resume(dir, eco.generation())
    } else {
        MetricsWriter::create(dir)
    }
    .map_err(|e| e.to_string())?;
    while !eco.is_finished() {
        let report = eco.run_generation(train, test, workers).map_err(|e| e.to_string())?;
        w.write(&report.metrics).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn metrics_bytes(dir: &std::path::Path) -> Vec<u8> {
    let mut b = std::fs::read(dir.join(METRICS_CSV)).unwrap();
    b.extend(std::fs::read(dir.join(METRICS_JSONL)).unwrap());
    b
}

fn criterion_9() -> Outcome {
    let (train, test) = synthetic_task(SyntheticTask::Bars, &mut stream(909, 0));
    let dirs: Vec<_> = (0..4).map(|_| tempfile::tempdir().unwrap()).collect();
    let sequential = Workers::new(1).map_err(|e| e.to_string())?;

    let mut finals = Vec::new();
    for d in &dirs[..2] {
        let mut eco = Ecosystem::init(bars_config(8), train.shape(), train.classes()).map_err(|e| e.to_string())?;
        run_to_end(&mut eco, &train, &test, d.path(), &sequential, false)?;
        finals.push(eco.to_checkpoint_bytes(&serde_json::Value::Null));
    }
    check(metrics_bytes(dirs[0].path()) == metrics_bytes(dirs[1].path()), "same seed gave different metrics")?;
    check(finals[0] == finals[1], "same seed gave different final states")?;

    // a pool of workers must not change anything either
    let mut eco = Ecosystem::init(bars_config(8), train.shape(), train.classes()).map_err(|e| e.to_string())?;
    run_to_end(&mut eco, &train, &test, dirs[2].path(), &Workers::new(2).unwrap(), false)?;
    check(metrics_bytes(dirs[2].path()) == metrics_bytes(dirs[0].path()), "two workers changed the metrics")?;

    // interrupted after 4 generations, resumed from the checkpoint
    let resumed_dir = dirs[3].path();
    let mut eco = Ecosystem::init(bars_config(4), train.shape(), train.classes()).map_err(|e| e.to_string())?;
    run_to_end(&mut eco, &train, &test, resumed_dir, &sequential, false)?;
    let ckpt = resumed_dir.join("checkpoint.bin");
    eco.save(&ckpt, &serde_json::Value::Null).map_err(|e| e.to_string())?;
    drop(eco);
    let (mut eco, _) = Ecosystem::load(&ckpt).map_err(|e| e.to_string())?;
    eco.set_generations(8);
    run_to_end(&mut eco, &train, &test, resumed_dir, &sequential, true)?;
    check(metrics_bytes(resumed_dir) == metrics_bytes(dirs[0].path()), "resumed metrics differ from a straight run")?;
    check(
        eco.to_checkpoint_bytes(&serde_json::Value::Null) == finals[0],
        "resumed final state differs from a straight run",
    )?;
    Ok("identical metrics and state across repeat, two workers, and resume after generation 4".into())
}

// ----------------------------------------------------------------

fn main() {
    let mut results: Vec<(u8, Outcome)> = Vec::new();
    let timed = |n: u8, f: fn() -> Outcome| {
        eprintln!("running criterion {n}");
        (n, f())
    };
    results.push(timed(1, criterion_1));
    results.push(timed(2, criterion_2));
    results.push(timed(3, criterion_3));
    results.push(timed(4, criterion_4));
    results.push(timed(5, criterion_5));
    results.push(timed(6, criterion_6));
    eprintln!("running criteria 7 and 8 (five MNIST runs)");
    let (c7, c8) = criteria_7_and_8();
    results.push((7, c7));
    results.push((8, c8));
    results.push(timed(9, criterion_9));

    println!();
    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(detail) => println!("criterion {n}: PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL  {detail}");
            }
        }
    }
    println!();
    if failed > 0 {
        println!("acceptance: {failed} of {} criteria failed", results.len());
        std::process::exit(1);
    }
    println!("acceptance: all {} criteria passed", results.len());
}
