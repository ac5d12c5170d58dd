//! The generation loop over a population of networks.

mod checkpoint;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use metrics::{GenerationMetrics, MetricsWriter, METRICS_CSV, METRICS_JSONL};

use crate::data::{sample_subset, Dataset, ImageShape};
use crate::error::{Error, Result};
use crate::evo::{
    calibrate, crossover, cull, mutate, mutate_structure, weighted_choice, CullReport,
    MutationOutcome, ShapeDistribution, StrideDistribution,
};
use crate::genome::{similarity, GenomeKey, SpeciesRegistry};
use crate::model::{
    layer_output, ConvKernelGene, ConvLayer, FcLayer, FcNodeGene, FeatureShape, Layer, LayerKind,
    Network, NetworkId,
};
use crate::optim::Adadelta;
use crate::rng::{stream, StreamRng};
use crate::scalar::Scalar;

/// Mutation attempts allowed when synthesising a novel genome for a new species.
pub const NOVEL_GENOME_ATTEMPTS: usize = 100;
/// Similarity-gated pair draws per offspring slot without speciation.
pub const PAIR_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcosystemConfig {
    pub initial_size: usize,
    pub max_size: usize,
    pub initial_species: usize,
    pub species_cap: usize,
    pub generations: u32,
    pub train_subset_fraction: f64,
    pub batch_size: usize,
    /// Chance that a network which is not a new offspring mutates in a generation.
    pub mutation_probability: f64,
    /// Offspring produced per generation; `None` means `max_size − initial_size`.
    pub offspring_target: Option<usize>,
    pub speciation_enabled: bool,
    pub master_seed: u64,
    pub optimizer: Adadelta,
}

impl Default for EcosystemConfig {
    fn default() -> Self {
        EcosystemConfig {
            initial_size: 64,
            max_size: 111,
            initial_species: 8,
            species_cap: 16,
            generations: 100,
            train_subset_fraction: 0.1,
            batch_size: 128,
            mutation_probability: 0.5,
            offspring_target: None,
            speciation_enabled: true,
            master_seed: 0,
            optimizer: Adadelta::default(),
        }
    }
}

impl EcosystemConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        if self.initial_size == 0 {
            return fail("initial_size", "must be at least 1".into());
        }
        if self.initial_size > self.max_size {
            return fail(
                "initial_size",
                format!("{} exceeds max_size {}", self.initial_size, self.max_size),
            );
        }
        if self.speciation_enabled {
            if self.initial_species == 0 || self.initial_species > self.initial_size {
                return fail(
                    "initial_species",
                    format!("must lie in [1, initial_size], got {}", self.initial_species),
                );
            }
            if self.initial_species > self.species_cap {
                return fail(
                    "initial_species",
                    format!("{} exceeds species_cap {}", self.initial_species, self.species_cap),
                );
            }
        }
        if !(self.train_subset_fraction > 0.0 && self.train_subset_fraction <= 1.0) {
            return fail(
                "train_subset_fraction",
                format!("must lie in (0, 1], got {}", self.train_subset_fraction),
            );
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.mutation_probability) {
            return fail(
                "mutation_probability",
                format!("must lie in [0, 1], got {}", self.mutation_probability),
            );
        }
        if !(self.optimizer.rho >= 0.0 && self.optimizer.rho < 1.0 && self.optimizer.eps > 0.0) {
            return fail("optimizer", "needs 0 ≤ rho < 1 and eps > 0".into());
        }
        Ok(())
    }

    pub fn offspring_per_generation(&self) -> usize {
        self.offspring_target
            .unwrap_or(self.max_size - self.initial_size)
    }
}

/// Worker pool for the train/evaluate phase.
pub struct Workers {
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    /// `threads == 1` runs inline; `0` uses every available core.
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 1 {
            return Ok(Workers { pool: None });
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("threads: {e}")))?;
        Ok(Workers { pool: Some(pool) })
    }

    pub fn sequential() -> Self {
        Workers { pool: None }
    }

    fn map<S: Scalar, R: Send>(
        &self,
        nets: &mut [Network<S>],
        f: impl Fn(&mut Network<S>) -> R + Sync + Send,
    ) -> Vec<R> {
        match &self.pool {
            None => nets.iter_mut().map(f).collect(),
            Some(pool) => pool.install(|| nets.par_iter_mut().map(f).collect()),
        }
    }
}

/// Everything one generation did, beyond the metrics row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub metrics: GenerationMetrics,
    /// Hash of each trained network's subset indices, in population order.
    pub subset_hashes: Vec<(NetworkId, u64)>,
    pub offspring: Vec<NetworkId>,
    pub mutations: Vec<(NetworkId, MutationOutcome)>,
    pub cull: CullReport,
}

#[derive(Clone, Debug)]
pub struct Ecosystem<S> {
    config: EcosystemConfig,
    input: ImageShape,
    classes: usize,
    networks: Vec<Network<S>>,
    registry: Option<SpeciesRegistry>,
    generation: u32,
    next_id: u64,
    highest_fitness: f64,
    rng: StreamRng,
}

/// Builds a network with the given genome: node counts from `key`, kernel
/// shapes and strides drawn from the small-shape-favouring distributions.
pub fn instantiate<S: Scalar>(
    key: &GenomeKey,
    input: ImageShape,
    classes: usize,
    id: NetworkId,
    mut rng: StreamRng,
) -> Result<Network<S>> {
    let mut layers = Vec::with_capacity(key.0.len());
    let mut current = FeatureShape::Spatial(input);
    for &(kind, count) in &key.0 {
        let layer = match kind {
            LayerKind::Conv => {
                let s = current
                    .spatial()
                    .ok_or_else(|| Error::structural(format!("genome {key} has conv after dense")))?;
                let shapes = ShapeDistribution::for_input(s.height, s.width);
                let stride = StrideDistribution::for_input(s.height, s.width).sample(&mut rng);
                let kernels = (0..count)
                    .map(|_| {
                        let shape = shapes.sample(&mut rng);
                        ConvKernelGene::random(&mut rng, s.channels, shape)
                    })
                    .collect();
                Layer::Conv(ConvLayer { kernels, stride })
            }
            LayerKind::Fc => Layer::Fc(FcLayer {
                nodes: (0..count).map(|_| FcNodeGene::random(&mut rng, current.len())).collect(),
            }),
        };
        current = layer_output(current, &layer);
        layers.push(layer);
    }
    Network::new(id, input, classes, layers, rng)
}

fn subset_hash(indices: &[usize]) -> u64 {
    let mut h = DefaultHasher::new();
    indices.hash(&mut h);
    h.finish()
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl<S: Scalar> Ecosystem<S> {
    /// Seeds the population. With speciation the networks are split evenly over
    /// the initial species: the first holds the minimal genome (output layer
    /// only), every other species gets a genome found by mutating an isolated
    /// minimal network until its key is new. Without speciation every network
    /// is a minimal genome given one random mutation.
    pub fn init(config: EcosystemConfig, input: ImageShape, classes: usize) -> Result<Self> {
        config.validate()?;
        if classes < 2 {
            return Err(Error::Config(format!("a task needs at least 2 classes, got {classes}")));
        }
        let seed = config.master_seed;
        let mut eco = Ecosystem {
            input,
            classes,
            networks: Vec::with_capacity(config.max_size),
            registry: config.speciation_enabled.then(|| SpeciesRegistry::new(config.species_cap)),
            generation: 0,
            next_id: 1,
            highest_fitness: 0.0,
            rng: stream(seed, 0),
            config,
        };
        if eco.config.speciation_enabled {
            let minimal = GenomeKey(vec![(LayerKind::Fc, classes)]);
            let mut keys = vec![minimal];
            for _ in 1..eco.config.initial_species {
                keys.push(eco.novel_genome(&keys)?);
            }
            let n = eco.config.initial_size;
            let s = keys.len();
            for (j, key) in keys.iter().enumerate() {
                let members = n / s + usize::from(j < n % s);
                for _ in 0..members {
                    let id = eco.take_id();
                    let mut net = instantiate(key, input, classes, id, stream(seed, id.0))?;
                    let registry = eco.registry.as_mut().expect("speciation on");
                    net.species = registry.join(id, key);
                    eco.networks.push(net);
                }
            }
        } else {
            for _ in 0..eco.config.initial_size {
                let id = eco.take_id();
                let mut net = Network::minimal(id, input, classes, stream(seed, id.0));
                let mut applied = false;
                for _ in 0..NOVEL_GENOME_ATTEMPTS {
                    if mutate_structure(&mut net, &mut eco.rng).is_some() {
                        applied = true;
                        break;
                    }
                }
                if !applied {
                    return Err(Error::Init(format!("could not mutate initial network {id}")));
                }
                eco.networks.push(net);
            }
        }
        Ok(eco)
    }

    fn novel_genome(&mut self, known: &[GenomeKey]) -> Result<GenomeKey> {
        // weights of the probe are discarded; only its structure matters
        let mut probe =
            Network::<S>::minimal(NetworkId(0), self.input, self.classes, stream(self.config.master_seed, u64::MAX));
        for _ in 0..NOVEL_GENOME_ATTEMPTS {
            mutate_structure(&mut probe, &mut self.rng);
            let key = GenomeKey::of(&probe);
            if !known.contains(&key) {
                return Ok(key);
            }
        }
        Err(Error::Init(format!(
            "no novel genome after {NOVEL_GENOME_ATTEMPTS} mutations"
        )))
    }

    fn take_id(&mut self) -> NetworkId {
        let id = NetworkId(self.next_id);
        self.next_id += 1;
        id
    }

    pub fn config(&self) -> &EcosystemConfig {
        &self.config
    }

    /// Changes the number of generations a run aims for.
    pub fn set_generations(&mut self, generations: u32) {
        self.config.generations = generations;
    }

    pub fn input_shape(&self) -> ImageShape {
        self.input
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn networks(&self) -> &[Network<S>] {
        &self.networks
    }

    pub fn networks_mut(&mut self) -> &mut [Network<S>] {
        &mut self.networks
    }

    pub fn registry(&self) -> Option<&SpeciesRegistry> {
        self.registry.as_ref()
    }

    /// Generations completed so far.
    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn is_finished(&self) -> bool {
        self.generation >= self.config.generations
    }

    pub fn highest_fitness(&self) -> f64 {
        self.highest_fitness
    }

    /// Registry, size and structural consistency of the whole population.
    pub fn audit(&self) -> Result<()> {
        if self.networks.len() > self.config.max_size {
            return Err(Error::structural(format!(
                "{} networks exceed max_size {}",
                self.networks.len(),
                self.config.max_size
            )));
        }
        for n in &self.networks {
            n.validate()?;
        }
        match &self.registry {
            Some(r) => r.audit(&self.networks),
            None => Ok(()),
        }
    }

    fn check_data(&self, train: &Dataset, test: &Dataset) -> Result<()> {
        for ds in [train, test] {
            if ds.shape() != self.input || ds.classes() != self.classes {
                return Err(Error::input(format!(
                    "dataset is {} with {} classes; the ecosystem expects {} with {}",
                    ds.shape(),
                    ds.classes(),
                    self.input,
                    self.classes
                )));
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::input("training and test sets must be non-empty"));
        }
        Ok(())
    }

    /// Sets relative fitness and complexity within each species, or over the
    /// whole population without speciation.
    pub fn calibrate(&mut self) {
        if self.registry.is_none() {
            if !self.networks.is_empty() {
                calibrate(self.networks.iter_mut());
            }
            return;
        }
        let mut groups: BTreeMap<_, Vec<&mut Network<S>>> = BTreeMap::new();
        for n in &mut self.networks {
            groups.entry(n.species).or_default().push(n);
        }
        for group in groups.into_values() {
            calibrate(group);
        }
    }

    /// Ids protected from culling as champions.
    fn champions(&mut self) -> BTreeSet<NetworkId> {
        match &mut self.registry {
            Some(r) => {
                r.update_champions(&self.networks);
                r.champions().collect()
            }
            None => self
                .networks
                .iter()
                .fold(None::<&Network<S>>, |best, n| match best {
                    Some(b) if b.absolute_fitness >= n.absolute_fitness => Some(b),
                    _ => Some(n),
                })
                .map(|n| n.id())
                .into_iter()
                .collect(),
        }
    }

    fn pick_parents(&mut self) -> Option<(usize, usize)> {
        match &self.registry {
            Some(registry) => {
                let index: BTreeMap<NetworkId, usize> =
                    self.networks.iter().enumerate().map(|(i, n)| (n.id(), i)).collect();
                let groups: Vec<Vec<usize>> = registry
                    .iter()
                    .map(|s| s.members.iter().filter_map(|m| index.get(m).copied()).collect::<Vec<_>>())
                    .filter(|m| m.len() >= 2)
                    .collect();
                if groups.is_empty() {
                    return None;
                }
                let weights: Vec<f64> = groups
                    .iter()
                    .map(|g| mean(g.iter().map(|&i| self.networks[i].absolute_fitness)).unwrap_or(0.0))
                    .collect();
                let g = weighted_choice(&weights, &mut self.rng)
                    .unwrap_or_else(|| self.rng.random_range(0..groups.len()));
                let members = &groups[g];
                let a = self.pick_by_fitness(members, None);
                let b = self.pick_by_fitness(members, Some(a));
                Some((a, b))
            }
            None => {
                let n = self.networks.len();
                if n < 2 {
                    return None;
                }
                for _ in 0..PAIR_ATTEMPTS {
                    let a = self.rng.random_range(0..n);
                    let mut b = self.rng.random_range(0..n - 1);
                    if b >= a {
                        b += 1;
                    }
                    let s = similarity(
                        &GenomeKey::of(&self.networks[a]),
                        &GenomeKey::of(&self.networks[b]),
                    );
                    if self.rng.random_bool(s) {
                        return Some((a, b));
                    }
                }
                None
            }
        }
    }

    /// Member index drawn with probability proportional to relative fitness.
    fn pick_by_fitness(&mut self, members: &[usize], exclude: Option<usize>) -> usize {
        let pool: Vec<usize> = members.iter().copied().filter(|&i| Some(i) != exclude).collect();
        let weights: Vec<f64> = pool.iter().map(|&i| self.networks[i].relative_fitness).collect();
        let k = weighted_choice(&weights, &mut self.rng)
            .unwrap_or_else(|| self.rng.random_range(0..pool.len()));
        pool[k]
    }

    /// One full generation: train and evaluate, calibrate, cross over,
    /// mutate, cull, and report.
    pub fn run_generation(
        &mut self,
        train: &Dataset,
        test: &Dataset,
        workers: &Workers,
    ) -> Result<GenerationReport> {
        self.check_data(train, test)?;
        for n in &mut self.networks {
            n.is_new_offspring = false;
        }

        // train and evaluate, each network on its own fresh subset
        let fraction = self.config.train_subset_fraction;
        let batch = self.config.batch_size;
        let opt = self.config.optimizer;
        let results = workers.map(&mut self.networks, |net| -> Result<(NetworkId, u64)> {
            let indices = sample_subset(train.len(), fraction, net.rng_mut());
            net.train_epoch(train, &indices, batch, &opt)?;
            net.evaluate(test)?;
            Ok((net.id(), subset_hash(&indices)))
        });
        let subset_hashes = results.into_iter().collect::<Result<Vec<_>>>()?;
        let best = self.networks.iter().map(|n| n.absolute_fitness).fold(0.0, f64::max);
        self.highest_fitness = self.highest_fitness.max(best);
        let average_fitness = mean(self.networks.iter().map(|n| n.absolute_fitness)).unwrap_or(0.0);

        self.calibrate();

        // crossover; children are scored before any training
        let mut children = Vec::new();
        for _ in 0..self.config.offspring_per_generation() {
            let Some((a, b)) = self.pick_parents() else { break };
            let id = self.take_id();
            let child_rng = stream(self.config.master_seed, id.0);
            let (mut child, _) =
                crossover(&self.networks[a], &self.networks[b], id, child_rng, &mut self.rng)?;
            child.evaluate(test)?;
            children.push(child);
        }
        let offspring_fitness = mean(children.iter().map(|c| c.absolute_fitness));
        let offspring: Vec<NetworkId> = children.iter().map(|c| c.id()).collect();
        for mut child in children {
            if let Some(r) = &mut self.registry {
                child.species = r.join(child.id(), &GenomeKey::of(&child));
                if child.species.is_none() {
                    return Err(Error::structural(format!(
                        "offspring {} has a genome outside its parents' species",
                        child.id()
                    )));
                }
            }
            self.networks.push(child);
        }

        // mutation of everything that was not just born
        let mut mutations = Vec::new();
        for i in 0..self.networks.len() {
            if self.networks[i].is_new_offspring
                || !self.rng.random_bool(self.config.mutation_probability)
            {
                continue;
            }
            let outcome = mutate(&mut self.networks[i], self.registry.as_mut(), &mut self.rng);
            mutations.push((self.networks[i].id(), outcome));
        }
        let failed = mutations
            .iter()
            .filter(|(_, o)| matches!(o, MutationOutcome::Failed(_)))
            .count();

        let champions = self.champions();
        let species_of: BTreeMap<NetworkId, _> =
            self.networks.iter().map(|n| (n.id(), n.species)).collect();
        let cull_report = cull(&mut self.networks, self.config.max_size, &champions, &mut self.rng);
        if let Some(r) = &mut self.registry {
            for id in &cull_report.removed {
                if let Some(Some(s)) = species_of.get(id) {
                    r.leave(*id, *s);
                }
            }
            r.update_champions(&self.networks);
        }

        self.generation += 1;
        let species_count = match &self.registry {
            Some(r) => r.len(),
            None => self.networks.iter().map(GenomeKey::of).collect::<BTreeSet<_>>().len(),
        };
        let metrics = GenerationMetrics {
            generation: self.generation,
            highest_fitness: self.highest_fitness,
            average_fitness,
            average_offspring_fitness_before_bp: offspring_fitness,
            species_count,
            mean_parameter_count: mean(self.networks.iter().map(|n| n.parameter_count() as f64))
                .unwrap_or(0.0),
            failed_mutation_count: failed,
        };
        Ok(GenerationReport { metrics, subset_hashes, offspring, mutations, cull: cull_report })
    }
}
