//! Structural identity of networks: genome keys, similarity, structural
//! statistics and the species registry.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureShape, LayerKind, Network, NetworkId};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpeciesId(pub u64);

impl fmt::Display for SpeciesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Ordered `(kind, node count)` per layer; weights, shapes and strides excluded.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GenomeKey(pub Vec<(LayerKind, usize)>);

impl GenomeKey {
    pub fn of<S: Scalar>(net: &Network<S>) -> Self {
        GenomeKey(net.layers().iter().map(|l| (l.kind(), l.node_count())).collect())
    }

    pub fn total_nodes(&self) -> usize {
        self.0.iter().map(|&(_, n)| n).sum()
    }

    fn counts_of(&self, kind: LayerKind) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().filter(move |(k, _)| *k == kind).map(|&(_, n)| n)
    }
}

impl fmt::Display for GenomeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (kind, n)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "({kind},{n})")?;
        }
        f.write_str("]")
    }
}

/// Σ of the smaller node count over layers paired up in order within each kind.
pub fn layer_intersection(a: &GenomeKey, b: &GenomeKey) -> usize {
    [LayerKind::Conv, LayerKind::Fc]
        .into_iter()
        .map(|kind| {
            a.counts_of(kind)
                .zip(b.counts_of(kind))
                .map(|(x, y)| x.min(y))
                .sum::<usize>()
        })
        .sum()
}

/// `O / (N_a + N_b − O)`; 1 for identical keys, 0 for disjoint ones.
pub fn similarity(a: &GenomeKey, b: &GenomeKey) -> f64 {
    let o = layer_intersection(a, b);
    let union = a.total_nodes() + b.total_nodes() - o;
    if union == 0 {
        return 1.0;
    }
    o as f64 / union as f64
}

/// Per-network structural statistics used to weight mutation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    /// Weight connections per node.
    pub mean_connections: f64,
    pub mean_nodes: f64,
    /// Population standard deviation of the per-layer node count.
    pub std_nodes: f64,
    pub conv_layers: usize,
    /// Mean over conv layers of kernel count × output area.
    pub mean_conv_outputs: f64,
    /// Mean node count over all layers.
    pub nodes_per_layer: f64,
    /// Mean kernel area over every conv kernel; 0 without conv layers.
    pub mean_kernel_area: f64,
}

impl NetworkStats {
    pub fn of<S: Scalar>(net: &Network<S>) -> Self {
        let layers = net.layers();
        let counts: Vec<f64> = layers.iter().map(|l| l.node_count() as f64).collect();
        let n_layers = counts.len() as f64;
        let mean_nodes = counts.iter().sum::<f64>() / n_layers;
        let var = counts.iter().map(|c| (c - mean_nodes).powi(2)).sum::<f64>() / n_layers;
        let shapes = net.feature_shapes();
        let mut conv_layers = 0;
        let mut outputs = 0.0;
        let mut kernels = 0usize;
        let mut area = 0usize;
        for (i, layer) in layers.iter().enumerate() {
            if let Some(conv) = layer.as_conv() {
                conv_layers += 1;
                if let FeatureShape::Spatial(s) = shapes[i + 1] {
                    outputs += s.len() as f64;
                }
                kernels += conv.kernels.len();
                area += conv.kernels.iter().map(|k| k.shape().area()).sum::<usize>();
            }
        }
        NetworkStats {
            mean_connections: net.connection_count() as f64 / net.node_count() as f64,
            mean_nodes,
            std_nodes: var.sqrt(),
            conv_layers,
            mean_conv_outputs: if conv_layers == 0 { 0.0 } else { outputs / conv_layers as f64 },
            nodes_per_layer: mean_nodes,
            mean_kernel_area: if kernels == 0 { 0.0 } else { area as f64 / kernels as f64 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub id: SpeciesId,
    pub key: GenomeKey,
    pub members: Vec<NetworkId>,
    pub champion: Option<NetworkId>,
}

/// Live species, at most `cap` of them. Empty species are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesRegistry {
    cap: usize,
    next_id: u64,
    species: BTreeMap<SpeciesId, Species>,
}

impl SpeciesRegistry {
    pub fn new(cap: usize) -> Self {
        SpeciesRegistry { cap, next_id: 1, species: BTreeMap::new() }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Species> {
        self.species.values()
    }

    pub fn get(&self, id: SpeciesId) -> Option<&Species> {
        self.species.get(&id)
    }

    pub fn find(&self, key: &GenomeKey) -> Option<SpeciesId> {
        self.species.values().find(|s| &s.key == key).map(|s| s.id)
    }

    /// Whether a network with `key` has somewhere to live.
    pub fn admits(&self, key: &GenomeKey) -> bool {
        self.find(key).is_some() || self.species.len() < self.cap
    }

    /// Creates an empty species for a novel key, ignoring the cap check
    /// callers have already made.
    fn create(&mut self, key: GenomeKey) -> SpeciesId {
        let id = SpeciesId(self.next_id);
        self.next_id += 1;
        self.species.insert(id, Species { id, key, members: Vec::new(), champion: None });
        id
    }

    /// Adds `net` to the species matching `key`, creating it under the cap.
    /// Returns `None` when the key is novel and the cap is reached.
    pub fn join(&mut self, net: NetworkId, key: &GenomeKey) -> Option<SpeciesId> {
        let id = match self.find(key) {
            Some(id) => id,
            None if self.species.len() < self.cap => self.create(key.clone()),
            None => return None,
        };
        let members = &mut self.species.get_mut(&id).expect("live species").members;
        if let Err(pos) = members.binary_search(&net) {
            members.insert(pos, net);
        }
        Some(id)
    }

    /// Removes `net` from `species`; drops the species once empty.
    pub fn leave(&mut self, net: NetworkId, species: SpeciesId) {
        if let Some(s) = self.species.get_mut(&species) {
            s.members.retain(|&m| m != net);
            if s.champion == Some(net) {
                s.champion = None;
            }
            if s.members.is_empty() {
                self.species.remove(&species);
            }
        }
    }

    /// Recomputes each champion as the member with the highest fitness (lowest id on ties).
    pub fn update_champions<S: Scalar>(&mut self, nets: &[Network<S>]) {
        let by_id: BTreeMap<NetworkId, &Network<S>> = nets.iter().map(|n| (n.id(), n)).collect();
        for s in self.species.values_mut() {
            s.champion = s
                .members
                .iter()
                .filter_map(|id| by_id.get(id))
                .fold(None::<&Network<S>>, |best, n| match best {
                    Some(b) if b.absolute_fitness >= n.absolute_fitness => Some(b),
                    _ => Some(n),
                })
                .map(|n| n.id());
        }
    }

    pub fn champions(&self) -> impl Iterator<Item = NetworkId> + '_ {
        self.species.values().filter_map(|s| s.champion)
    }

    /// Full consistency check against the population: every network in exactly
    /// one species, every species key equal to its members' keys, no stale ids.
    pub fn audit<S: Scalar>(&self, nets: &[Network<S>]) -> Result<()> {
        let fail = |m: String| Err(Error::structural(format!("species audit: {m}")));
        if self.species.len() > self.cap {
            return fail(format!("{} species exceed the cap of {}", self.species.len(), self.cap));
        }
        let mut owner: BTreeMap<NetworkId, SpeciesId> = BTreeMap::new();
        for s in self.species.values() {
            if s.members.is_empty() {
                return fail(format!("{} is empty", s.id));
            }
            for &m in &s.members {
                if owner.insert(m, s.id).is_some() {
                    return fail(format!("{m} belongs to two species"));
                }
            }
        }
        if owner.len() != nets.len() {
            return fail(format!("{} members for {} networks", owner.len(), nets.len()));
        }
        for n in nets {
            let Some(&sid) = owner.get(&n.id()) else {
                return fail(format!("{} has no species", n.id()));
            };
            if n.species != Some(sid) {
                return fail(format!("{} records {:?} but is listed in {sid}", n.id(), n.species));
            }
            let key = GenomeKey::of(n);
            if key != self.species[&sid].key {
                return fail(format!("{} has key {key} inside {sid}", n.id()));
            }
        }
        Ok(())
    }
}
