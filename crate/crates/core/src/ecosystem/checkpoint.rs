//! Binary checkpoint container.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "EPINETCK"
//! 8       4     format version, u32 little-endian
//! 12      8     header length H, u64 little-endian
//! 20      H     UTF-8 JSON header: config, counters, RNG states, species
//!               registry, per-network metadata and layer layout
//! 20+H    8     value count V, u64 little-endian
//! 28+H    8·V   f64 little-endian values
//! ```
//!
//! Values are stored network by network in population order, gene by gene in
//! layer order; each gene contributes its weights then its bias, and each of
//! those contributes value, squared-gradient average and squared-update
//! average in turn.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ecosystem, EcosystemConfig};
use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::genome::{SpeciesId, SpeciesRegistry};
use crate::model::{
    ConvKernelGene, ConvLayer, FcLayer, FcNodeGene, KernelShape, Layer, Network, NetworkId, Stride,
};
use crate::optim::Parameter;
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EPINETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    scalar: String,
    config: EcosystemConfig,
    input: ImageShape,
    classes: usize,
    generation: u32,
    next_id: u64,
    highest_fitness: f64,
    rng: StreamRng,
    registry: Option<SpeciesRegistry>,
    networks: Vec<NetworkRecord>,
    /// Caller-owned metadata, stored verbatim.
    extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkRecord {
    id: NetworkId,
    age: u32,
    absolute_fitness: f64,
    relative_fitness: f64,
    relative_complexity: f64,
    is_new_offspring: bool,
    species: Option<SpeciesId>,
    rng: StreamRng,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LayerRecord {
    Conv { stride: Stride, depth: usize, kernels: Vec<KernelShape> },
    Fc { fan_in: usize, nodes: usize },
}

fn scalar_name<S: Scalar>() -> &'static str {
    std::any::type_name::<S>()
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            corrupt(format!(
                "truncated: {what} needs {n} bytes at offset {} but the file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn push_parameter<S: Scalar>(p: &Parameter<S>, out: &mut Vec<f64>) {
    for t in [p.value(), p.sq_grad(), p.sq_update()] {
        out.extend(t.data().iter().map(|v| v.widen()));
    }
}

struct Values<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Values<'_> {
    fn tensor<S: Scalar>(&mut self, shape: &[usize]) -> Result<Tensor<S>> {
        let n: usize = shape.iter().product();
        let end = self.pos + n;
        if end * 8 > self.data.len() {
            return Err(corrupt("value blob is shorter than the layout requires"));
        }
        let data = self.data[self.pos * 8..end * 8]
            .chunks_exact(8)
            .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        self.pos = end;
        Tensor::from_vec(shape, data).map_err(|e| corrupt(e.to_string()))
    }

    fn parameter<S: Scalar>(&mut self, shape: &[usize]) -> Result<Parameter<S>> {
        let value = self.tensor(shape)?;
        let sq_grad = self.tensor(shape)?;
        let sq_update = self.tensor(shape)?;
        Parameter::from_parts(value, sq_grad, sq_update)
            .ok_or_else(|| corrupt("negative optimiser accumulator"))
    }
}

impl<S: Scalar> Ecosystem<S> {
    /// Serialises the whole ecosystem; `extra` is stored verbatim in the header.
    pub fn to_checkpoint_bytes(&self, extra: &serde_json::Value) -> Vec<u8> {
        let mut values = Vec::new();
        let networks = self
            .networks
            .iter()
            .map(|n| {
                n.for_each_parameter(|p| push_parameter(p, &mut values));
                NetworkRecord {
                    id: n.id(),
                    age: n.age,
                    absolute_fitness: n.absolute_fitness,
                    relative_fitness: n.relative_fitness,
                    relative_complexity: n.relative_complexity,
                    is_new_offspring: n.is_new_offspring,
                    species: n.species,
                    rng: n.rng().clone(),
                    layers: n
                        .layers()
                        .iter()
                        .map(|l| match l {
                            Layer::Conv(c) => LayerRecord::Conv {
                                stride: c.stride,
                                depth: c.kernels[0].depth(),
                                kernels: c.kernels.iter().map(ConvKernelGene::shape).collect(),
                            },
                            Layer::Fc(f) => LayerRecord::Fc {
                                fan_in: f.nodes[0].fan_in(),
                                nodes: f.nodes.len(),
                            },
                        })
                        .collect(),
                }
            })
            .collect();
        let header = Header {
            scalar: scalar_name::<S>().to_string(),
            config: self.config.clone(),
            input: self.input,
            classes: self.classes,
            generation: self.generation,
            next_id: self.next_id,
            highest_fitness: self.highest_fitness,
            rng: self.rng.clone(),
            registry: self.registry.clone(),
            networks,
            extra: extra.clone(),
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(28 + json.len() + 8 * values.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Rebuilds an ecosystem and its `extra` metadata from checkpoint bytes.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!(
                "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header_len = r.u64("header length")? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
            .map_err(|e| corrupt(format!("header: {e}")))?;
        if header.scalar != scalar_name::<S>() {
            return Err(corrupt(format!(
                "checkpoint holds {} values, expected {}",
                header.scalar,
                scalar_name::<S>()
            )));
        }
        let count = r.u64("value count")? as usize;
        let blob = r.take(count.checked_mul(8).ok_or_else(|| corrupt("value count overflows"))?, "values")?;
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut values = Values { data: blob, pos: 0 };
        let mut networks = Vec::with_capacity(header.networks.len());
        for rec in header.networks {
            let mut layers = Vec::with_capacity(rec.layers.len());
            for l in rec.layers {
                layers.push(match l {
                    LayerRecord::Conv { stride, depth, kernels } => {
                        let mut genes = Vec::with_capacity(kernels.len());
                        for k in kernels {
                            genes.push(ConvKernelGene {
                                weights: values.parameter(&[depth, k.height(), k.width()])?,
                                bias: values.parameter(&[1])?,
                            });
                        }
                        Layer::Conv(ConvLayer { kernels: genes, stride })
                    }
                    LayerRecord::Fc { fan_in, nodes } => {
                        let mut genes = Vec::with_capacity(nodes);
                        for _ in 0..nodes {
                            genes.push(FcNodeGene {
                                weights: values.parameter(&[fan_in])?,
                                bias: values.parameter(&[1])?,
                            });
                        }
                        Layer::Fc(FcLayer { nodes: genes })
                    }
                });
            }
            let mut net = Network::new(rec.id, header.input, header.classes, layers, rec.rng)
                .map_err(|e| corrupt(e.to_string()))?;
            net.age = rec.age;
            net.absolute_fitness = rec.absolute_fitness;
            net.relative_fitness = rec.relative_fitness;
            net.relative_complexity = rec.relative_complexity;
            net.is_new_offspring = rec.is_new_offspring;
            net.species = rec.species;
            networks.push(net);
        }
        if values.pos * 8 != blob.len() {
            return Err(corrupt("value blob is longer than the layout requires"));
        }
        header.config.validate().map_err(|e| corrupt(e.to_string()))?;
        let eco = Ecosystem {
            config: header.config,
            input: header.input,
            classes: header.classes,
            networks,
            registry: header.registry,
            generation: header.generation,
            next_id: header.next_id,
            highest_fitness: header.highest_fitness,
            rng: header.rng,
        };
        eco.audit().map_err(|e| corrupt(e.to_string()))?;
        Ok((eco, header.extra))
    }

    /// Writes a checkpoint atomically: a temporary sibling file is written,
    /// synced and renamed over `path`, so an interruption leaves the previous
    /// checkpoint intact.
    pub fn save(&self, path: &Path, extra: &serde_json::Value) -> Result<()> {
        use std::io::Write;
        let bytes = self.to_checkpoint_bytes(extra);
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes)
            .and_then(|_| f.sync_all())
            .map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
