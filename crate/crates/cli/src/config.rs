//! Run configuration: JSON file, then flag overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use epinet::ecosystem::EcosystemConfig;
use epinet::optim::Adadelta;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `mnist`, `fashion-mnist`, `cifar10`, or `synthetic:<two-blobs|bars|xor-patches>`.
    pub task: String,
    /// Dataset directory; defaults to `data/<task>` (`data/cifar-10-batches-bin` for CIFAR-10).
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub generations: u32,
    pub initial_size: usize,
    pub max_size: usize,
    pub initial_species: usize,
    pub species_cap: usize,
    pub speciation_enabled: bool,
    pub train_subset_fraction: f64,
    pub batch_size: usize,
    pub mutation_probability: f64,
    pub offspring_target: Option<usize>,
    /// Drawn from the clock when absent; the chosen value is echoed.
    pub master_seed: Option<u64>,
    /// Worker threads for training; 0 means one per core.
    pub threads: usize,
    /// Checkpoint after every this many generations (and after the last).
    pub checkpoint_every: u32,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eco = EcosystemConfig::default();
        RunConfig {
            task: "mnist".into(),
            data_dir: None,
            out_dir: PathBuf::from("runs/latest"),
            generations: eco.generations,
            initial_size: eco.initial_size,
            max_size: eco.max_size,
            initial_species: eco.initial_species,
            species_cap: eco.species_cap,
            speciation_enabled: eco.speciation_enabled,
            train_subset_fraction: eco.train_subset_fraction,
            batch_size: eco.batch_size,
            mutation_probability: eco.mutation_probability,
            offspring_target: eco.offspring_target,
            master_seed: None,
            threads: 0,
            checkpoint_every: 1,
            adadelta_rho: eco.optimizer.rho,
            adadelta_eps: eco.optimizer.eps,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Ecosystem settings; `master_seed` must already be resolved.
    pub fn ecosystem(&self) -> EcosystemConfig {
        EcosystemConfig {
            initial_size: self.initial_size,
            max_size: self.max_size,
            initial_species: self.initial_species,
            species_cap: self.species_cap,
            generations: self.generations,
            train_subset_fraction: self.train_subset_fraction,
            batch_size: self.batch_size,
            mutation_probability: self.mutation_probability,
            offspring_target: self.offspring_target,
            speciation_enabled: self.speciation_enabled,
            master_seed: self.master_seed.expect("seed resolved before use"),
            optimizer: Adadelta { rho: self.adadelta_rho, eps: self.adadelta_eps },
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.checkpoint_every == 0 {
            return Err(CliError::config("checkpoint_every: must be at least 1"));
        }
        crate::task::Task::parse(&self.task)?;
        let mut eco = self.ecosystem();
        eco.master_seed = 0;
        eco.validate().map_err(|e| CliError::config(e.to_string()))
    }
}

/// Flags of `run`; each overrides the matching config-file key.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// JSON config file; flags given alongside it win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub generations: Option<u32>,
    #[arg(long)]
    pub initial_size: Option<usize>,
    #[arg(long)]
    pub max_size: Option<usize>,
    /// Initial species count.
    #[arg(long)]
    pub species: Option<usize>,
    #[arg(long)]
    pub species_cap: Option<usize>,
    /// Cross over any pair, gated by genome similarity, instead of within species.
    #[arg(long)]
    pub no_speciation: bool,
    #[arg(long)]
    pub subset_fraction: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub mutation_prob: Option<f64>,
    #[arg(long)]
    pub offspring_target: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u32>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$flag {
                    cfg.$field = v.clone();
                })*
            };
        }
        set!(
            task => task,
            out_dir => out_dir,
            generations => generations,
            initial_size => initial_size,
            max_size => max_size,
            species => initial_species,
            species_cap => species_cap,
            subset_fraction => train_subset_fraction,
            batch_size => batch_size,
            mutation_prob => mutation_probability,
            threads => threads,
            checkpoint_every => checkpoint_every,
        );
        if self.data_dir.is_some() {
            cfg.data_dir = self.data_dir.clone();
        }
        if self.offspring_target.is_some() {
            cfg.offspring_target = self.offspring_target;
        }
        if self.seed.is_some() {
            cfg.master_seed = self.seed;
        }
        if self.no_speciation {
            cfg.speciation_enabled = false;
        }
    }
}
