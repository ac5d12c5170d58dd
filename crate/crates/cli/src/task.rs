//! Dataset selection.

use std::path::{Path, PathBuf};

use epinet::data::{load_cifar10_dir, load_mnist_dir, synthetic_task, Dataset, SyntheticTask};
use epinet::rng::stream;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Mnist,
    FashionMnist,
    Cifar10,
    Synthetic(SyntheticTask),
}

impl Task {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "mnist" => Ok(Task::Mnist),
            "fashion-mnist" => Ok(Task::FashionMnist),
            "cifar10" => Ok(Task::Cifar10),
            other => match other.strip_prefix("synthetic:") {
                Some(s) => s
                    .parse()
                    .map(Task::Synthetic)
                    .map_err(|e: epinet::Error| CliError::config(format!("task: {e}"))),
                None => Err(CliError::config(format!(
                    "task: unknown task {other:?} (expected mnist, fashion-mnist, cifar10 or synthetic:<name>)"
                ))),
            },
        }
    }

    fn default_dir(self) -> PathBuf {
        Path::new("data").join(match self {
            Task::Mnist => "mnist",
            Task::FashionMnist => "fashion-mnist",
            Task::Cifar10 => "cifar-10-batches-bin",
            Task::Synthetic(_) => "",
        })
    }

    /// `(train, test)`; synthetic tasks are generated from the master seed.
    pub fn load(self, data_dir: Option<&Path>, seed: u64) -> Result<(Dataset, Dataset), CliError> {
        let dir = data_dir.map_or_else(|| self.default_dir(), Path::to_path_buf);
        let loaded = match self {
            Task::Mnist | Task::FashionMnist => load_mnist_dir(&dir),
            Task::Cifar10 => load_cifar10_dir(&dir),
            Task::Synthetic(t) => Ok(synthetic_task(t, &mut stream(seed, u64::MAX - 1))),
        };
        loaded.map_err(|e| CliError::data(format!("loading {}: {e}", dir.display())))
    }
}
