use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSONL: &str = "metrics.jsonl";

const CSV_HEADER: &str = "generation,highest_fitness,average_fitness,\
average_offspring_fitness_before_bp,species_count,mean_parameter_count,failed_mutation_count";

/// One row per generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    /// 1-based.
    pub generation: u32,
    /// Best test accuracy seen so far in the run.
    pub highest_fitness: f64,
    /// Mean test accuracy of the networks trained this generation.
    pub average_fitness: f64,
    /// Mean test accuracy of this generation's offspring before any training;
    /// absent when no offspring were produced.
    pub average_offspring_fitness_before_bp: Option<f64>,
    /// Live species, or distinct genomes when speciation is off.
    pub species_count: usize,
    pub mean_parameter_count: f64,
    pub failed_mutation_count: usize,
}

impl GenerationMetrics {
    pub fn csv_row(&self) -> String {
        let offspring = self
            .average_offspring_fitness_before_bp
            .map(|v| v.to_string())
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.generation,
            self.highest_fitness,
            self.average_fitness,
            offspring,
            self.species_count,
            self.mean_parameter_count,
            self.failed_mutation_count
        )
    }
}

/// Appends metrics to `metrics.csv` and `metrics.jsonl`, flushing every row.
pub struct MetricsWriter {
    csv: (PathBuf, File),
    jsonl: (PathBuf, File),
}

fn open(path: &Path, append: bool) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// Keeps the first `keep` lines of a file, dropping anything after them.
fn truncate_lines(path: &Path, keep: usize) -> Result<()> {
    let lines: Vec<String> = match File::open(path) {
        Ok(f) => BufReader::new(f)
            .lines()
            .take(keep)
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut f = open(path, false)?;
    for line in lines {
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

impl MetricsWriter {
    /// Starts fresh files in `dir`.
    pub fn create(dir: &Path) -> Result<Self> {
        let csv_path = dir.join(METRICS_CSV);
        let mut csv = open(&csv_path, false)?;
        writeln!(csv, "{CSV_HEADER}").map_err(|e| Error::io(&csv_path, e))?;
        let jsonl_path = dir.join(METRICS_JSONL);
        let jsonl = open(&jsonl_path, false)?;
        Ok(MetricsWriter { csv: (csv_path, csv), jsonl: (jsonl_path, jsonl) })
    }

    /// Reopens the files in `dir` for a run resuming after `generation`,
    /// discarding rows written after that point.
    pub fn resume(dir: &Path, generation: u32) -> Result<Self> {
        let csv_path = dir.join(METRICS_CSV);
        let jsonl_path = dir.join(METRICS_JSONL);
        if !csv_path.exists() {
            return Self::create(dir);
        }
        truncate_lines(&csv_path, 1 + generation as usize)?;
        truncate_lines(&jsonl_path, generation as usize)?;
        Ok(MetricsWriter {
            csv: (csv_path.clone(), open(&csv_path, true)?),
            jsonl: (jsonl_path.clone(), open(&jsonl_path, true)?),
        })
    }

    pub fn write(&mut self, m: &GenerationMetrics) -> Result<()> {
        let (path, f) = &mut self.csv;
        writeln!(f, "{}", m.csv_row())
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(path.as_path(), e))?;
        let json = serde_json::to_string(m).expect("metrics serialize");
        let (path, f) = &mut self.jsonl;
        writeln!(f, "{json}")
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(path.as_path(), e))
    }
}
