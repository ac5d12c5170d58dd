//! `epinet`: run, resume and inspect neuroevolution experiments.

mod config;
mod task;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use epinet::ecosystem::{GenerationMetrics, MetricsWriter, Workers};
use epinet::genome::GenomeKey;
use epinet::Ecosystem;

use config::{Overrides, RunConfig};
use task::Task;

const CHECKPOINT_FILE: &str = "checkpoint.bin";
const CONFIG_ECHO_FILE: &str = "config.json";

#[derive(Parser)]
#[command(name = "epinet", version, about = "Epigenetic neuroevolution of convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Start a run (or continue one with --resume).
    Run {
        #[command(flatten)]
        overrides: Overrides,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Continue a run from its checkpoint up to its generation count.
    Resume {
        checkpoint: PathBuf,
        /// Raise (or lower) the target generation count.
        #[arg(long)]
        generations: Option<u32>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print a summary of a checkpoint.
    Inspect { checkpoint: PathBuf },
}

/// An error with the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn runtime(e: epinet::Error) -> CliError {
    CliError::runtime(e.to_string())
}

fn seed_from_clock() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

fn summary_line(m: &GenerationMetrics) -> String {
    let offspring = m
        .average_offspring_fitness_before_bp
        .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    format!(
        "generation {:>4}  highest {:.4}  average {:.4}  offspring-pre-bp {}  species {}",
        m.generation, m.highest_fitness, m.average_fitness, offspring, m.species_count
    )
}

fn cmd_run(overrides: &Overrides) -> Result<(), CliError> {
    let mut cfg = match &overrides.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    if cfg.master_seed.is_none() {
        cfg.master_seed = Some(seed_from_clock());
    }
    cfg.validate()?;
    let task = Task::parse(&cfg.task)?;
    let seed = cfg.master_seed.expect("resolved above");
    let (train, test) = task.load(cfg.data_dir.as_deref(), seed)?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        CliError::config(format!("out_dir: cannot create {}: {e}", cfg.out_dir.display()))
    })?;
    let echo = serde_json::to_string_pretty(&cfg).expect("config serializes");
    let echo_path = cfg.out_dir.join(CONFIG_ECHO_FILE);
    std::fs::write(&echo_path, echo + "\n")
        .map_err(|e| CliError::runtime(format!("{}: {e}", echo_path.display())))?;

    let mut eco = Ecosystem::init(cfg.ecosystem(), train.shape(), train.classes()).map_err(|e| {
        match e {
            epinet::Error::Config(m) => CliError::config(m),
            other => runtime(other),
        }
    })?;
    let extra = serde_json::to_value(&cfg).expect("config serializes");
    eco.save(&cfg.out_dir.join(CHECKPOINT_FILE), &extra).map_err(runtime)?;
    let writer = MetricsWriter::create(&cfg.out_dir).map_err(runtime)?;
    execute(&mut eco, &cfg, &train, &test, writer, &extra)
}

fn cmd_resume(path: &Path, generations: Option<u32>, threads: Option<usize>) -> Result<(), CliError> {
    let (mut eco, extra) = Ecosystem::load(path).map_err(runtime)?;
    let mut cfg: RunConfig = serde_json::from_value(extra)
        .map_err(|e| CliError::runtime(format!("checkpoint run config: {e}")))?;
    if let Some(g) = generations {
        cfg.generations = g;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    eco.set_generations(cfg.generations);
    if eco.is_finished() {
        println!("nothing to do: generation {} of {} already reached", eco.generation(), cfg.generations);
        return Ok(());
    }
    let task = Task::parse(&cfg.task)?;
    let seed = cfg.master_seed.unwrap_or(eco.config().master_seed);
    let (train, test) = task.load(cfg.data_dir.as_deref(), seed)?;
    let writer = MetricsWriter::resume(&cfg.out_dir, eco.generation()).map_err(runtime)?;
    let extra = serde_json::to_value(&cfg).expect("config serializes");
    execute(&mut eco, &cfg, &train, &test, writer, &extra)
}

fn execute(
    eco: &mut Ecosystem,
    cfg: &RunConfig,
    train: &epinet::data::Dataset,
    test: &epinet::data::Dataset,
    mut writer: MetricsWriter,
    extra: &serde_json::Value,
) -> Result<(), CliError> {
    let workers = Workers::new(cfg.threads).map_err(|e| CliError::config(e.to_string()))?;
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    while !eco.is_finished() {
        let report = eco.run_generation(train, test, &workers).map_err(runtime)?;
        writer.write(&report.metrics).map_err(runtime)?;
        println!("{}", summary_line(&report.metrics));
        let g = eco.generation();
        if g.is_multiple_of(cfg.checkpoint_every) || eco.is_finished() {
            eco.save(&checkpoint, extra).map_err(runtime)?;
        }
    }
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<(), CliError> {
    let (eco, _) = Ecosystem::load(path).map_err(runtime)?;
    let c = eco.config();
    println!(
        "generation {} of {}  networks {}  highest fitness {:.4}  input {}  classes {}",
        eco.generation(),
        c.generations,
        eco.networks().len(),
        eco.highest_fitness(),
        eco.input_shape(),
        eco.classes()
    );
    if let Some(registry) = eco.registry() {
        println!("\nspecies ({} of at most {})", registry.len(), registry.cap());
        println!("{:<6} {:<8} {:<10} genome", "id", "members", "champion");
        for s in registry.iter() {
            let champion = s.champion.map_or_else(|| "-".into(), |c| c.to_string());
            println!("{:<6} {:<8} {:<10} {}", s.id.to_string(), s.members.len(), champion, s.key);
        }
    }
    println!("\n{:<6} {:<7} {:>10} {:>5} {:>8} {:>8}  genome", "id", "species", "params", "age", "fitness", "rel");
    for n in eco.networks() {
        let species = n.species.map_or_else(|| "-".into(), |s| s.to_string());
        println!(
            "{:<6} {:<7} {:>10} {:>5} {:>8.4} {:>8.4}  {}",
            n.id().to_string(),
            species,
            n.parameter_count(),
            n.age,
            n.absolute_fitness,
            n.relative_fitness,
            GenomeKey::of(n)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run { overrides, resume: Some(path) } => {
            cmd_resume(path, overrides.generations, overrides.threads)
        }
        Command::Run { overrides, resume: None } => cmd_run(overrides),
        Command::Resume { checkpoint, generations, threads } => {
            cmd_resume(checkpoint, *generations, *threads)
        }
        Command::Inspect { checkpoint } => cmd_inspect(checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
