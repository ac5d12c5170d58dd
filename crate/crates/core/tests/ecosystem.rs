use std::collections::BTreeSet;

use epinet::data::{synthetic_task, Dataset, ImageShape, SyntheticTask};
use epinet::ecosystem::{EcosystemConfig, Workers, CHECKPOINT_VERSION};
use epinet::genome::GenomeKey;
use epinet::model::LayerKind;
use epinet::rng::stream;
use epinet::{Ecosystem, EcosystemF32, Error};

fn bars() -> (Dataset, Dataset) {
    synthetic_task(SyntheticTask::Bars, &mut stream(5, 5))
}

fn small(seed: u64) -> EcosystemConfig {
    EcosystemConfig {
        initial_size: 6,
        max_size: 9,
        initial_species: 2,
        species_cap: 3,
        generations: 3,
        master_seed: seed,
        ..EcosystemConfig::default()
    }
}

#[test]
fn three_generation_run() {
    let (train, test) = bars();
    let mut eco = Ecosystem::init(small(1), train.shape(), train.classes()).unwrap();
    let mut rows = Vec::new();
    let mut hashes = BTreeSet::new();
    while !eco.is_finished() {
        let report = eco.run_generation(&train, &test, &Workers::sequential()).unwrap();
        eco.audit().unwrap();
        assert_eq!(eco.networks().len(), 9);
        assert_eq!(report.offspring.len(), 3);
        assert!(report.metrics.species_count <= 3);
        assert!(report.metrics.average_offspring_fitness_before_bp.is_some());
        for (_, h) in &report.subset_hashes {
            hashes.insert(*h);
        }
        rows.push(report.metrics);
    }
    assert_eq!(rows.iter().map(|m| m.generation).collect::<Vec<_>>(), [1, 2, 3]);
    assert!(rows.windows(2).all(|w| w[1].highest_fitness >= w[0].highest_fitness));
    assert!(rows.iter().all(|m| (0.0..=1.0).contains(&m.highest_fitness)));
    // training subsets are redrawn each generation
    assert!(hashes.len() > 9);
}

#[test]
fn without_offspring_or_mutation_only_training_happens() {
    let (train, test) = bars();
    let config = EcosystemConfig {
        offspring_target: Some(0),
        mutation_probability: 0.0,
        ..small(2)
    };
    let mut eco = Ecosystem::init(config, train.shape(), train.classes()).unwrap();
    let keys: Vec<_> = eco.networks().iter().map(|n| (n.id(), GenomeKey::of(n))).collect();
    while !eco.is_finished() {
        let report = eco.run_generation(&train, &test, &Workers::sequential()).unwrap();
        assert!(report.offspring.is_empty());
        assert!(report.mutations.is_empty());
        assert!(report.cull.removed.is_empty());
        assert_eq!(report.metrics.average_offspring_fitness_before_bp, None);
    }
    let after: Vec<_> = eco.networks().iter().map(|n| (n.id(), GenomeKey::of(n))).collect();
    assert_eq!(keys, after);
    assert!(eco.networks().iter().all(|n| n.age == 3));
}

#[test]
fn initial_species_split_evenly() {
    let config = EcosystemConfig { initial_size: 64, initial_species: 8, ..EcosystemConfig::default() };
    let eco = Ecosystem::init(config, ImageShape::new(1, 28, 28), 10).unwrap();
    let registry = eco.registry().unwrap();
    assert_eq!(registry.len(), 8);
    assert!(registry.iter().all(|s| s.members.len() == 8));
    let keys: BTreeSet<String> = registry.iter().map(|s| s.key.to_string()).collect();
    assert_eq!(keys.len(), 8);
    assert!(keys.contains("[(FC,10)]"));
    eco.audit().unwrap();
}

#[test]
fn single_initial_species_is_minimal() {
    let config = EcosystemConfig { initial_size: 64, initial_species: 1, ..EcosystemConfig::default() };
    let eco = Ecosystem::init(config, ImageShape::new(1, 28, 28), 10).unwrap();
    let minimal = GenomeKey(vec![(LayerKind::Fc, 10)]);
    assert!(eco.networks().iter().all(|n| GenomeKey::of(n) == minimal));
    assert_eq!(eco.registry().unwrap().len(), 1);
}

#[test]
fn unspeciated_start_is_diverse() {
    let mut diverse = 0;
    for seed in 0..50 {
        let config = EcosystemConfig {
            initial_size: 16,
            speciation_enabled: false,
            master_seed: seed,
            ..EcosystemConfig::default()
        };
        let eco = Ecosystem::init(config, ImageShape::new(1, 28, 28), 10).unwrap();
        assert!(eco.registry().is_none());
        let keys: BTreeSet<_> = eco.networks().iter().map(GenomeKey::of).collect();
        if keys.len() >= 2 {
            diverse += 1;
        }
    }
    assert_eq!(diverse, 50);
}

#[test]
fn unspeciated_run_reports_distinct_genomes() {
    let (train, test) = bars();
    let config = EcosystemConfig { speciation_enabled: false, ..small(3) };
    let mut eco = Ecosystem::init(config, train.shape(), train.classes()).unwrap();
    while !eco.is_finished() {
        let report = eco.run_generation(&train, &test, &Workers::sequential()).unwrap();
        let keys: BTreeSet<_> = eco.networks().iter().map(GenomeKey::of).collect();
        assert_eq!(report.metrics.species_count, keys.len());
    }
}

#[test]
fn checkpoint_is_stable_across_save_and_load() {
    let (train, test) = bars();
    let mut eco = Ecosystem::init(small(4), train.shape(), train.classes()).unwrap();
    eco.run_generation(&train, &test, &Workers::sequential()).unwrap();
    let extra = serde_json::json!({"note": "kept verbatim"});
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    eco.save(&path, &extra).unwrap();
    let (loaded, back) = Ecosystem::load(&path).unwrap();
    assert_eq!(back, extra);
    assert_eq!(loaded.to_checkpoint_bytes(&extra), std::fs::read(&path).unwrap());
    assert_eq!(loaded.generation(), 1);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let eco = Ecosystem::init(small(5), ImageShape::new(1, 9, 9), 2).unwrap();
    let bytes = eco.to_checkpoint_bytes(&serde_json::Value::Null);
    let message = |b: &[u8]| match Ecosystem::from_checkpoint_bytes(b) {
        Err(Error::Checkpoint(m)) => m,
        Err(other) => panic!("unexpected error kind: {other}"),
        Ok(_) => panic!("damaged checkpoint accepted"),
    };
    assert!(message(&bytes[..bytes.len() - 3]).contains("truncated"));
    assert!(message(&bytes[..10]).contains("truncated"));

    let mut wrong_version = bytes.clone();
    wrong_version[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(message(&wrong_version).contains("version"));

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(message(&bad_magic).contains("magic"));

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(message(&trailing).contains("trailing"));

    match EcosystemF32::from_checkpoint_bytes(&bytes) {
        Err(Error::Checkpoint(m)) => assert!(m.contains("f64")),
        _ => panic!("scalar mismatch accepted"),
    }
}

#[test]
fn single_precision_ecosystem_runs() {
    let (train, test) = bars();
    let mut eco = EcosystemF32::init(small(6), train.shape(), train.classes()).unwrap();
    let report = eco.run_generation(&train, &test, &Workers::sequential()).unwrap();
    assert!(report.metrics.highest_fitness > 0.0);
    let bytes = eco.to_checkpoint_bytes(&serde_json::Value::Null);
    let (back, _) = EcosystemF32::from_checkpoint_bytes(&bytes).unwrap();
    assert_eq!(back.to_checkpoint_bytes(&serde_json::Value::Null), bytes);
}

#[test]
fn invalid_configuration_names_the_key() {
    let config = EcosystemConfig { initial_size: 20, max_size: 10, ..EcosystemConfig::default() };
    match Ecosystem::init(config, ImageShape::new(1, 9, 9), 2) {
        Err(Error::Config(m)) => assert!(m.starts_with("initial_size"), "{m}"),
        _ => panic!("invalid configuration accepted"),
    }
}
