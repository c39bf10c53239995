use std::collections::BTreeSet;

use broomscan_core::features::{read_feature_csv, write_feature_csv, FeatureConfig};
use broomscan_core::lstm::{load_checkpoint, predict_batch, save_checkpoint, train, Checkpoint};
use broomscan_core::pipeline::{extract_scene_records, CanopyConfig};
use broomscan_core::raster::{crop, load_raster, save_raster, PlotRegion};
use broomscan_core::scenarios::{
    build_scenario_datasets, prepare_split, run_dataset, Partition, ScenarioConfig, ScenarioId,
    SmoteScope,
};
use broomscan_core::synthgen::{gen_field, gen_records, SynthConfig, STRONG_EFFECT};
use broomscan_core::{FeatureRecord, ModelConfig, TrainConfig};

fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        n_plants: 60,
        infected_fraction: 0.25,
        columns: 10,
        seed,
        ..SynthConfig::default()
    }
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn scene_survives_disk_and_yields_the_same_features() {
    let config = small_synth(3);
    let (raster, truth) = gen_field(&config, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.bsq");
    save_raster(&raster, &path).unwrap();
    let back = load_raster(&path).unwrap();
    assert_eq!(back, raster);

    let canopy = CanopyConfig::default();
    let features = FeatureConfig::default();
    let a = extract_scene_records(
        &raster,
        &truth.regions(),
        &truth.labels(),
        truth.stage,
        &canopy,
        &features,
    )
    .unwrap();
    let b = extract_scene_records(
        &back,
        &truth.regions(),
        &truth.labels(),
        truth.stage,
        &canopy,
        &features,
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(a.0.len(), config.n_plants);
}

#[test]
fn nested_crops_compose() {
    let (raster, _) = gen_field(&small_synth(4), 0).unwrap();
    let outer = PlotRegion::new("o", 16, 16, 40, 30);
    let inner = PlotRegion::new("i", 4, 6, 20, 10);
    let twice = crop(&crop(&raster, &outer).unwrap(), &inner).unwrap();
    let once = crop(&raster, &outer.compose(&inner)).unwrap();
    assert_eq!(twice, once);
}

#[test]
fn feature_csv_round_trips() {
    let (records, _) = gen_records(
        &small_synth(5),
        &CanopyConfig::default(),
        &FeatureConfig::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.csv");
    write_feature_csv(std::fs::File::create(&path).unwrap(), &records, None).unwrap();
    let back: Vec<FeatureRecord> = read_feature_csv(&path).unwrap();
    assert_eq!(back.len(), records.len());
    for (a, b) in back.iter().zip(&records) {
        assert_eq!(a.plant_id, b.plant_id);
        assert_eq!(a.label, b.label);
        assert_eq!(a.gdd_stage, b.gdd_stage);
        for (x, y) in a.features.as_slice().iter().zip(b.features.as_slice()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
        }
    }
}

#[test]
fn train_only_scope_keeps_test_plants_real_and_disjoint() {
    let (records, _) = gen_records(
        &small_synth(6),
        &CanopyConfig::default(),
        &FeatureConfig::default(),
    )
    .unwrap();
    let config = ScenarioConfig {
        smote_scope: SmoteScope::TrainOnly,
        ..ScenarioConfig::new(ScenarioId::S4, 6)
    };
    let datasets = build_scenario_datasets(&records, &config).unwrap();
    for (combo, ds) in datasets.iter().enumerate() {
        assert!(ds.samples.iter().all(|s| !s.synthetic));
        let prepared = prepare_split(ds, &config, TrainConfig::default().split, combo).unwrap();
        assert!(prepared
            .val
            .iter()
            .chain(&prepared.test)
            .all(|s| !s.synthetic));
        let train_ids: BTreeSet<&str> = prepared
            .train
            .iter()
            .map(|s| s.plant_id.split("~syn").next().unwrap())
            .collect();
        for s in prepared.val.iter().chain(&prepared.test) {
            assert!(
                !train_ids.contains(s.plant_id.as_str()),
                "{} leaks into training",
                s.plant_id
            );
        }
        for s in &prepared.test {
            assert_eq!(prepared.assignment.get(&s.plant_id), Some(Partition::Test));
        }
    }
}

#[test]
fn checkpoint_reproduces_predictions() {
    let (records, _) = gen_records(
        &small_synth(7),
        &CanopyConfig::default(),
        &FeatureConfig::default(),
    )
    .unwrap();
    let config = ScenarioConfig::new(ScenarioId::S3, 7);
    let ds = &build_scenario_datasets(&records, &config).unwrap()[4];
    let prepared = prepare_split(ds, &config, TrainConfig::default().split, 4).unwrap();
    let (params, _) = train(
        &prepared.train,
        &prepared.val,
        &ModelConfig::default(),
        &quick_train(),
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(
        &Checkpoint {
            params: params.clone(),
            seed: 7,
            epoch: 2,
        },
        &path,
    )
    .unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(
        predict_batch(&loaded.params, &prepared.test).unwrap(),
        predict_batch(&params, &prepared.test).unwrap()
    );
}

#[test]
fn stronger_effects_are_not_harder_to_detect() {
    // final-stage single-stage runs, averaged over seeds
    let effects = [0.0, STRONG_EFFECT / 2.0, STRONG_EFFECT];
    let mut mean_acc = [0.0; 3];
    for seed in 0..5 {
        for (slot, &effect) in mean_acc.iter_mut().zip(&effects) {
            let synth = SynthConfig {
                seed,
                ..SynthConfig::default()
            }
            .with_effect_scale(effect);
            let (records, _) =
                gen_records(&synth, &CanopyConfig::default(), &FeatureConfig::default()).unwrap();
            let config = ScenarioConfig {
                stages: vec![1556.0],
                ..ScenarioConfig::new(ScenarioId::S1, seed)
            };
            let ds = &build_scenario_datasets(&records, &config).unwrap()[0];
            let run = run_dataset(
                ds,
                &config,
                0,
                &ModelConfig::default(),
                &TrainConfig::default(),
            )
            .unwrap();
            *slot += run.report.accuracy / 5.0;
        }
    }
    assert!(
        mean_acc[0] <= mean_acc[1] && mean_acc[1] <= mean_acc[2],
        "{mean_acc:?}"
    );
}
