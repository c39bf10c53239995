//! The four experiment scenarios: single stages or cumulative stage prefixes,
//! balanced either by mean-matching or by SMOTE, over stratified plant-level
//! train / validation / test splits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::balance::{
    mean_match_select, sequences_from_records, smote_with_mode, SequenceSample, SmoteMode,
    DEFAULT_K,
};
use crate::error::{Error, Result};
use crate::evaluate::{confusion, per_class_report, ReportMeta, ScenarioReport};
use crate::features::{FeatureRecord, Label};
use crate::lstm::{predict_batch, train, ModelConfig, TrainConfig, TrainHistory};
use crate::phenology::DEFAULT_STAGES;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S4,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 4] = [
        ScenarioId::S1,
        ScenarioId::S2,
        ScenarioId::S3,
        ScenarioId::S4,
    ];

    pub fn uses_smote(self) -> bool {
        matches!(self, ScenarioId::S3 | ScenarioId::S4)
    }

    /// S2 and S4 grow cumulative stage prefixes; S1 and S3 take one stage at a time.
    pub fn cumulative(self) -> bool {
        matches!(self, ScenarioId::S2 | ScenarioId::S4)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(ScenarioId::S1),
            "S2" => Ok(ScenarioId::S2),
            "S3" => Ok(ScenarioId::S3),
            "S4" => Ok(ScenarioId::S4),
            _ => Err(Error::invalid(format!(
                "unknown scenario `{s}` (expected S1..S4)"
            ))),
        }
    }
}

/// Whether SMOTE sees only the training partition or the whole dataset
/// before it is split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoteScope {
    #[default]
    TrainOnly,
    PreSplit,
}

impl SmoteScope {
    pub fn as_str(self) -> &'static str {
        match self {
            SmoteScope::TrainOnly => "train_only",
            SmoteScope::PreSplit => "pre_split",
        }
    }
}

impl FromStr for SmoteScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train_only" => Ok(SmoteScope::TrainOnly),
            "pre_split" => Ok(SmoteScope::PreSplit),
            _ => Err(Error::invalid(format!(
                "unknown SMOTE scope `{s}` (expected train_only or pre_split)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub id: ScenarioId,
    pub stages: Vec<f64>,
    pub smote_scope: SmoteScope,
    pub smote_k: usize,
    pub smote_mode: SmoteMode,
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            id: ScenarioId::S4,
            stages: DEFAULT_STAGES.to_vec(),
            smote_scope: SmoteScope::TrainOnly,
            smote_k: DEFAULT_K,
            smote_mode: SmoteMode::Sequence,
            standardize: true,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn new(id: ScenarioId, seed: u64) -> Self {
        ScenarioConfig {
            id,
            seed,
            ..ScenarioConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::invalid("scenario needs at least one stage"));
        }
        if self.stages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("scenario stages must strictly increase"));
        }
        if self.smote_k == 0 {
            return Err(Error::invalid("SMOTE k must be positive"));
        }
        Ok(())
    }

    /// `none`, `smote:train_only` or `smote:pre_split`.
    pub fn augmentation_tag(&self) -> String {
        if self.id.uses_smote() {
            format!("smote:{}", self.smote_scope.as_str())
        } else {
            "none".to_owned()
        }
    }

    /// One stage per combination for S1/S3; growing prefixes for S2/S4.
    pub fn stage_combinations(&self) -> Vec<Vec<f64>> {
        if self.id.cumulative() {
            (2..=self.stages.len())
                .map(|n| self.stages[..n].to_vec())
                .collect()
        } else {
            self.stages.iter().map(|&s| vec![s]).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub partitions: BTreeMap<String, Partition>,
}

impl SplitAssignment {
    pub fn get(&self, plant_id: &str) -> Option<Partition> {
        self.partitions.get(plant_id).copied()
    }

    pub fn ids(&self, part: Partition) -> Vec<&str> {
        self.partitions
            .iter()
            .filter(|(_, &p)| p == part)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Partition sizes for one class: rounded train and validation shares, the
/// rest to test, with every partition non-empty.
fn partition_sizes(n: usize, fractions: [f64; 3]) -> (usize, usize, usize) {
    let mut val = ((n as f64 * fractions[1]).round() as usize).max(1);
    let mut train = ((n as f64 * fractions[0]).round() as usize).max(1);
    while train + val >= n {
        if train > val {
            train -= 1;
        } else {
            val -= 1;
        }
    }
    (train, val, n - train - val)
}

/// Stratified, plant-level split. Each class's plants are sorted by id,
/// shuffled by the seed and cut into train / validation / test.
pub fn split_plants(
    plants: &BTreeMap<String, Label>,
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let mut out = SplitAssignment::default();
    for (k, label) in [Label::Infected, Label::Healthy].into_iter().enumerate() {
        let mut ids: Vec<&String> = plants
            .iter()
            .filter(|(_, &l)| l == label)
            .map(|(id, _)| id)
            .collect();
        if ids.len() < 3 {
            return Err(Error::invalid(format!(
                "class {label} has {} plants; at least 3 are needed to fill train, validation and test",
                ids.len()
            )));
        }
        ids.shuffle(&mut seeds::rng_for(seed, "split", k as u64));
        let (train, val, _) = partition_sizes(ids.len(), fractions);
        for (i, id) in ids.into_iter().enumerate() {
            let part = if i < train {
                Partition::Train
            } else if i < train + val {
                Partition::Val
            } else {
                Partition::Test
            };
            out.partitions.insert(id.clone(), part);
        }
    }
    Ok(out)
}

pub fn split(records: &[FeatureRecord], fractions: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    let mut plants = BTreeMap::new();
    for r in records {
        if let Some(prev) = plants.insert(r.plant_id.clone(), r.label) {
            if prev != r.label {
                return Err(Error::invalid(format!(
                    "plant {} changes label across records",
                    r.plant_id
                )));
            }
        }
    }
    split_plants(&plants, fractions, seed)
}

pub fn split_samples(
    samples: &[SequenceSample],
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    let plants = samples
        .iter()
        .map(|s| (s.plant_id.clone(), s.label))
        .collect();
    split_plants(&plants, fractions, seed)
}

/// Per (time step, feature) z-score parameters fitted on a training set.
/// Features with zero spread pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl Standardizer {
    pub fn fit(train: &[SequenceSample]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::invalid("cannot standardize on an empty training set"))?;
        let (steps, width) = (first.seq_len(), first.row_width());
        if train
            .iter()
            .any(|s| s.seq_len() != steps || s.row_width() != width)
        {
            return Err(Error::invalid("training samples differ in shape"));
        }
        let n = train.len() as f64;
        let mut mean = vec![vec![0.0; width]; steps];
        let mut std = vec![vec![0.0; width]; steps];
        for t in 0..steps {
            for j in 0..width {
                let m = train.iter().map(|s| s.matrix[t][j]).sum::<f64>() / n;
                let v = train
                    .iter()
                    .map(|s| (s.matrix[t][j] - m).powi(2))
                    .sum::<f64>()
                    / n;
                mean[t][j] = m;
                std[t][j] = v.sqrt();
            }
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, samples: &mut [SequenceSample]) -> Result<()> {
        for s in samples {
            if s.seq_len() != self.mean.len() || s.row_width() != self.mean[0].len() {
                return Err(Error::invalid(format!(
                    "plant {} does not match the fitted shape",
                    s.plant_id
                )));
            }
            for (t, row) in s.matrix.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    if self.std[t][j] > 0.0 {
                        *v = (*v - self.mean[t][j]) / self.std[t][j];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Fit on `train`, transform both sets.
pub fn standardize(
    train: &[SequenceSample],
    other: &[SequenceSample],
) -> Result<(Vec<SequenceSample>, Vec<SequenceSample>, Standardizer)> {
    let st = Standardizer::fit(train)?;
    let mut t = train.to_vec();
    let mut o = other.to_vec();
    st.apply(&mut t)?;
    st.apply(&mut o)?;
    Ok((t, o, st))
}

/// Data for one stage combination before splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDataset {
    pub stages: Vec<f64>,
    pub samples: Vec<SequenceSample>,
    /// Plants dropped for lacking one of the stages.
    pub skipped: Vec<String>,
}

impl ScenarioDataset {
    pub fn class_counts(&self) -> (usize, usize) {
        count_classes(&self.samples)
    }
}

/// `(infected, healthy)`.
pub fn count_classes(samples: &[SequenceSample]) -> (usize, usize) {
    let infected = samples
        .iter()
        .filter(|s| s.label == Label::Infected)
        .count();
    (infected, samples.len() - infected)
}

fn split_by_label(samples: Vec<SequenceSample>) -> (Vec<SequenceSample>, Vec<SequenceSample>) {
    samples
        .into_iter()
        .partition(|s| s.label == Label::Infected)
}

fn smote_seed(config: &ScenarioConfig, combo: usize) -> u64 {
    seeds::derive(config.seed, &format!("smote-{}", config.id), combo as u64)
}

fn smote_up(
    minority: &[SequenceSample],
    target: usize,
    config: &ScenarioConfig,
    combo: usize,
) -> Result<Vec<SequenceSample>> {
    let k = config.smote_k.min(minority.len().saturating_sub(1));
    smote_with_mode(
        minority,
        target,
        k,
        smote_seed(config, combo),
        config.smote_mode,
    )
}

/// One dataset per stage combination. S1/S2 mean-match the healthy class down
/// to the infected count; S3/S4 under `pre_split` oversample the infected class
/// up to the healthy count here, and under `train_only` stay unbalanced until
/// after the split.
pub fn build_scenario_datasets(
    records: &[FeatureRecord],
    config: &ScenarioConfig,
) -> Result<Vec<ScenarioDataset>> {
    config.validate()?;
    let mut out = Vec::new();
    for (combo, stages) in config.stage_combinations().into_iter().enumerate() {
        let (samples, skipped) = sequences_from_records(records, &stages)?;
        let (infected, healthy) = split_by_label(samples);
        if infected.is_empty() || healthy.is_empty() {
            return Err(Error::invalid("scenario data needs both classes"));
        }
        let samples = if !config.id.uses_smote() {
            let n = infected.len().min(healthy.len());
            let mut s = infected;
            s.extend(mean_match_select(&healthy, n)?);
            s
        } else if config.smote_scope == SmoteScope::PreSplit {
            let mut s = smote_up(&infected, healthy.len().max(infected.len()), config, combo)?;
            s.extend(healthy);
            s
        } else {
            let mut s = infected;
            s.extend(healthy);
            s
        };
        out.push(ScenarioDataset {
            stages,
            samples,
            skipped,
        });
    }
    Ok(out)
}

/// Train / validation / test sets ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    pub assignment: SplitAssignment,
    pub train: Vec<SequenceSample>,
    pub val: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
}

/// Split, standardize with training statistics, then (for `train_only`)
/// oversample the training partition's infected class to its healthy count.
pub fn prepare_split(
    dataset: &ScenarioDataset,
    config: &ScenarioConfig,
    fractions: [f64; 3],
    combo: usize,
) -> Result<PreparedSplit> {
    let assignment = split_samples(
        &dataset.samples,
        fractions,
        seeds::derive(config.seed, "split", 0),
    )?;
    let mut parts: BTreeMap<Partition, Vec<SequenceSample>> = BTreeMap::new();
    for s in &dataset.samples {
        parts
            .entry(
                assignment
                    .get(&s.plant_id)
                    .expect("every sample is assigned"),
            )
            .or_default()
            .push(s.clone());
    }
    let mut take = |p| parts.remove(&p).unwrap_or_default();
    let (mut train_set, mut val, mut test) = (
        take(Partition::Train),
        take(Partition::Val),
        take(Partition::Test),
    );
    if config.standardize {
        let st = Standardizer::fit(&train_set)?;
        st.apply(&mut train_set)?;
        st.apply(&mut val)?;
        st.apply(&mut test)?;
    }
    if config.id.uses_smote() && config.smote_scope == SmoteScope::TrainOnly {
        let (infected, healthy) = split_by_label(train_set);
        let mut t = smote_up(&infected, healthy.len().max(infected.len()), config, combo)?;
        t.extend(healthy);
        train_set = t;
    }
    Ok(PreparedSplit {
        assignment,
        train: train_set,
        val,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub plant_id: String,
    pub label: Label,
    pub synthetic: bool,
    pub probability: f64,
}

/// Everything one stage combination produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub history: TrainHistory,
    pub test_predictions: Vec<Prediction>,
    /// `(infected, healthy)` for train, validation and test.
    pub counts: [(usize, usize); 3],
}

/// Split, standardize, augment, train and score on the test partition, once
/// per stage combination. The training seed of each combination is derived
/// from the scenario seed; `train_config.seed` is ignored.
pub fn run_scenario(
    records: &[FeatureRecord],
    config: &ScenarioConfig,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<Vec<ScenarioRun>> {
    let datasets = build_scenario_datasets(records, config)?;
    datasets
        .iter()
        .enumerate()
        .map(|(combo, dataset)| run_dataset(dataset, config, combo, model_config, train_config))
        .collect()
}

/// One stage combination of [`run_scenario`]; `combo` is its index in
/// [`ScenarioConfig::stage_combinations`] and feeds the derived seeds.
pub fn run_dataset(
    dataset: &ScenarioDataset,
    config: &ScenarioConfig,
    combo: usize,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<ScenarioRun> {
    let prepared = prepare_split(dataset, config, train_config.split, combo)?;
    let tc = TrainConfig {
        seed: seeds::derive(config.seed, &format!("train-{}", config.id), combo as u64),
        ..train_config.clone()
    };
    let (params, history) = train(&prepared.train, &prepared.val, model_config, &tc)?;
    let preds = predict_batch(&params, &prepared.test)?;
    let labels: Vec<Label> = prepared.test.iter().map(|s| s.label).collect();
    let predicted: Vec<Label> = preds.iter().map(|p| p.0).collect();
    let cm = confusion(&predicted, &labels, Label::Infected)?;
    let report = per_class_report(
        &cm,
        ReportMeta {
            scenario: config.id.to_string(),
            stages: dataset.stages.clone(),
            augmentation: config.augmentation_tag(),
        },
    )?;
    let test_predictions = prepared
        .test
        .iter()
        .zip(&preds)
        .map(|(s, p)| Prediction {
            plant_id: s.plant_id.clone(),
            label: s.label,
            synthetic: s.synthetic,
            probability: p.1,
        })
        .collect();
    Ok(ScenarioRun {
        report,
        history,
        test_predictions,
        counts: [
            count_classes(&prepared.train),
            count_classes(&prepared.val),
            count_classes(&prepared.test),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureVector, N_FEATURES};
    use rand::Rng;

    fn records(
        n_infected: usize,
        n_healthy: usize,
        stages: &[f64],
        seed: u64,
    ) -> Vec<FeatureRecord> {
        let mut rng = seeds::rng(seed);
        let mut out = Vec::new();
        for i in 0..n_infected + n_healthy {
            let label = Label::from_positive(i < n_infected);
            for &stage in stages {
                let shift = if label == Label::Infected { 0.5 } else { 0.0 };
                let values = (0..N_FEATURES)
                    .map(|_| shift + rng.random::<f64>())
                    .collect();
                out.push(FeatureRecord {
                    plant_id: format!("P{i:03}"),
                    gdd_stage: stage,
                    label,
                    synthetic: false,
                    features: FeatureVector::new(values).unwrap(),
                });
            }
        }
        out
    }

    fn fractions() -> [f64; 3] {
        TrainConfig::default().split
    }

    #[test]
    fn split_sizes_follow_the_fractions() {
        let recs = records(49, 251, &[324.0], 1);
        let a = split(&recs, fractions(), 5).unwrap();
        let count = |p, infected: bool| {
            a.partitions
                .iter()
                .filter(|(id, &q)| q == p && (id[1..].parse::<usize>().unwrap() < 49) == infected)
                .count()
        };
        assert_eq!(
            [
                count(Partition::Train, true),
                count(Partition::Val, true),
                count(Partition::Test, true)
            ],
            [32, 7, 10]
        );
        assert_eq!(
            [
                count(Partition::Train, false),
                count(Partition::Val, false),
                count(Partition::Test, false)
            ],
            [163, 38, 50]
        );
        assert_eq!(a.partitions.len(), 300);
        assert_eq!(a, split(&recs, fractions(), 5).unwrap());
        assert_ne!(a, split(&recs, fractions(), 6).unwrap());
    }

    #[test]
    fn split_needs_three_per_class() {
        let recs = records(2, 10, &[324.0], 1);
        assert!(split(&recs, fractions(), 0).is_err());
        let recs = records(3, 10, &[324.0], 1);
        let a = split(&recs, fractions(), 0).unwrap();
        for p in [Partition::Train, Partition::Val, Partition::Test] {
            assert!(a
                .ids(p)
                .iter()
                .any(|id| id[1..].parse::<usize>().unwrap() < 3));
        }
    }

    #[test]
    fn standardizer_uses_training_statistics() {
        let mk = |id: &str, a: f64, b: f64| {
            SequenceSample::new(id, vec![1.0], vec![vec![a, b]], Label::Healthy).unwrap()
        };
        let train = vec![mk("a", 1.0, 5.0), mk("b", 3.0, 5.0)];
        let other = vec![mk("c", 4.0, 7.0)];
        let (t, o, _) = standardize(&train, &other).unwrap();
        assert_eq!(t[0].matrix[0], vec![-1.0, 5.0]);
        assert_eq!(t[1].matrix[0], vec![1.0, 5.0]);
        assert_eq!(o[0].matrix[0], vec![2.0, 7.0]);
    }

    #[test]
    fn combinations_per_scenario() {
        let lens: Vec<Vec<usize>> = ScenarioId::ALL
            .iter()
            .map(|&id| {
                ScenarioConfig::new(id, 0)
                    .stage_combinations()
                    .iter()
                    .map(Vec::len)
                    .collect()
            })
            .collect();
        assert_eq!(
            lens,
            vec![vec![1; 5], vec![2, 3, 4, 5], vec![1; 5], vec![2, 3, 4, 5]]
        );
    }

    #[test]
    fn dataset_class_counts() {
        let recs = records(49, 251, &DEFAULT_STAGES, 2);
        let s1 = build_scenario_datasets(&recs, &ScenarioConfig::new(ScenarioId::S1, 0)).unwrap();
        assert!(s1
            .iter()
            .all(|d| d.class_counts() == (49, 49) && d.samples[0].seq_len() == 1));
        let s4 = ScenarioConfig {
            smote_scope: SmoteScope::PreSplit,
            ..ScenarioConfig::new(ScenarioId::S4, 0)
        };
        let d = build_scenario_datasets(&recs, &s4).unwrap();
        let last = d.last().unwrap();
        assert_eq!(last.class_counts(), (251, 251));
        assert_eq!(last.samples.iter().filter(|s| s.synthetic).count(), 202);
        assert_eq!(last.samples[0].seq_len(), 5);
    }

    #[test]
    fn train_only_keeps_synthetics_out_of_test() {
        let recs = records(49, 251, &DEFAULT_STAGES[..2], 3);
        let config = ScenarioConfig {
            stages: DEFAULT_STAGES[..2].to_vec(),
            ..ScenarioConfig::new(ScenarioId::S4, 1)
        };
        let d = &build_scenario_datasets(&recs, &config).unwrap()[0];
        let p = prepare_split(d, &config, fractions(), 0).unwrap();
        assert!(p.test.iter().chain(&p.val).all(|s| !s.synthetic));
        assert_eq!(count_classes(&p.train), (163, 163));
        assert_eq!(count_classes(&p.test), (10, 50));
        // every synthetic sample descends from a training plant
        for s in p.train.iter().filter(|s| s.synthetic) {
            let parent = s.plant_id.split('~').next().unwrap();
            assert_eq!(p.assignment.get(parent), Some(Partition::Train));
        }
    }

    #[test]
    fn scenario_id_parsing() {
        assert_eq!("s3".parse::<ScenarioId>().unwrap(), ScenarioId::S3);
        assert!("S5".parse::<ScenarioId>().is_err());
        assert_eq!(
            "pre_split".parse::<SmoteScope>().unwrap(),
            SmoteScope::PreSplit
        );
    }
}
