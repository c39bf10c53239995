//! Class balancing: mean-matched selection of the majority class and SMOTE
//! oversampling of the minority class, both over whole growth-stage sequences.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureRecord, FeatureVector, Label, N_FEATURES};
use crate::seeds;

pub const DEFAULT_K: usize = 5;

/// One plant's features over an ordered set of growth stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub plant_id: String,
    pub stages: Vec<f64>,
    /// One row of `N_FEATURES` values per stage.
    pub matrix: Vec<Vec<f64>>,
    pub label: Label,
    pub synthetic: bool,
}

impl SequenceSample {
    pub fn new(
        plant_id: impl Into<String>,
        stages: Vec<f64>,
        matrix: Vec<Vec<f64>>,
        label: Label,
    ) -> Result<Self> {
        let s = SequenceSample {
            plant_id: plant_id.into(),
            stages,
            matrix,
            label,
            synthetic: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.stages.len() != self.matrix.len() {
            return Err(Error::invalid(format!(
                "plant {}: {} stages but {} feature rows",
                self.plant_id,
                self.stages.len(),
                self.matrix.len()
            )));
        }
        if self.stages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "plant {}: stages must strictly increase",
                self.plant_id
            )));
        }
        let width = self.matrix[0].len();
        if self.matrix.iter().any(|r| r.len() != width) {
            return Err(Error::invalid(format!(
                "plant {}: ragged feature rows",
                self.plant_id
            )));
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.matrix.len()
    }

    pub fn row_width(&self) -> usize {
        self.matrix[0].len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.matrix.iter().flatten().copied().collect()
    }

    fn with_flat(&self, plant_id: String, flat: &[f64]) -> SequenceSample {
        let width = self.row_width();
        SequenceSample {
            plant_id,
            stages: self.stages.clone(),
            matrix: flat.chunks(width).map(<[f64]>::to_vec).collect(),
            label: self.label,
            synthetic: true,
        }
    }
}

/// Group per-stage records into sequences over `stages` (in the given order).
/// Plants missing any requested stage are skipped and their ids returned.
pub fn sequences_from_records(
    records: &[FeatureRecord],
    stages: &[f64],
) -> Result<(Vec<SequenceSample>, Vec<String>)> {
    if stages.is_empty() {
        return Err(Error::invalid("no stages requested"));
    }
    for &s in stages {
        if !records.iter().any(|r| r.gdd_stage == s) {
            return Err(Error::invalid(format!(
                "stage {s} is absent from the feature records"
            )));
        }
    }
    let mut by_plant: BTreeMap<&str, Vec<&FeatureRecord>> = BTreeMap::new();
    for r in records {
        by_plant.entry(r.plant_id.as_str()).or_default().push(r);
    }
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (plant, recs) in by_plant {
        let rows: Option<Vec<&FeatureRecord>> = stages
            .iter()
            .map(|&s| recs.iter().copied().find(|r| r.gdd_stage == s))
            .collect();
        let Some(rows) = rows else {
            skipped.push(plant.to_owned());
            continue;
        };
        let label = rows[0].label;
        if rows.iter().any(|r| r.label != label) {
            return Err(Error::invalid(format!(
                "plant {plant} changes label across stages"
            )));
        }
        let mut s = SequenceSample::new(
            plant,
            stages.to_vec(),
            rows.iter()
                .map(|r| r.features.as_slice().to_vec())
                .collect(),
            label,
        )?;
        s.synthetic = rows.iter().any(|r| r.synthetic);
        samples.push(s);
    }
    Ok((samples, skipped))
}

pub fn records_from_sequences(samples: &[SequenceSample]) -> Result<Vec<FeatureRecord>> {
    let mut out = Vec::new();
    for s in samples {
        for (stage, row) in s.stages.iter().zip(&s.matrix) {
            out.push(FeatureRecord {
                plant_id: s.plant_id.clone(),
                gdd_stage: *stage,
                label: s.label,
                synthetic: s.synthetic,
                features: FeatureVector::new(row.clone())?,
            });
        }
    }
    Ok(out)
}

fn check_shapes(samples: &[SequenceSample]) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("no samples"))?;
    let dims = (first.seq_len(), first.row_width());
    for s in samples {
        s.validate()?;
        if (s.seq_len(), s.row_width()) != dims {
            return Err(Error::invalid(format!(
                "plant {} has a different sequence shape",
                s.plant_id
            )));
        }
    }
    Ok(dims.0 * dims.1)
}

/// Per-dimension mean and population std of flattened vectors.
fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    (mean, std)
}

/// Z-scores `rows` in place; zero-variance dimensions become 0 and so drop out of distances.
fn zscore(rows: &mut [Vec<f64>], mean: &[f64], std: &[f64]) {
    for r in rows {
        for ((v, m), s) in r.iter_mut().zip(mean).zip(std) {
            *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `n` majority samples closest (z-scored Euclidean) to the majority mean.
/// Ties go to the smaller plant id. Output is ordered by distance.
pub fn mean_match_select(majority: &[SequenceSample], n: usize) -> Result<Vec<SequenceSample>> {
    if n > majority.len() {
        return Err(Error::invalid(format!(
            "cannot select {n} of {} samples",
            majority.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    check_shapes(majority)?;
    let mut flat: Vec<Vec<f64>> = majority.iter().map(SequenceSample::flatten).collect();
    let (mean, std) = column_stats(&flat);
    zscore(&mut flat, &mean, &std);
    let origin = vec![0.0; mean.len()];
    let mut ranked: Vec<(f64, usize)> = flat
        .iter()
        .enumerate()
        .map(|(i, z)| (sq_dist(z, &origin), i))
        .collect();
    ranked.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| majority[a.1].plant_id.cmp(&majority[b.1].plant_id))
    });
    Ok(ranked
        .into_iter()
        .take(n)
        .map(|(_, i)| majority[i].clone())
        .collect())
}

/// How SMOTE treats multi-stage sequences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoteMode {
    /// Interpolate whole flattened sequences with one neighbour and one step.
    #[default]
    Sequence,
    /// Interpolate every stage independently.
    PerStage,
}

/// Indices of each point's `k` nearest other points, nearest first.
fn nearest_neighbours(points: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| (sq_dist(p, q), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

struct Interpolator {
    raw: Vec<Vec<f64>>,
    neighbours: Vec<Vec<usize>>,
}

impl Interpolator {
    fn new(raw: Vec<Vec<f64>>, k: usize) -> Self {
        let (mean, std) = column_stats(&raw);
        let mut scaled = raw.clone();
        zscore(&mut scaled, &mean, &std);
        let neighbours = nearest_neighbours(&scaled, k);
        Interpolator { raw, neighbours }
    }

    fn sample(&self, source: usize, rng: &mut seeds::Rng) -> Vec<f64> {
        let nbrs = &self.neighbours[source];
        let nn = nbrs[rng.random_range(0..nbrs.len())];
        let delta: f64 = rng.random();
        let (x, y) = (&self.raw[source], &self.raw[nn]);
        x.iter().zip(y).map(|(a, b)| a + delta * (b - a)).collect()
    }
}

/// Oversample `minority` up to `target_count` samples. Originals come first,
/// unmodified; synthetic samples cycle through the sources round-robin.
pub fn smote(
    minority: &[SequenceSample],
    target_count: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<SequenceSample>> {
    smote_with_mode(minority, target_count, k, seed, SmoteMode::Sequence)
}

pub fn smote_with_mode(
    minority: &[SequenceSample],
    target_count: usize,
    k: usize,
    seed: u64,
    mode: SmoteMode,
) -> Result<Vec<SequenceSample>> {
    let n = minority.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "SMOTE needs at least 2 minority samples, got {n}"
        )));
    }
    if k == 0 || k > n - 1 {
        return Err(Error::invalid(format!(
            "SMOTE k must lie in 1..={}, got {k}",
            n - 1
        )));
    }
    if target_count < n {
        return Err(Error::invalid(format!(
            "SMOTE target {target_count} is below the minority size {n}"
        )));
    }
    check_shapes(minority)?;
    let mut out = minority.to_vec();
    let n_new = target_count - n;
    if n_new == 0 {
        return Ok(out);
    }
    let mut rng = seeds::rng(seed);
    let name = |i: usize, src: &SequenceSample| format!("{}~syn{:04}", src.plant_id, i);
    match mode {
        SmoteMode::Sequence => {
            let interp =
                Interpolator::new(minority.iter().map(SequenceSample::flatten).collect(), k);
            for i in 0..n_new {
                let src = i % n;
                let flat = interp.sample(src, &mut rng);
                out.push(minority[src].with_flat(name(i, &minority[src]), &flat));
            }
        }
        SmoteMode::PerStage => {
            let stages = minority[0].seq_len();
            let per_stage: Vec<Interpolator> = (0..stages)
                .map(|t| {
                    Interpolator::new(minority.iter().map(|s| s.matrix[t].clone()).collect(), k)
                })
                .collect();
            for i in 0..n_new {
                let src = i % n;
                let flat: Vec<f64> = per_stage
                    .iter()
                    .flat_map(|interp| interp.sample(src, &mut rng))
                    .collect();
                out.push(minority[src].with_flat(name(i, &minority[src]), &flat));
            }
        }
    }
    Ok(out)
}

/// Minority and majority labels of a two-class sample set (ties favour infected as minority).
pub fn class_roles(samples: &[SequenceSample]) -> Result<(Label, Label)> {
    let infected = samples
        .iter()
        .filter(|s| s.label == Label::Infected)
        .count();
    let healthy = samples.len() - infected;
    if infected == 0 || healthy == 0 {
        return Err(Error::invalid("balancing needs both classes present"));
    }
    Ok(if infected <= healthy {
        (Label::Infected, Label::Healthy)
    } else {
        (Label::Healthy, Label::Infected)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceMethod {
    Meanmatch,
    Smote,
}

/// Balance a two-class set: mean-matching keeps every minority sample plus
/// `target` majority samples; SMOTE grows the minority to `target`.
pub fn balance(
    samples: &[SequenceSample],
    method: BalanceMethod,
    target: Option<usize>,
    k: usize,
    seed: u64,
    mode: SmoteMode,
) -> Result<Vec<SequenceSample>> {
    let (minority_label, _) = class_roles(samples)?;
    let (minority, majority): (Vec<_>, Vec<_>) = samples
        .iter()
        .cloned()
        .partition(|s| s.label == minority_label);
    match method {
        BalanceMethod::Meanmatch => {
            let n = target.unwrap_or(minority.len());
            let mut out = minority;
            out.extend(mean_match_select(&majority, n)?);
            Ok(out)
        }
        BalanceMethod::Smote => {
            let n = target.unwrap_or(majority.len());
            let mut out = smote_with_mode(&minority, n, k, seed, mode)?;
            out.extend(majority);
            Ok(out)
        }
    }
}

pub fn assert_feature_width(samples: &[SequenceSample]) -> Result<()> {
    match samples.iter().find(|s| s.row_width() != N_FEATURES) {
        Some(s) => Err(Error::invalid(format!(
            "plant {} has {} features per stage, expected {N_FEATURES}",
            s.plant_id,
            s.row_width()
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(id: &str, values: &[f64], label: Label) -> SequenceSample {
        SequenceSample::new(id, vec![324.0], vec![values.to_vec()], label).unwrap()
    }

    #[test]
    fn mean_match_picks_nearest_to_mean() {
        let majority = vec![
            sample("a", &[0.0], Label::Healthy),
            sample("b", &[1.0], Label::Healthy),
            sample("c", &[10.0], Label::Healthy),
        ];
        let picked = mean_match_select(&majority, 1).unwrap();
        assert_eq!(picked[0].plant_id, "b");
        assert_eq!(mean_match_select(&majority, 3).unwrap().len(), 3);
        assert!(mean_match_select(&majority, 4).is_err());
    }

    #[test]
    fn mean_match_brute_force() {
        // oracle: mean 11/3; |0 - 11/3|, |1 - 11/3|, |10 - 11/3| ranks b, a, c
        let majority = vec![
            sample("c", &[10.0], Label::Healthy),
            sample("a", &[0.0], Label::Healthy),
            sample("b", &[1.0], Label::Healthy),
        ];
        let ids: Vec<_> = mean_match_select(&majority, 3)
            .unwrap()
            .into_iter()
            .map(|s| s.plant_id)
            .collect();
        assert_eq!(ids, ["b", "a", "c"]);
    }

    #[test]
    fn mean_match_ties_break_on_plant_id() {
        let majority = vec![
            sample("z", &[1.0, 5.0], Label::Healthy),
            sample("m", &[-1.0, 5.0], Label::Healthy),
            sample("a", &[3.0, 5.0], Label::Healthy),
            sample("b", &[-3.0, 5.0], Label::Healthy),
        ];
        let ids: Vec<_> = mean_match_select(&majority, 2)
            .unwrap()
            .into_iter()
            .map(|s| s.plant_id)
            .collect();
        assert_eq!(ids, ["m", "z"]);
        let mut reversed = majority.clone();
        reversed.reverse();
        assert_eq!(mean_match_select(&reversed, 2).unwrap()[0].plant_id, "m");
    }

    #[test]
    fn smote_counts() {
        let minority: Vec<_> = (0..49)
            .map(|i| {
                sample(
                    &format!("p{i}"),
                    &[i as f64, (i * i) as f64 % 7.0],
                    Label::Infected,
                )
            })
            .collect();
        let out = smote(&minority, 251, 5, 1).unwrap();
        assert_eq!(out.len(), 251);
        assert_eq!(out.iter().filter(|s| s.synthetic).count(), 202);
        assert_eq!(&out[..49], &minority[..]);
        assert!(out[49..].iter().all(|s| s.label == Label::Infected));
        assert_eq!(smote(&minority, 49, 5, 1).unwrap(), minority);
    }

    #[test]
    fn smote_preconditions() {
        let one = vec![sample("a", &[1.0], Label::Infected)];
        assert!(smote(&one, 5, 1, 0).is_err());
        let two = vec![
            sample("a", &[1.0], Label::Infected),
            sample("b", &[2.0], Label::Infected),
        ];
        assert!(smote(&two, 5, 2, 0).is_err());
        assert!(smote(&two, 5, 0, 0).is_err());
        assert!(smote(&two, 1, 1, 0).is_err());
        smote(&two, 5, 1, 0).unwrap();
    }

    #[test]
    fn smote_is_seeded() {
        let minority: Vec<_> = (0..10)
            .map(|i| {
                sample(
                    &format!("p{i}"),
                    &[i as f64, (3 * i % 5) as f64],
                    Label::Infected,
                )
            })
            .collect();
        assert_eq!(
            smote(&minority, 40, 3, 9).unwrap(),
            smote(&minority, 40, 3, 9).unwrap()
        );
        assert_ne!(
            smote(&minority, 40, 3, 9).unwrap(),
            smote(&minority, 40, 3, 10).unwrap()
        );
    }

    #[test]
    fn sequence_mode_uses_one_step_for_all_stages() {
        let minority: Vec<_> = (0..6)
            .map(|i| {
                let v = i as f64;
                SequenceSample::new(
                    format!("p{i}"),
                    vec![1.0, 2.0],
                    vec![vec![v, v * v], vec![2.0 * v, 1.0 - v]],
                    Label::Infected,
                )
                .unwrap()
            })
            .collect();
        let out = smote(&minority, 30, 2, 4).unwrap();
        for s in out.iter().filter(|s| s.synthetic) {
            assert_eq!(s.seq_len(), 2);
            // stage rows are [v, v^2] and [2v, 1 - v] of the same interpolation:
            // dimension 2 is exactly twice dimension 0, dimension 3 is 1 - dimension 0
            assert!((s.matrix[1][0] - 2.0 * s.matrix[0][0]).abs() < 1e-12);
            assert!((s.matrix[1][1] - (1.0 - s.matrix[0][0])).abs() < 1e-12);
        }
        let per_stage = smote_with_mode(&minority, 30, 2, 4, SmoteMode::PerStage).unwrap();
        assert_eq!(per_stage.len(), 30);
    }

    #[test]
    fn records_sequences_round_trip() {
        let mk = |id: &str, stage: f64, v: f64| FeatureRecord {
            plant_id: id.into(),
            gdd_stage: stage,
            label: Label::Healthy,
            synthetic: false,
            features: FeatureVector::new(vec![v; N_FEATURES]).unwrap(),
        };
        let records = vec![
            mk("a", 324.0, 1.0),
            mk("a", 574.0, 2.0),
            mk("b", 574.0, 3.0),
        ];
        let (seqs, skipped) = sequences_from_records(&records, &[324.0, 574.0]).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(skipped, ["b"]);
        assert_eq!(
            records_from_sequences(&seqs).unwrap(),
            records[..2].to_vec()
        );
        assert!(sequences_from_records(&records, &[897.0]).is_err());
    }

    proptest! {
        #[test]
        fn synthetics_stay_in_minority_box(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 3..12),
            seed in any::<u64>(),
        ) {
            let minority: Vec<_> = pts.iter().enumerate()
                .map(|(i, p)| sample(&format!("p{i}"), p, Label::Infected))
                .collect();
            let k = (minority.len() - 1).min(DEFAULT_K);
            let out = smote(&minority, minority.len() * 3, k, seed).unwrap();
            for d in 0..3 {
                let lo = pts.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
                let hi = pts.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
                for s in &out {
                    prop_assert!(s.matrix[0][d] >= lo - 1e-12 && s.matrix[0][d] <= hi + 1e-12);
                }
            }
            prop_assert_eq!(out.iter().filter(|s| !s.synthetic).count(), minority.len());
        }
    }
}
