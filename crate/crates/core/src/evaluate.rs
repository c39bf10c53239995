//! Confusion counts, recall / precision / F1 / accuracy, and per-class report
//! rows for the broomrape (infected) and healthy classes.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Label;
use crate::Provenance;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    /// The same predictions scored with the other class as positive.
    pub fn swapped(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            true_pos: self.true_neg,
            false_pos: self.false_neg,
            true_neg: self.true_pos,
            false_neg: self.false_pos,
        }
    }
}

pub fn confusion(
    predictions: &[Label],
    labels: &[Label],
    positive: Label,
) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == positive, l == positive) {
            (true, true) => cm.true_pos += 1,
            (true, false) => cm.false_pos += 1,
            (false, false) => cm.true_neg += 1,
            (false, true) => cm.false_neg += 1,
        }
    }
    Ok(cm)
}

/// Fractions in `[0, 1]`. A metric whose denominator is zero is reported as 0
/// with its `*_undefined` flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total() == 0 {
        return Err(Error::invalid("confusion matrix is empty"));
    }
    let tp = cm.true_pos as f64;
    let (recall, recall_undefined) = ratio(tp, tp + cm.false_neg as f64);
    let (precision, precision_undefined) = ratio(tp, tp + cm.false_pos as f64);
    let (f1, f1_undefined) = ratio(2.0 * precision * recall, precision + recall);
    let accuracy = (cm.true_pos + cm.true_neg) as f64 / cm.total() as f64;
    Ok(Metrics {
        precision,
        recall,
        f1,
        accuracy,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    })
}

/// Precision, recall and F1 of one class, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub undefined: bool,
}

impl ClassMetrics {
    fn from_metrics(m: &Metrics) -> Self {
        ClassMetrics {
            precision: 100.0 * m.precision,
            recall: 100.0 * m.recall,
            f1: 100.0 * m.f1,
            undefined: m.precision_undefined || m.recall_undefined || m.f1_undefined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub scenario: String,
    pub stages: Vec<f64>,
    pub augmentation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub stages: Vec<f64>,
    pub augmentation: String,
    pub broomrape: ClassMetrics,
    pub healthy: ClassMetrics,
    /// Percent.
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl ScenarioReport {
    pub fn stage_tag(&self) -> String {
        stage_tag(&self.stages)
    }
}

/// `324+574+897` style label for a stage combination.
pub fn stage_tag(stages: &[f64]) -> String {
    stages
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join("+")
}

/// `cm` has infected as the positive class; healthy metrics come from the swapped matrix.
pub fn per_class_report(cm: &ConfusionMatrix, meta: ReportMeta) -> Result<ScenarioReport> {
    let b = metrics(cm)?;
    let h = metrics(&cm.swapped())?;
    Ok(ScenarioReport {
        scenario: meta.scenario,
        stages: meta.stages,
        augmentation: meta.augmentation,
        broomrape: ClassMetrics::from_metrics(&b),
        healthy: ClassMetrics::from_metrics(&h),
        accuracy: 100.0 * b.accuracy,
        confusion: *cm,
    })
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "scenario",
    "stages",
    "augmentation",
    "P_b",
    "R_b",
    "F_b",
    "P_h",
    "R_h",
    "F_h",
    "accuracy",
];

pub fn percent(v: f64) -> String {
    format!("{v:.2}")
}

pub fn write_report_csv<W: Write>(
    mut writer: W,
    reports: &[ScenarioReport],
    provenance: Option<&Provenance>,
) -> Result<()> {
    if let Some(p) = provenance {
        p.write_header(&mut writer)?;
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        w.write_record([
            r.scenario.clone(),
            r.stage_tag(),
            r.augmentation.clone(),
            percent(r.broomrape.precision),
            percent(r.broomrape.recall),
            percent(r.broomrape.f1),
            percent(r.healthy.precision),
            percent(r.healthy.recall),
            percent(r.healthy.f1),
            percent(r.accuracy),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

pub fn write_report_json<W: Write>(writer: W, reports: &[ScenarioReport]) -> Result<()> {
    serde_json::to_writer_pretty(writer, reports)?;
    Ok(())
}

/// Confusion counts per report row.
pub fn write_confusion_csv<W: Write>(
    mut writer: W,
    reports: &[ScenarioReport],
    provenance: Option<&Provenance>,
) -> Result<()> {
    if let Some(p) = provenance {
        p.write_header(&mut writer)?;
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "stages", "augmentation", "tp", "fp", "tn", "fn"])?;
    for r in reports {
        let c = &r.confusion;
        w.write_record([
            r.scenario.clone(),
            r.stage_tag(),
            r.augmentation.clone(),
            c.true_pos.to_string(),
            c.false_pos.to_string(),
            c.true_neg.to_string(),
            c.false_neg.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<confusion>", e))?;
    Ok(())
}

/// Render any `#`-commented CSV as a space-aligned text table. Comment lines
/// are carried over verbatim above the table.
pub fn render_table<R: Read>(reader: R) -> Result<String> {
    let mut text = String::new();
    let mut reader = std::io::BufReader::new(reader);
    std::io::Read::read_to_string(&mut reader, &mut text).map_err(|e| Error::io("<table>", e))?;
    let mut out = String::new();
    for line in text.lines().filter(|l| l.starts_with('#')) {
        out.push_str(line);
        out.push('\n');
    }
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let rows: Vec<Vec<String>> = csv_reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<std::result::Result<_, _>>()?;
    let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..n_cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    use crate::seeds;
    use Label::{Healthy, Infected};

    fn brute(preds: &[Label], labels: &[Label]) -> (u64, u64, u64, u64) {
        let mut c = (0, 0, 0, 0);
        for i in 0..preds.len() {
            if preds[i] == Infected && labels[i] == Infected {
                c.0 += 1;
            }
            if preds[i] == Infected && labels[i] == Healthy {
                c.1 += 1;
            }
            if preds[i] == Healthy && labels[i] == Healthy {
                c.2 += 1;
            }
            if preds[i] == Healthy && labels[i] == Infected {
                c.3 += 1;
            }
        }
        c
    }

    fn random_labels(n: usize, rng: &mut seeds::Rng) -> Vec<Label> {
        (0..n).map(|_| Label::from_positive(rng.random())).collect()
    }

    #[test]
    fn perfect_predictions() {
        let labels: Vec<Label> = (0..15).map(|i| Label::from_positive(i < 10)).collect();
        let cm = confusion(&labels, &labels, Infected).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                true_pos: 10,
                false_pos: 0,
                true_neg: 5,
                false_neg: 0
            }
        );
        let m = metrics(&cm).unwrap();
        assert_eq!(
            (m.precision, m.recall, m.f1, m.accuracy),
            (1.0, 1.0, 1.0, 1.0)
        );
        let r = per_class_report(&cm, meta()).unwrap();
        assert_eq!(r.healthy.precision, 100.0);
        assert_eq!(r.accuracy, 100.0);
    }

    #[test]
    fn inverted_predictions_swap_cells() {
        let labels: Vec<Label> = (0..15).map(|i| Label::from_positive(i < 10)).collect();
        let inverted: Vec<Label> = labels.iter().map(|l| l.other()).collect();
        let cm = confusion(&inverted, &labels, Infected).unwrap();
        assert_eq!(
            (cm.true_pos, cm.false_neg, cm.true_neg, cm.false_pos),
            (0, 10, 0, 5)
        );
    }

    #[test]
    fn counting_oracle_on_random_vectors() {
        let mut rng = seeds::rng(3);
        for _ in 0..50 {
            let p = random_labels(200, &mut rng);
            let l = random_labels(200, &mut rng);
            let cm = confusion(&p, &l, Infected).unwrap();
            assert_eq!(
                (cm.true_pos, cm.false_pos, cm.true_neg, cm.false_neg),
                brute(&p, &l)
            );
        }
    }

    #[test]
    fn reported_recall_counts() {
        let cm = ConfusionMatrix {
            true_pos: 41,
            false_neg: 2,
            ..Default::default()
        };
        let m = metrics(&cm).unwrap();
        assert_eq!(percent(100.0 * m.recall), "95.35");
    }

    #[test]
    fn zero_denominator_is_flagged() {
        let cm = ConfusionMatrix {
            false_neg: 3,
            true_neg: 2,
            ..Default::default()
        };
        let m = metrics(&cm).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.precision_undefined && m.f1_undefined && !m.recall_undefined);
        assert!(metrics(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn length_mismatch_and_empty_are_errors() {
        assert!(confusion(&[Infected], &[], Infected).is_err());
        assert!(confusion(&[], &[], Infected).is_err());
    }

    fn meta() -> ReportMeta {
        ReportMeta {
            scenario: "S1".into(),
            stages: vec![324.0],
            augmentation: "none".into(),
        }
    }

    #[test]
    fn symmetric_matrix_gives_identical_class_metrics() {
        let cm = ConfusionMatrix {
            true_pos: 7,
            true_neg: 7,
            false_pos: 3,
            false_neg: 3,
        };
        let r = per_class_report(&cm, meta()).unwrap();
        assert_eq!(r.broomrape, r.healthy);
    }

    #[test]
    fn healthy_metrics_by_independent_count() {
        let mut rng = seeds::rng(9);
        for _ in 0..20 {
            let p = random_labels(60, &mut rng);
            let l = random_labels(60, &mut rng);
            let cm = confusion(&p, &l, Infected).unwrap();
            let r = per_class_report(&cm, meta()).unwrap();
            let healthy_cm = confusion(&p, &l, Healthy).unwrap();
            let m = metrics(&healthy_cm).unwrap();
            assert_eq!(r.healthy.precision, 100.0 * m.precision);
            assert_eq!(r.healthy.recall, 100.0 * m.recall);
        }
    }

    #[test]
    fn csv_has_table_columns_and_two_decimals() {
        let cm = ConfusionMatrix {
            true_pos: 41,
            false_neg: 2,
            true_neg: 40,
            false_pos: 3,
        };
        let r = per_class_report(
            &cm,
            ReportMeta {
                scenario: "S4".into(),
                stages: vec![324.0, 574.0],
                augmentation: "smote".into(),
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &[r], Some(&Provenance::new(7, "abc"))).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# broomscan "));
        assert_eq!(
            lines[1],
            "scenario,stages,augmentation,P_b,R_b,F_b,P_h,R_h,F_h,accuracy"
        );
        assert!(lines[2].starts_with("S4,324+574,smote,93.18,95.35,"));
        let table = render_table(text.as_bytes()).unwrap();
        assert!(table.contains("95.35"));
        assert_eq!(table.lines().count(), 4);
    }

    proptest! {
        #[test]
        fn accuracy_is_swap_invariant(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fn_ in 1u64..50) {
            let cm = ConfusionMatrix { true_pos: tp, false_pos: fp, true_neg: tn, false_neg: fn_ };
            prop_assert_eq!(metrics(&cm).unwrap().accuracy, metrics(&cm.swapped()).unwrap().accuracy);
        }

        #[test]
        fn f1_lies_between_precision_and_recall(tp in 1u64..50, fp in 0u64..50, fn_ in 0u64..50) {
            let m = metrics(&ConfusionMatrix { true_pos: tp, false_pos: fp, true_neg: 0, false_neg: fn_ }).unwrap();
            prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
            prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12);
        }

        #[test]
        fn counts_ignore_pair_order(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..80), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut seeds::rng(seed));
            let split = |v: &[(bool, bool)]| -> (Vec<Label>, Vec<Label>) {
                v.iter().map(|&(a, b)| (Label::from_positive(a), Label::from_positive(b))).unzip()
            };
            let (p1, l1) = split(&pairs);
            let (p2, l2) = split(&shuffled);
            prop_assert_eq!(confusion(&p1, &l1, Infected).unwrap(), confusion(&p2, &l2, Infected).unwrap());
        }
    }
}
