//! Histogram statistics over canopy pixels and the 49-value plant feature vector.
//!
//! Each band contributes seven statistics computed from its normalized
//! histogram: mean, standard deviation, smoothness, third moment, uniformity,
//! entropy (bits) and gray-level range. Bin intensities are the bin centers
//! mapped to `[0, 1]`, so the statistics are unit-free. The vector is laid
//! out band-major in [`BandId::ALL`] order.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BandId;
use crate::Provenance;

pub const N_BANDS: usize = 7;
pub const N_STATS: usize = 7;
pub const N_FEATURES: usize = N_BANDS * N_STATS;
pub const DEFAULT_BINS: usize = 64;

pub const STAT_NAMES: [&str; N_STATS] = [
    "mean",
    "std",
    "smoothness",
    "third_moment",
    "uniformity",
    "entropy",
    "gray_level_range",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Infected,
}

impl Label {
    /// Infected is the positive class, encoded as 1.
    pub fn target(self) -> f64 {
        match self {
            Label::Healthy => 0.0,
            Label::Infected => 1.0,
        }
    }

    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::Infected
        } else {
            Label::Healthy
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Infected => "infected",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Label::Healthy => Label::Infected,
            Label::Infected => Label::Healthy,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "healthy" => Ok(Label::Healthy),
            "infected" => Ok(Label::Infected),
            other => Err(Error::Format(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    lo: f64,
    hi: f64,
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// Bin center in the histogram's own units.
    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * (self.hi - self.lo) / self.n_bins() as f64
    }

    /// Bin center mapped to `[0, 1]`.
    pub fn normalized_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.n_bins() as f64
    }
}

/// Values are clamped into `[lo, hi]`; `hi` itself lands in the last bin.
pub fn build_histogram(pixels: &[f32], n_bins: usize, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if pixels.is_empty() {
        return Err(Error::EmptyPixels(
            "cannot build a histogram from zero pixels".into(),
        ));
    }
    if n_bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "histogram range [{lo}, {hi}] is empty"
        )));
    }
    let scale = n_bins as f64 / (hi - lo);
    let mut counts = vec![0u64; n_bins];
    for &v in pixels {
        if !v.is_finite() {
            return Err(Error::invalid("histogram input must be finite"));
        }
        let v = (v as f64).clamp(lo, hi);
        let bin = (((v - lo) * scale) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    Ok(Histogram {
        lo,
        hi,
        counts,
        total: pixels.len() as u64,
    })
}

/// The seven statistics of one histogram, in [`STAT_NAMES`] order.
pub fn histogram_stats(h: &Histogram) -> [f64; N_STATS] {
    let p = h.probabilities();
    let c: Vec<f64> = (0..h.n_bins()).map(|i| h.normalized_center(i)).collect();

    let mean: f64 = c.iter().zip(&p).map(|(c, p)| c * p).sum();
    let variance: f64 = c.iter().zip(&p).map(|(c, p)| (c - mean).powi(2) * p).sum();
    let std = variance.sqrt();
    let smoothness = 1.0 - 1.0 / (1.0 + variance);
    let third_moment: f64 = c.iter().zip(&p).map(|(c, p)| (c - mean).powi(3) * p).sum();
    let uniformity: f64 = p.iter().map(|p| p * p).sum();
    let entropy = p
        .iter()
        .filter(|&&p| p > 0.0)
        .fold(0.0, |e, p| e - p * p.log2());

    let occupied = || c.iter().zip(&p).filter(|(_, &p)| p != 0.0).map(|(c, _)| *c);
    let max = occupied().fold(f64::NEG_INFINITY, f64::max);
    let min = occupied().fold(f64::INFINITY, f64::min);

    [
        mean,
        std,
        smoothness,
        third_moment,
        uniformity,
        entropy,
        max - min,
    ]
}

/// Histogram binning per band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub n_bins: usize,
    /// `(lo, hi)` per band, indexed in [`BandId::ALL`] order.
    pub ranges: [(f64, f64); N_BANDS],
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let mut ranges = [(0.0, 1.5); N_BANDS];
        ranges[BandId::Thermal.index()] = (0.0, 60.0);
        FeatureConfig {
            n_bins: DEFAULT_BINS,
            ranges,
        }
    }
}

impl FeatureConfig {
    pub fn range(&self, band: BandId) -> (f64, f64) {
        self.ranges[band.index()]
    }
}

/// Exactly 49 finite values, band-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != N_FEATURES {
            return Err(Error::invalid(format!(
                "feature vector needs {N_FEATURES} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature vector contains non-finite values"));
        }
        Ok(FeatureVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn band(&self, band: BandId) -> &[f64] {
        let start = band.index() * N_STATS;
        &self.0[start..start + N_STATS]
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        FeatureVector::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

pub fn feature_name(index: usize) -> String {
    let band = BandId::ALL[index / N_STATS];
    format!("{}_{}", band.name(), STAT_NAMES[index % N_STATS])
}

pub fn extract_plant_features(
    masked: &BTreeMap<BandId, Vec<f32>>,
    config: &FeatureConfig,
) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(N_FEATURES);
    for band in BandId::ALL {
        let pixels = masked
            .get(&band)
            .ok_or_else(|| Error::EmptyPixels(format!("band {band} is missing")))?;
        if pixels.is_empty() {
            return Err(Error::EmptyPixels(format!(
                "band {band} has no canopy pixels"
            )));
        }
        let h = build_histogram(pixels, config.n_bins, config.range(band))?;
        values.extend(histogram_stats(&h));
    }
    FeatureVector::new(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub plant_id: String,
    pub gdd_stage: f64,
    pub label: Label,
    pub synthetic: bool,
    pub features: FeatureVector,
}

fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = ["plant_id", "gdd_stage", "label", "synthetic"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..N_FEATURES).map(|i| format!("f{i:02}")));
    h
}

/// Feature CSV: `plant_id,gdd_stage,label,synthetic,f00..f48`.
pub fn write_feature_csv<W: Write>(
    mut writer: W,
    records: &[FeatureRecord],
    provenance: Option<&Provenance>,
) -> Result<()> {
    if let Some(p) = provenance {
        p.write_header(&mut writer)?;
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header())?;
    for r in records {
        let mut row = vec![
            r.plant_id.clone(),
            r.gdd_stage.to_string(),
            r.label.to_string(),
            r.synthetic.to_string(),
        ];
        row.extend(r.features.as_slice().iter().map(|v| v.to_string()));
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io("<features>", e))?;
    Ok(())
}

pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<Vec<FeatureRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path.as_ref())?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != csv_header() {
        return Err(Error::Format(
            "feature CSV header does not match plant_id,gdd_stage,label,synthetic,f00..f48".into(),
        ));
    }
    let parse = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("bad {what} value `{s}`")))
    };
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let features = (4..4 + N_FEATURES)
            .map(|i| parse(&row[i], "feature"))
            .collect::<Result<Vec<_>>>()?;
        out.push(FeatureRecord {
            plant_id: row[0].to_owned(),
            gdd_stage: parse(&row[1], "gdd_stage")?,
            label: row[2].parse()?,
            synthetic: row[3]
                .parse()
                .map_err(|_| Error::Format(format!("bad synthetic flag `{}`", &row[3])))?,
            features: FeatureVector::new(features)?,
        });
    }
    Ok(out)
}

/// Rule-of-thumb Gaussian bandwidth `1.06 * sigma * n^(-1/5)`; `None` for degenerate samples.
pub fn silverman_bandwidth(pixels: &[f32]) -> Option<f64> {
    let n = pixels.len();
    if n < 2 {
        return None;
    }
    let mean = pixels.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = pixels
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / (n - 1) as f64;
    let bw = 1.06 * var.sqrt() * (n as f64).powf(-0.2);
    (bw > 0.0).then_some(bw)
}

/// Gaussian KDE sampled at `grid` evenly spaced points over `[min - 3bw, max + 3bw]`.
pub fn kde_curve(pixels: &[f32], bandwidth: f64, grid: usize) -> Result<Vec<(f64, f64)>> {
    if pixels.is_empty() {
        return Err(Error::EmptyPixels("KDE of zero samples".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::invalid(format!(
            "KDE bandwidth must be positive, got {bandwidth}"
        )));
    }
    if grid < 2 {
        return Err(Error::invalid("KDE grid needs at least two points"));
    }
    let samples: Vec<f64> = pixels.iter().map(|&v| v as f64).collect();
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (start, end) = (min - 3.0 * bandwidth, max + 3.0 * bandwidth);
    let step = (end - start) / (grid - 1) as f64;
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    Ok((0..grid)
        .map(|i| {
            let x = start + i as f64 * step;
            let density: f64 = samples
                .iter()
                .map(|s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
                .sum();
            (x, density * norm)
        })
        .collect())
}
