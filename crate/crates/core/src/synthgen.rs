//! Synthetic fields with known labels and controllable class separation.
//!
//! Plants sit on a regular grid of square plots. Each plot holds one disk of
//! canopy over bare soil; membership is decided at pixel centres, so every
//! pixel is pure canopy or pure soil. Canopy reflectance is the healthy mean
//! plus a persistent per-plant offset, a per-stage offset and per-pixel
//! noise. Infected plants additionally lose NIR and red-edge reflectance and
//! warm up, by amounts that grow with the stage index. Thermal is simulated at
//! half and Pan at double the multispectral resolution.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::canopy::CanopyMask;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureRecord, Label, N_BANDS};
use crate::phenology::{accumulate, stage_dates, DailyWeather, DEFAULT_STAGES, DEFAULT_TBASE};
use crate::pipeline::{extract_scene_records, CanopyConfig, DroppedPlant};
use crate::raster::{BandId, MultibandRaster, PlotRegion, RasterBand, Units};
use crate::seeds;

/// Effect scales used by the experiments: no signal, and a signal that no
/// single stage separates cleanly but the whole season does.
pub const ZERO_EFFECT: f64 = 0.0;
pub const STRONG_EFFECT: f64 = 1.0;

/// Reflectance bands are clamped to this range; thermal is left as generated.
pub const REFLECTANCE_RANGE: (f64, f64) = (0.0, 1.5);

/// Per-stage infection effects, one entry per configured stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfectionEffect {
    pub nir_drop: Vec<f64>,
    pub red_edge_drop: Vec<f64>,
    /// Degrees Celsius.
    pub thermal_rise: Vec<f64>,
}

impl InfectionEffect {
    pub fn none(n_stages: usize) -> Self {
        Self::scaled(0.0, n_stages)
    }

    /// Effects present from the first stage and growing with the square root
    /// of the stage index, up to `scale * (0.04 NIR, 0.03 red-edge, 2 C)` at
    /// the last stage.
    pub fn scaled(scale: f64, n_stages: usize) -> Self {
        let ramp: Vec<f64> = (1..=n_stages)
            .map(|s| scale * (s as f64 / n_stages as f64).sqrt())
            .collect();
        InfectionEffect {
            nir_drop: ramp.iter().map(|w| 0.04 * w).collect(),
            red_edge_drop: ramp.iter().map(|w| 0.03 * w).collect(),
            thermal_rise: ramp.iter().map(|w| 2.0 * w).collect(),
        }
    }

    /// Additive shift per band (in [`BandId::ALL`] order) at one stage.
    fn shift(&self, stage: usize) -> [f64; N_BANDS] {
        let mut s = [0.0; N_BANDS];
        s[BandId::Nir.index()] = -self.nir_drop[stage];
        s[BandId::RedEdge.index()] = -self.red_edge_drop[stage];
        s[BandId::Thermal.index()] = self.thermal_rise[stage];
        s
    }

    fn series(&self) -> [(&'static str, &Vec<f64>); 3] {
        [
            ("nir_drop", &self.nir_drop),
            ("red_edge_drop", &self.red_edge_drop),
            ("thermal_rise", &self.thermal_rise),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherConfig {
    pub start_date: NaiveDate,
    pub season_days: usize,
    /// Seasonal mean of the daily mean temperature's baseline, Celsius.
    pub mean_temp: f64,
    /// Peak of the half-sine added to `mean_temp` over the season.
    pub amplitude: f64,
    /// `tmax - tmin` before noise.
    pub diurnal_range: f64,
    pub noise_std: f64,
    pub tbase: f64,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        WeatherConfig {
            start_date: NaiveDate::from_ymd_opt(2024, 3, 15).expect("valid date"),
            season_days: 160,
            mean_temp: 21.0,
            amplitude: 7.0,
            diurnal_range: 12.0,
            noise_std: 1.5,
            tbase: DEFAULT_TBASE,
        }
    }
}

/// Per-band arrays are indexed in [`BandId::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_plants: usize,
    pub infected_fraction: f64,
    pub stages: Vec<f64>,
    pub canopy_mean: [f64; N_BANDS],
    pub soil_mean: [f64; N_BANDS],
    pub pixel_noise: [f64; N_BANDS],
    /// Spread of each plant's persistent offset from the class mean.
    pub plant_std: [f64; N_BANDS],
    /// Spread of each plant's additional offset at one stage.
    pub stage_std: [f64; N_BANDS],
    pub effect: InfectionEffect,
    /// Plot side in multispectral pixels; must be even.
    pub plot_size: usize,
    pub columns: usize,
    pub canopy_cover: f64,
    pub weather: WeatherConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let stages = DEFAULT_STAGES.to_vec();
        let n = stages.len();
        SynthConfig {
            n_plants: 300,
            infected_fraction: 49.0 / 300.0,
            stages,
            canopy_mean: [0.05, 0.09, 0.05, 0.25, 0.5, 28.0, 0.12],
            soil_mean: [0.12, 0.14, 0.15, 0.18, 0.2, 35.0, 0.15],
            pixel_noise: [0.005, 0.008, 0.006, 0.015, 0.02, 0.8, 0.01],
            plant_std: [0.0012, 0.0018, 0.0012, 0.0045, 0.009, 0.24, 0.0024],
            stage_std: [0.005, 0.0075, 0.005, 0.02, 0.0375, 1.0, 0.01],
            effect: InfectionEffect::scaled(0.5, n),
            plot_size: 16,
            columns: 20,
            canopy_cover: 0.5,
            weather: WeatherConfig::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_effect_scale(mut self, scale: f64) -> Self {
        self.effect = InfectionEffect::scaled(scale, self.stages.len());
        self
    }

    /// No pixel noise and no plant or stage offsets.
    pub fn noiseless(mut self) -> Self {
        self.pixel_noise = [0.0; N_BANDS];
        self.plant_std = [0.0; N_BANDS];
        self.stage_std = [0.0; N_BANDS];
        self
    }

    pub fn n_infected(&self) -> usize {
        (self.n_plants as f64 * self.infected_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_plants == 0 {
            return Err(Error::invalid("need at least one plant"));
        }
        if !(self.infected_fraction > 0.0 && self.infected_fraction < 1.0) {
            return Err(Error::invalid("infected fraction must lie in (0, 1)"));
        }
        if !(self.canopy_cover > 0.0 && self.canopy_cover < 1.0) {
            return Err(Error::invalid("canopy cover must lie in (0, 1)"));
        }
        if self.stages.is_empty() || self.stages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "stages must be non-empty and strictly increasing",
            ));
        }
        let spreads = [self.pixel_noise, self.plant_std, self.stage_std];
        if spreads.iter().flatten().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("noise spreads must be nonnegative"));
        }
        for (name, series) in self.effect.series() {
            if series.len() != self.stages.len() {
                return Err(Error::invalid(format!(
                    "effect {name} has {} entries for {} stages",
                    series.len(),
                    self.stages.len()
                )));
            }
            if series.iter().any(|v| !(*v >= 0.0)) || series.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::invalid(format!(
                    "effect {name} must be nonnegative and nondecreasing"
                )));
            }
        }
        if self.plot_size < 4 || !self.plot_size.is_multiple_of(2) {
            return Err(Error::invalid("plot size must be even and at least 4"));
        }
        if self.columns == 0 {
            return Err(Error::invalid("need at least one plot column"));
        }
        Ok(())
    }

    /// Multispectral scene size.
    pub fn scene_dims(&self) -> (usize, usize) {
        let cols = self.columns.min(self.n_plants);
        let rows = self.n_plants.div_ceil(cols);
        (cols * self.plot_size, rows * self.plot_size)
    }

    pub fn plant_id(&self, index: usize) -> String {
        let width = self.n_plants.to_string().len().max(3);
        format!("P{:0width$}", index + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantTruth {
    pub plant_id: String,
    pub label: Label,
    pub region: PlotRegion,
    /// Plot-local, on the multispectral grid.
    pub mask: CanopyMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub stage: f64,
    pub plants: Vec<PlantTruth>,
    /// Reflectance samples pulled back into [`REFLECTANCE_RANGE`].
    pub clamped: u64,
}

impl GroundTruth {
    pub fn labels(&self) -> BTreeMap<String, Label> {
        self.plants
            .iter()
            .map(|p| (p.plant_id.clone(), p.label))
            .collect()
    }

    pub fn regions(&self) -> Vec<PlotRegion> {
        self.plants.iter().map(|p| p.region.clone()).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["plant_id", "label", "x", "y", "w", "h", "canopy_pixels"])?;
        for p in &self.plants {
            w.write_record([
                p.plant_id.clone(),
                p.label.to_string(),
                p.region.x.to_string(),
                p.region.y.to_string(),
                p.region.w.to_string(),
                p.region.h.to_string(),
                p.mask.count().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<ground truth>", e))?;
        Ok(())
    }
}

/// Exactly `n_infected` plants are infected, chosen by a seeded shuffle.
pub fn labels(config: &SynthConfig) -> Vec<Label> {
    let mut idx: Vec<usize> = (0..config.n_plants).collect();
    idx.shuffle(&mut seeds::rng_for(config.seed, "labels", 0));
    let mut out = vec![Label::Healthy; config.n_plants];
    for &i in &idx[..config.n_infected()] {
        out[i] = Label::Infected;
    }
    out
}

struct Plant {
    label: Label,
    cx: f64,
    cy: f64,
    radius: f64,
    offset: [f64; N_BANDS],
}

impl Plant {
    fn inside(&self, u: f64, v: f64) -> bool {
        (u - self.cx).powi(2) + (v - self.cy).powi(2) <= self.radius * self.radius
    }
}

fn normal(rng: &mut seeds::Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn plants(config: &SynthConfig) -> Vec<Plant> {
    let p = config.plot_size as f64;
    let base_radius = (config.canopy_cover * p * p / std::f64::consts::PI).sqrt();
    labels(config)
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut rng = seeds::rng_for(config.seed, "plant", i as u64);
            let radius = (base_radius * rng.random_range(0.9..1.1)).min(p / 2.0 - 0.5);
            let slack = p / 2.0 - radius;
            let cx = p / 2.0 + rng.random_range(-1.0..1.0) * slack.min(1.0);
            let cy = p / 2.0 + rng.random_range(-1.0..1.0) * slack.min(1.0);
            let mut offset = [0.0; N_BANDS];
            for (o, s) in offset.iter_mut().zip(config.plant_std) {
                *o = s * normal(&mut rng);
            }
            Plant {
                label,
                cx,
                cy,
                radius,
                offset,
            }
        })
        .collect()
}

fn band_units(band: BandId) -> Units {
    if band == BandId::Thermal {
        Units::Celsius
    } else {
        Units::Reflectance
    }
}

/// Grid size of `band` relative to the multispectral grid, as (numerator, denominator).
fn band_scale(band: BandId) -> (usize, usize) {
    match band {
        BandId::Thermal => (1, 2),
        BandId::Pan => (2, 1),
        _ => (1, 1),
    }
}

/// Scene raster and ground truth at `stage_index`. Identical seeds give
/// bit-identical scenes.
pub fn gen_field(
    config: &SynthConfig,
    stage_index: usize,
) -> Result<(MultibandRaster, GroundTruth)> {
    config.validate()?;
    if stage_index >= config.stages.len() {
        return Err(Error::invalid(format!(
            "stage index {stage_index} out of range for {} stages",
            config.stages.len()
        )));
    }
    let plants = plants(config);
    let (ms_w, ms_h) = config.scene_dims();
    let ps = config.plot_size;
    let cols = config.columns.min(config.n_plants);
    let shift = config.effect.shift(stage_index);

    // per-plant stage offset plus infection shift, drawn before any pixel
    let level: Vec<[f64; N_BANDS]> = plants
        .iter()
        .enumerate()
        .map(|(i, plant)| {
            let mut rng = seeds::rng_for(
                config.seed,
                "stage",
                (i * config.stages.len() + stage_index) as u64,
            );
            let mut l = [0.0; N_BANDS];
            for b in 0..N_BANDS {
                l[b] = config.canopy_mean[b]
                    + plant.offset[b]
                    + config.stage_std[b] * normal(&mut rng);
                if plant.label == Label::Infected {
                    l[b] += shift[b];
                }
            }
            l
        })
        .collect();

    let mut clamped = 0u64;
    let mut bands = Vec::with_capacity(N_BANDS);
    for band in BandId::ALL {
        let b = band.index();
        let (num, den) = band_scale(band);
        let (w, h) = (ms_w * num / den, ms_h * num / den);
        let mut pixels = vec![0.0f32; w * h];
        let mut rng = seeds::rng_for(
            config.seed,
            &format!("pixels-{}", band.name()),
            stage_index as u64,
        );
        for y in 0..h {
            for x in 0..w {
                // pixel centre in multispectral coordinates
                let u = (x as f64 + 0.5) * den as f64 / num as f64;
                let v = (y as f64 + 0.5) * den as f64 / num as f64;
                let (col, row) = ((u / ps as f64) as usize, (v / ps as f64) as usize);
                let idx = row * cols + col;
                let local = (u - (col * ps) as f64, v - (row * ps) as f64);
                let mean = match plants.get(idx) {
                    Some(p) if p.inside(local.0, local.1) => level[idx][b],
                    _ => config.soil_mean[b],
                };
                let mut value = mean + config.pixel_noise[b] * normal(&mut rng);
                if band != BandId::Thermal {
                    let c = value.clamp(REFLECTANCE_RANGE.0, REFLECTANCE_RANGE.1);
                    clamped += (c != value) as u64;
                    value = c;
                }
                pixels[y * w + x] = value as f32;
            }
        }
        bands.push(RasterBand::new(band, band_units(band), w, h, pixels)?);
    }
    let raster = MultibandRaster::new(bands)?;

    let truth = plants
        .iter()
        .enumerate()
        .map(|(i, plant)| {
            let (col, row) = (i % cols, i / cols);
            let bits = (0..ps * ps)
                .map(|k| plant.inside((k % ps) as f64 + 0.5, (k / ps) as f64 + 0.5))
                .collect();
            Ok(PlantTruth {
                plant_id: config.plant_id(i),
                label: plant.label,
                region: PlotRegion::new(config.plant_id(i), col * ps, row * ps, ps, ps),
                mask: CanopyMask::new(ps, ps, bits)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        raster,
        GroundTruth {
            stage: config.stages[stage_index],
            plants: truth,
            clamped,
        },
    ))
}

/// Daily temperatures: a half-sine season on top of `mean_temp`, a fixed
/// diurnal range and Gaussian noise. Fails if the cumulative GDD never reaches
/// the last configured stage.
pub fn gen_weather(config: &SynthConfig) -> Result<Vec<DailyWeather>> {
    let wc = &config.weather;
    if wc.season_days < config.stages.len() {
        return Err(Error::invalid(format!(
            "season of {} days cannot hold {} stages",
            wc.season_days,
            config.stages.len()
        )));
    }
    if !(wc.noise_std >= 0.0) || !(wc.diurnal_range >= 0.0) {
        return Err(Error::invalid("weather spreads must be nonnegative"));
    }
    let mut rng = seeds::rng_for(config.seed, "weather", 0);
    let mut out = Vec::with_capacity(wc.season_days);
    let mut date = wc.start_date;
    for d in 0..wc.season_days {
        let phase = std::f64::consts::PI * (d as f64 + 0.5) / wc.season_days as f64;
        let mid = wc.mean_temp + wc.amplitude * phase.sin();
        let a = mid + wc.diurnal_range / 2.0 + wc.noise_std * normal(&mut rng);
        let b = mid - wc.diurnal_range / 2.0 + wc.noise_std * normal(&mut rng);
        out.push(DailyWeather {
            date,
            tmin: a.min(b),
            tmax: a.max(b),
        });
        date = date
            .succ_opt()
            .ok_or_else(|| Error::invalid("season runs past the calendar"))?;
    }
    let series = accumulate(&out, wc.tbase)?;
    let reached = stage_dates(&series, &config.stages)?;
    if let Some(missed) = reached.iter().find(|s| !s.reached()) {
        return Err(Error::invalid(format!(
            "season reaches {:.1} GDD, short of stage {}",
            series.season_total(),
            missed.target
        )));
    }
    Ok(out)
}

/// Run every stage's scene through the feature pipeline.
pub fn gen_records(
    config: &SynthConfig,
    canopy: &CanopyConfig,
    features: &FeatureConfig,
) -> Result<(Vec<FeatureRecord>, Vec<DroppedPlant>)> {
    let mut records = Vec::new();
    let mut dropped = Vec::new();
    for s in 0..config.stages.len() {
        let (raster, truth) = gen_field(config, s)?;
        let (r, d) = extract_scene_records(
            &raster,
            &truth.regions(),
            &truth.labels(),
            truth.stage,
            canopy,
            features,
        )?;
        records.extend(r);
        dropped.extend(d);
    }
    Ok((records, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canopy::{canopy_mask, savi};
    use crate::raster::crop;

    fn small() -> SynthConfig {
        SynthConfig {
            n_plants: 30,
            columns: 6,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_counts() {
        let c = SynthConfig::default();
        assert_eq!(c.n_infected(), 49);
        assert_eq!(
            labels(&c).iter().filter(|&&l| l == Label::Infected).count(),
            49
        );
        assert_eq!(c.scene_dims(), (320, 240));
    }

    #[test]
    fn band_grids() {
        let (r, _) = gen_field(&small(), 0).unwrap();
        assert_eq!(r.require(BandId::Nir).unwrap().grid.dims(), (96, 80));
        assert_eq!(r.require(BandId::Thermal).unwrap().grid.dims(), (48, 40));
        assert_eq!(r.require(BandId::Pan).unwrap().grid.dims(), (192, 160));
    }

    #[test]
    fn canopy_and_soil_savi() {
        let nir = RasterBand::new(BandId::Nir, Units::Reflectance, 2, 1, vec![0.5, 0.2]).unwrap();
        let red = RasterBand::new(BandId::Red, Units::Reflectance, 2, 1, vec![0.05, 0.15]).unwrap();
        let s = savi(&nir, &red, 0.5).unwrap();
        // 0.45 / 1.05 * 1.5 and 0.05 / 0.85 * 1.5
        assert!((s.pixels()[0] as f64 - 0.642_857_142_857).abs() < 1e-6);
        assert!((s.pixels()[1] as f64 - 0.088_235_294_118).abs() < 1e-6);
        assert!(s.pixels()[0] > 0.5 && s.pixels()[1] < 0.5);
    }

    #[test]
    fn noiseless_masks_match_truth() {
        let config = small().noiseless().with_effect_scale(1.0);
        for stage in [0, 4] {
            let (r, truth) = gen_field(&config, stage).unwrap();
            for p in &truth.plants {
                let mask = canopy_mask(&crop(&r, &p.region).unwrap(), 0.5, 0.5).unwrap();
                assert_eq!(mask, p.mask, "plant {}", p.plant_id);
                assert!(mask.count() > 0);
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let (a, ta) = gen_field(&small(), 2).unwrap();
        let (b, tb) = gen_field(&small(), 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = gen_field(&SynthConfig { seed: 1, ..small() }, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_effect_classes_share_a_distribution() {
        let c = small().with_effect_scale(0.0);
        assert!(c.effect.shift(4).iter().all(|&v| v == 0.0));
        let s = SynthConfig::default().with_effect_scale(1.0).effect;
        assert!(s.nir_drop.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn invalid_configs() {
        assert!(SynthConfig {
            infected_fraction: 1.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            plot_size: 15,
            ..small()
        }
        .validate()
        .is_err());
        let mut c = small().with_effect_scale(1.0);
        c.effect.thermal_rise.reverse();
        assert!(c.validate().is_err());
    }

    #[test]
    fn clamping_is_counted() {
        let mut c = small();
        c.canopy_mean[BandId::Blue.index()] = 0.0;
        let (_, truth) = gen_field(&c, 0).unwrap();
        assert!(truth.clamped > 0);
        let (_, truth) = gen_field(&small().noiseless(), 0).unwrap();
        assert_eq!(truth.clamped, 0);
    }

    #[test]
    fn weather_reaches_every_stage() {
        let c = SynthConfig::default();
        let w = gen_weather(&c).unwrap();
        assert_eq!(w.len(), c.weather.season_days);
        assert!(w.iter().all(|d| d.tmin <= d.tmax));
        assert_eq!(w, gen_weather(&c).unwrap());
        let short = SynthConfig {
            weather: WeatherConfig {
                season_days: 30,
                ..WeatherConfig::default()
            },
            ..c.clone()
        };
        assert!(gen_weather(&short).is_err());
        let tiny = SynthConfig {
            weather: WeatherConfig {
                season_days: 3,
                ..WeatherConfig::default()
            },
            ..c
        };
        assert!(gen_weather(&tiny).is_err());
    }

    #[test]
    fn records_cover_every_plant_and_stage() {
        let c = small();
        let (records, dropped) =
            gen_records(&c, &CanopyConfig::default(), &FeatureConfig::default()).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(records.len(), 30 * 5);
    }
}
