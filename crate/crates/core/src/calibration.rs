//! Empirical-line conversion of digital numbers to reflectance.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BandId, MultibandRaster, Units};

/// Calibrated reflectance is clamped to `[0, REFLECTANCE_CEILING]`.
pub const REFLECTANCE_CEILING: f32 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub band: BandId,
    pub mean_dn: f64,
    pub known_reflectance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub gain: f64,
    pub offset: f64,
}

impl LineFit {
    pub fn apply(&self, dn: f64) -> f64 {
        self.gain * dn + self.offset
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub lines: BTreeMap<BandId, LineFit>,
}

/// Pixels clamped per band during [`apply_calibration`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClampReport {
    pub negative: BTreeMap<BandId, usize>,
    pub overflow: BTreeMap<BandId, usize>,
}

fn validate(obs: &PanelObservation) -> Result<()> {
    if obs.band == BandId::Thermal {
        return Err(Error::invalid(
            "thermal band is radiometric already and takes no panel fit",
        ));
    }
    if !(obs.mean_dn > 0.0 && obs.mean_dn.is_finite()) {
        return Err(Error::invalid(format!(
            "panel DN must be positive, got {} for {}",
            obs.mean_dn, obs.band
        )));
    }
    if !(obs.known_reflectance > 0.0 && obs.known_reflectance <= 1.0) {
        return Err(Error::invalid(format!(
            "panel reflectance must lie in (0, 1], got {} for {}",
            obs.known_reflectance, obs.band
        )));
    }
    Ok(())
}

fn fit_band(band: BandId, obs: &[PanelObservation]) -> Result<LineFit> {
    let n = obs.len() as f64;
    let mean_x = obs.iter().map(|o| o.mean_dn).sum::<f64>() / n;
    let mean_y = obs.iter().map(|o| o.known_reflectance).sum::<f64>() / n;
    let sxx: f64 = obs.iter().map(|o| (o.mean_dn - mean_x).powi(2)).sum();

    let fit = if sxx == 0.0 {
        // one distinct DN: through-origin line, which needs one consistent reflectance
        if obs
            .iter()
            .any(|o| o.known_reflectance != obs[0].known_reflectance)
        {
            return Err(Error::invalid(format!(
                "band {band}: panels share DN {} but disagree on reflectance",
                obs[0].mean_dn
            )));
        }
        LineFit {
            gain: obs[0].known_reflectance / obs[0].mean_dn,
            offset: 0.0,
        }
    } else {
        let sxy: f64 = obs
            .iter()
            .map(|o| (o.mean_dn - mean_x) * (o.known_reflectance - mean_y))
            .sum();
        let gain = sxy / sxx;
        LineFit {
            gain,
            offset: mean_y - gain * mean_x,
        }
    };
    if !(fit.gain > 0.0) {
        return Err(Error::invalid(format!(
            "band {band}: fitted gain {} is not positive",
            fit.gain
        )));
    }
    Ok(fit)
}

/// One panel per band gives a line through the origin; more give a least-squares line.
pub fn fit_empirical_line(observations: &[PanelObservation]) -> Result<CalibrationModel> {
    if observations.is_empty() {
        return Err(Error::invalid("no panel observations"));
    }
    let mut by_band: BTreeMap<BandId, Vec<PanelObservation>> = BTreeMap::new();
    for obs in observations {
        validate(obs)?;
        by_band.entry(obs.band).or_default().push(*obs);
    }
    let lines = by_band
        .into_iter()
        .map(|(band, obs)| Ok((band, fit_band(band, &obs)?)))
        .collect::<Result<_>>()?;
    Ok(CalibrationModel { lines })
}

/// Thermal passes through untouched; every other band must be in digital
/// numbers and have a fitted line.
pub fn apply_calibration(
    model: &CalibrationModel,
    raster: &MultibandRaster,
) -> Result<(MultibandRaster, ClampReport)> {
    let mut report = ClampReport::default();
    let out = raster.map_bands(|band| {
        if band.band == BandId::Thermal {
            return Ok(band.clone());
        }
        let line = model
            .lines
            .get(&band.band)
            .ok_or(Error::MissingCalibration(band.band))?;
        if band.units != Units::DigitalNumber {
            return Err(Error::invalid(format!(
                "band {} is not in digital numbers",
                band.band
            )));
        }
        let (mut negative, mut overflow) = (0, 0);
        let pixels: Vec<f32> = band
            .pixels()
            .iter()
            .map(|&dn| {
                if dn.is_nan() {
                    return dn;
                }
                let r = line.apply(dn as f64) as f32;
                if r < 0.0 {
                    negative += 1;
                    0.0
                } else if r > REFLECTANCE_CEILING {
                    overflow += 1;
                    REFLECTANCE_CEILING
                } else {
                    r
                }
            })
            .collect();
        report.negative.insert(band.band, negative);
        report.overflow.insert(band.band, overflow);
        let mut out = band.with_grid(crate::raster::Grid::new(
            band.width(),
            band.height(),
            pixels,
        )?);
        out.units = Units::Reflectance;
        Ok(out)
    })?;
    Ok((out, report))
}

pub fn read_panels(path: impl AsRef<Path>) -> Result<Vec<PanelObservation>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path.as_ref())?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_panels<W: std::io::Write>(writer: W, panels: &[PanelObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in panels {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io("<panels>", e))?;
    Ok(())
}
