//! Growing degree days and growth-stage scheduling.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TBASE: f64 = 10.0;
pub const DEFAULT_STAGES: [f64; 5] = [324.0, 574.0, 897.0, 1195.0, 1556.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyWeather {
    pub date: NaiveDate,
    pub tmin: f64,
    pub tmax: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GddSeries {
    pub dates: Vec<NaiveDate>,
    pub cumulative: Vec<f64>,
}

impl GddSeries {
    pub fn start_date(&self) -> NaiveDate {
        self.dates[0]
    }

    pub fn season_total(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDate {
    pub target: f64,
    /// 1-based day of season; `None` when the season never reaches the target.
    pub day: Option<usize>,
    pub date: Option<NaiveDate>,
}

impl StageDate {
    pub fn reached(&self) -> bool {
        self.day.is_some()
    }
}

/// Daily GDD with the mean floored at the base temperature (tmin/tmax are not
/// clamped individually).
pub fn daily_gdd(tmax: f64, tmin: f64, tbase: f64) -> Result<f64> {
    if tmin > tmax {
        return Err(Error::invalid(format!("tmin {tmin} exceeds tmax {tmax}")));
    }
    Ok(((tmax + tmin) / 2.0 - tbase).max(0.0))
}

pub fn accumulate(weather: &[DailyWeather], tbase: f64) -> Result<GddSeries> {
    if weather.is_empty() {
        return Err(Error::invalid("empty weather series"));
    }
    if let Some(w) = weather.windows(2).find(|w| w[1].date <= w[0].date) {
        return Err(Error::invalid(format!(
            "weather dates must strictly increase ({} then {})",
            w[0].date, w[1].date
        )));
    }
    let mut total = 0.0;
    let mut cumulative = Vec::with_capacity(weather.len());
    for day in weather {
        total += daily_gdd(day.tmax, day.tmin, tbase)?;
        cumulative.push(total);
    }
    Ok(GddSeries {
        dates: weather.iter().map(|w| w.date).collect(),
        cumulative,
    })
}

/// First day on which cumulative GDD reaches each target.
pub fn stage_dates(series: &GddSeries, targets: &[f64]) -> Result<Vec<StageDate>> {
    if targets.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::invalid("stage targets must be positive"));
    }
    if targets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("stage targets must be ascending"));
    }
    Ok(targets
        .iter()
        .map(|&target| {
            // cumulative is nondecreasing, so the first crossing is a partition point
            let idx = series.cumulative.partition_point(|&c| c < target);
            let hit = idx < series.cumulative.len();
            StageDate {
                target,
                day: hit.then_some(idx + 1),
                date: hit.then(|| series.dates[idx]),
            }
        })
        .collect())
}

pub fn read_weather(path: impl AsRef<Path>) -> Result<Vec<DailyWeather>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path.as_ref())?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_weather<W: std::io::Write>(writer: W, weather: &[DailyWeather]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for day in weather {
        w.serialize(day)?;
    }
    w.flush().map_err(|e| Error::io("<weather>", e))?;
    Ok(())
}
