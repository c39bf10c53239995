//! Broomrape detection from multispectral drone imagery.
//!
//! The pipeline runs plot rasters through reflectance calibration, SAVI canopy
//! masking and per-band histogram statistics, balances the classes by
//! mean-matched selection or SMOTE, and classifies growth-stage sequences with
//! a two-layer LSTM trained from scratch. [`synthgen`] produces synthetic
//! fields with known class separation so every stage can be exercised without
//! field data.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod balance;
pub mod calibration;
pub mod canopy;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod lstm;
pub mod phenology;
pub mod pipeline;
pub mod raster;
pub mod scenarios;
pub mod seeds;
pub mod synthgen;

use std::io::Write;

pub use balance::SequenceSample;
pub use error::{Error, Result};
pub use evaluate::{ConfusionMatrix, ScenarioReport};
pub use features::{FeatureRecord, FeatureVector, Label};
pub use lstm::{ModelConfig, ModelParams, TrainConfig};
pub use raster::{BandId, MultibandRaster, PlotRegion, RasterBand};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Comment lines identifying the run that produced an output table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Provenance {
            seed,
            config_hash: config_hash.into(),
            version: VERSION.to_owned(),
        }
    }

    pub fn write_header<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# broomscan {} seed={} config={}",
            self.version, self.seed, self.config_hash
        )
        .map_err(|e| Error::io("<provenance>", e))
    }
}
