//! Scene to feature records: crop each plant, mask its canopy, histogram the
//! canopy pixels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canopy::{apply_mask, canopy_mask, DEFAULT_SOIL_FACTOR, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::features::{extract_plant_features, FeatureConfig, FeatureRecord, Label};
use crate::raster::{crop, MultibandRaster, PlotRegion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanopyConfig {
    pub soil_factor: f64,
    pub threshold: f64,
}

impl Default for CanopyConfig {
    fn default() -> Self {
        CanopyConfig {
            soil_factor: DEFAULT_SOIL_FACTOR,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedPlant {
    pub plant_id: String,
    pub reason: String,
}

/// Feature records for every labelled region of one scene. Plants whose mask
/// comes out empty are dropped and listed rather than failing the scene;
/// regions without a label are an error.
pub fn extract_scene_records(
    raster: &MultibandRaster,
    regions: &[PlotRegion],
    labels: &BTreeMap<String, Label>,
    gdd_stage: f64,
    canopy: &CanopyConfig,
    features: &FeatureConfig,
) -> Result<(Vec<FeatureRecord>, Vec<DroppedPlant>)> {
    let mut records = Vec::with_capacity(regions.len());
    let mut dropped = Vec::new();
    for region in regions {
        let label = *labels
            .get(&region.plant_id)
            .ok_or_else(|| Error::invalid(format!("no label for plant {}", region.plant_id)))?;
        let plot = crop(raster, region)?;
        let mask = canopy_mask(&plot, canopy.soil_factor, canopy.threshold)?;
        if mask.count() == 0 {
            dropped.push(DroppedPlant {
                plant_id: region.plant_id.clone(),
                reason: "no canopy pixels above the SAVI threshold".into(),
            });
            continue;
        }
        let pixels = apply_mask(&plot, &mask)?;
        match extract_plant_features(&pixels, features) {
            Ok(fv) => records.push(FeatureRecord {
                plant_id: region.plant_id.clone(),
                gdd_stage,
                label,
                synthetic: false,
                features: fv,
            }),
            Err(Error::EmptyPixels(why)) => dropped.push(DroppedPlant {
                plant_id: region.plant_id.clone(),
                reason: why,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok((records, dropped))
}
