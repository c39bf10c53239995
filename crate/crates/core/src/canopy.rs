//! SAVI and canopy/soil segmentation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{BandId, Grid, MultibandRaster, RasterBand};

pub const DEFAULT_SOIL_FACTOR: f64 = 0.5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const DENOMINATOR_GUARD: f64 = 1e-9;

/// One bit per multispectral pixel; `true` marks canopy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanopyMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl CanopyMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::invalid(format!(
                "mask of {}x{} cannot hold {} bits",
                width,
                height,
                bits.len()
            )));
        }
        Ok(CanopyMask {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        CanopyMask::new(width, height, vec![false; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// `u32` LE width, `u32` LE height, then row-major bits packed LSB-first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.bits.len().div_ceil(8));
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for chunk in self.bits.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i));
            out.push(byte);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("mask file shorter than its header".into()));
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let n = width * height;
        let payload = &bytes[8..];
        if payload.len() != n.div_ceil(8) {
            return Err(Error::Format(format!(
                "mask {}x{} needs {} payload bytes, found {}",
                width,
                height,
                n.div_ceil(8),
                payload.len()
            )));
        }
        let bits = (0..n).map(|i| payload[i / 8] >> (i % 8) & 1 == 1).collect();
        CanopyMask::new(width, height, bits)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        CanopyMask::from_bytes(&bytes)
    }
}

/// Soil-adjusted vegetation index, `(NIR - Red) / (NIR + Red + L) * (1 + L)`.
///
/// Pixels where either input is nodata, or where the denominator magnitude
/// falls below 1e-9, come out as nodata.
pub fn savi(nir: &RasterBand, red: &RasterBand, soil_factor: f64) -> Result<Grid> {
    if nir.grid.dims() != red.grid.dims() {
        return Err(Error::GridMismatch(format!(
            "NIR is {}x{} but Red is {}x{}",
            nir.width(),
            nir.height(),
            red.width(),
            red.height()
        )));
    }
    if !(soil_factor >= 0.0) {
        return Err(Error::invalid(format!(
            "soil factor must be >= 0, got {soil_factor}"
        )));
    }
    let pixels = nir
        .pixels()
        .iter()
        .zip(red.pixels())
        .map(|(&n, &r)| {
            if n.is_nan() || r.is_nan() {
                return f32::NAN;
            }
            let (n, r) = (n as f64, r as f64);
            let denom = n + r + soil_factor;
            if denom.abs() < DENOMINATOR_GUARD {
                f32::NAN
            } else {
                ((n - r) / denom * (1.0 + soil_factor)) as f32
            }
        })
        .collect();
    Grid::new(nir.width(), nir.height(), pixels)
}

/// Strictly greater than `tau` is canopy; nodata never is.
pub fn threshold_mask(index: &Grid, tau: f64) -> CanopyMask {
    let bits = index
        .pixels()
        .iter()
        .map(|&v| !v.is_nan() && v as f64 > tau)
        .collect();
    CanopyMask {
        width: index.width(),
        height: index.height(),
        bits,
    }
}

/// Canopy pixels per band, in row-major order with nodata dropped. Bands on
/// another grid (Thermal, Pan) are resampled onto the mask grid first.
pub fn apply_mask(
    raster: &MultibandRaster,
    mask: &CanopyMask,
) -> Result<BTreeMap<BandId, Vec<f32>>> {
    let dims = (mask.width, mask.height);
    let mut out = BTreeMap::new();
    for band in raster.bands() {
        let grid = if band.grid.dims() == dims {
            std::borrow::Cow::Borrowed(&band.grid)
        } else if band.band.is_multispectral() {
            return Err(Error::GridMismatch(format!(
                "band {} is {}x{} but the mask is {}x{}",
                band.band,
                band.width(),
                band.height(),
                dims.0,
                dims.1
            )));
        } else {
            std::borrow::Cow::Owned(band.grid.resample_nearest(dims.0, dims.1)?)
        };
        let values = grid
            .pixels()
            .iter()
            .zip(&mask.bits)
            .filter(|&(v, &m)| m && !v.is_nan())
            .map(|(&v, _)| v)
            .collect();
        out.insert(band.band, values);
    }
    Ok(out)
}

/// SAVI mask of a reflectance raster, using its NIR and Red bands.
pub fn canopy_mask(raster: &MultibandRaster, soil_factor: f64, tau: f64) -> Result<CanopyMask> {
    let index = savi(
        raster.require(BandId::Nir)?,
        raster.require(BandId::Red)?,
        soil_factor,
    )?;
    Ok(threshold_mask(&index, tau))
}
