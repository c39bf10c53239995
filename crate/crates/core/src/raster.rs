//! Multiband plot rasters and the BSQ-F32 on-disk container.
//!
//! A BSQ-F32 raster is a UTF-8 JSON header plus one raw payload file per band.
//! Payloads hold little-endian IEEE-754 `f32` values, row-major. NaN is the
//! nodata sentinel everywhere in this crate.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "BSQ-F32";

/// The seven sensor bands, in canonical (feature-vector) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BandId {
    Blue,
    Green,
    Red,
    RedEdge,
    #[serde(rename = "NIR")]
    Nir,
    Thermal,
    Pan,
}

impl BandId {
    pub const ALL: [BandId; 7] = [
        BandId::Blue,
        BandId::Green,
        BandId::Red,
        BandId::RedEdge,
        BandId::Nir,
        BandId::Thermal,
        BandId::Pan,
    ];

    pub const MULTISPECTRAL: [BandId; 5] = [
        BandId::Blue,
        BandId::Green,
        BandId::Red,
        BandId::RedEdge,
        BandId::Nir,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BandId::Blue => "Blue",
            BandId::Green => "Green",
            BandId::Red => "Red",
            BandId::RedEdge => "RedEdge",
            BandId::Nir => "NIR",
            BandId::Thermal => "Thermal",
            BandId::Pan => "Pan",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        BandId::ALL
            .into_iter()
            .find(|b| b.name() == name)
            .ok_or_else(|| Error::UnknownBand(name.to_owned()))
    }

    /// Position in the canonical band order.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Nominal center wavelength in nm; `None` for the thermal and panchromatic bands.
    pub fn center_wavelength_nm(self) -> Option<f64> {
        match self {
            BandId::Blue => Some(475.0),
            BandId::Green => Some(560.0),
            BandId::Red => Some(668.0),
            BandId::RedEdge => Some(717.0),
            BandId::Nir => Some(842.0),
            BandId::Thermal | BandId::Pan => None,
        }
    }

    pub fn is_multispectral(self) -> bool {
        !matches!(self, BandId::Thermal | BandId::Pan)
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "digital-number")]
    DigitalNumber,
    #[serde(rename = "reflectance")]
    Reflectance,
    #[serde(rename = "celsius")]
    Celsius,
}

/// A row-major `f32` pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Grid {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::SizeMismatch {
                band: "grid".into(),
                expected: width * height,
                actual: pixels.len(),
            });
        }
        if pixels.iter().any(|v| v.is_infinite()) {
            return Err(Error::invalid("grid contains infinite values"));
        }
        Ok(Grid {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Grid::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    fn window(&self, x: usize, y: usize, w: usize, h: usize) -> Grid {
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            pixels.extend_from_slice(&self.pixels[start..start + w]);
        }
        Grid {
            width: w,
            height: h,
            pixels,
        }
    }

    /// Nearest-neighbour resampling: output `(i, j)` reads source row
    /// `floor((i + 0.5) * src_h / dst_h)` and column `floor((j + 0.5) * src_w / dst_w)`.
    pub fn resample_nearest(&self, target_w: usize, target_h: usize) -> Result<Grid> {
        if target_w == 0 || target_h == 0 {
            return Err(Error::invalid("resample target must be at least 1x1"));
        }
        // floor((2k + 1) * src / (2 * dst)) is the same index in exact integer arithmetic.
        let cols: Vec<usize> = (0..target_w)
            .map(|j| ((2 * j + 1) * self.width) / (2 * target_w))
            .collect();
        let mut pixels = Vec::with_capacity(target_w * target_h);
        for i in 0..target_h {
            let src_row = ((2 * i + 1) * self.height) / (2 * target_h);
            let row = &self.pixels[src_row * self.width..(src_row + 1) * self.width];
            pixels.extend(cols.iter().map(|&c| row[c]));
        }
        Ok(Grid {
            width: target_w,
            height: target_h,
            pixels,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterBand {
    pub band: BandId,
    pub units: Units,
    pub grid: Grid,
}

impl RasterBand {
    pub fn new(
        band: BandId,
        units: Units,
        width: usize,
        height: usize,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        let grid = Grid::new(width, height, pixels).map_err(|e| match e {
            Error::SizeMismatch {
                expected, actual, ..
            } => Error::SizeMismatch {
                band: band.name().into(),
                expected,
                actual,
            },
            other => other,
        })?;
        Ok(RasterBand { band, units, grid })
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn pixels(&self) -> &[f32] {
        self.grid.pixels()
    }

    pub fn with_grid(&self, grid: Grid) -> RasterBand {
        RasterBand {
            band: self.band,
            units: self.units,
            grid,
        }
    }
}

/// Up to seven bands of one scene or plot. The five multispectral bands share
/// one grid; Thermal and Pan may each sit on their own grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandRaster {
    bands: BTreeMap<BandId, RasterBand>,
}

impl MultibandRaster {
    pub fn new(bands: impl IntoIterator<Item = RasterBand>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for band in bands {
            if map.insert(band.band, band).is_some() {
                return Err(Error::invalid("duplicate band in raster"));
            }
        }
        if map.is_empty() {
            return Err(Error::NoBands);
        }
        let mut ms_dims = None;
        for band in map.values().filter(|b| b.band.is_multispectral()) {
            let dims = band.grid.dims();
            match ms_dims {
                None => ms_dims = Some(dims),
                Some(d) if d != dims => {
                    return Err(Error::GridMismatch(format!(
                        "multispectral band {} is {}x{}, expected {}x{}",
                        band.band, dims.0, dims.1, d.0, d.1
                    )))
                }
                _ => {}
            }
        }
        Ok(MultibandRaster { bands: map })
    }

    pub fn band(&self, id: BandId) -> Option<&RasterBand> {
        self.bands.get(&id)
    }

    pub fn require(&self, id: BandId) -> Result<&RasterBand> {
        self.band(id)
            .ok_or_else(|| Error::invalid(format!("raster lacks band {id}")))
    }

    pub fn bands(&self) -> impl Iterator<Item = &RasterBand> {
        self.bands.values()
    }

    pub fn band_ids(&self) -> impl Iterator<Item = BandId> + '_ {
        self.bands.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// Dimensions of the reference grid: the multispectral grid, or the first
    /// band's grid if no multispectral band is present.
    pub fn reference_dims(&self) -> (usize, usize) {
        self.bands
            .values()
            .find(|b| b.band.is_multispectral())
            .or_else(|| self.bands.values().next())
            .map(|b| b.grid.dims())
            .expect("raster is never empty")
    }

    pub fn into_bands(self) -> impl Iterator<Item = RasterBand> {
        self.bands.into_values()
    }

    pub fn map_bands<F>(&self, mut f: F) -> Result<MultibandRaster>
    where
        F: FnMut(&RasterBand) -> Result<RasterBand>,
    {
        let bands = self
            .bands
            .values()
            .map(&mut f)
            .collect::<Result<Vec<_>>>()?;
        MultibandRaster::new(bands)
    }
}

/// Bounding box of one plant on the multispectral grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotRegion {
    pub plant_id: String,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PlotRegion {
    pub fn new(plant_id: impl Into<String>, x: usize, y: usize, w: usize, h: usize) -> Self {
        PlotRegion {
            plant_id: plant_id.into(),
            x,
            y,
            w,
            h,
        }
    }

    pub fn full(plant_id: impl Into<String>, width: usize, height: usize) -> Self {
        PlotRegion::new(plant_id, 0, 0, width, height)
    }

    /// `inner` is relative to this box; the result is relative to this box's parent.
    pub fn compose(&self, inner: &PlotRegion) -> PlotRegion {
        PlotRegion::new(
            inner.plant_id.clone(),
            self.x + inner.x,
            self.y + inner.y,
            inner.w,
            inner.h,
        )
    }

    fn check_inside(&self, width: usize, height: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x + self.w > width || self.y + self.h > height {
            return Err(Error::OutOfBounds(format!(
                "box ({}, {}, {}, {}) for plant {} does not fit a {}x{} grid",
                self.x, self.y, self.w, self.h, self.plant_id, width, height
            )));
        }
        Ok(())
    }

    /// The same ground footprint on a grid of `(to_w, to_h)` pixels, rounded outward.
    pub fn scaled(&self, from: (usize, usize), to: (usize, usize)) -> PlotRegion {
        let (fw, fh) = from;
        let (tw, th) = to;
        let x0 = self.x * tw / fw;
        let y0 = self.y * th / fh;
        let x1 = ((self.x + self.w) * tw).div_ceil(fw).min(tw).max(x0 + 1);
        let y1 = ((self.y + self.h) * th).div_ceil(fh).min(th).max(y0 + 1);
        PlotRegion::new(self.plant_id.clone(), x0, y0, x1 - x0, y1 - y0)
    }
}

pub fn crop(raster: &MultibandRaster, region: &PlotRegion) -> Result<MultibandRaster> {
    let reference = raster.reference_dims();
    region.check_inside(reference.0, reference.1)?;
    raster.map_bands(|band| {
        let dims = band.grid.dims();
        let b = if dims == reference {
            region.clone()
        } else {
            region.scaled(reference, dims)
        };
        Ok(band.with_grid(band.grid.window(b.x, b.y, b.w, b.h)))
    })
}

pub fn resample_nearest(band: &RasterBand, target_w: usize, target_h: usize) -> Result<RasterBand> {
    Ok(band.with_grid(band.grid.resample_nearest(target_w, target_h)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    bands: Vec<HeaderBand>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderBand {
    name: String,
    width: f64,
    height: f64,
    units: Units,
    payload: String,
}

fn header_dim(value: f64, what: &str, band: &str) -> Result<usize> {
    if !value.is_finite() || value < 1.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
        return Err(Error::Format(format!(
            "band {band}: {what} must be a positive integer, got {value}"
        )));
    }
    Ok(value as usize)
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<MultibandRaster> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&text)?;
    if header.format != FORMAT_TAG {
        return Err(Error::Format(format!(
            "unsupported format tag `{}`",
            header.format
        )));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut bands = Vec::with_capacity(header.bands.len());
    for entry in &header.bands {
        let id = BandId::from_name(&entry.name)?;
        let width = header_dim(entry.width, "width", &entry.name)?;
        let height = header_dim(entry.height, "height", &entry.name)?;
        let payload_path = dir.join(&entry.payload);
        let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
        if bytes.len() % 4 != 0 || bytes.len() / 4 != width * height {
            return Err(Error::SizeMismatch {
                band: entry.name.clone(),
                expected: width * height,
                actual: bytes.len() / 4,
            });
        }
        let pixels = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        bands.push(RasterBand::new(id, entry.units, width, height, pixels)?);
    }
    MultibandRaster::new(bands)
}

/// Payload files are written next to the header as `<stem>.<band>.f32`.
pub fn save_raster(raster: &MultibandRaster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if raster.is_empty() {
        return Err(Error::NoBands);
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).ok_or_else(|| {
        Error::invalid(format!(
            "cannot derive payload names from {}",
            path.display()
        ))
    })?;
    let mut entries = Vec::with_capacity(raster.len());
    for band in raster.bands() {
        let payload = format!("{stem}.{}.f32", band.band.name());
        let payload_path: PathBuf = dir.join(&payload);
        let mut bytes = Vec::with_capacity(band.pixels().len() * 4);
        for v in band.pixels() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&payload_path, bytes).map_err(|e| Error::io(&payload_path, e))?;
        entries.push(HeaderBand {
            name: band.band.name().to_owned(),
            width: band.width() as f64,
            height: band.height() as f64,
            units: band.units,
            payload,
        });
    }
    let header = Header {
        format: FORMAT_TAG.to_owned(),
        bands: entries,
    };
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_regions(path: impl AsRef<Path>) -> Result<Vec<PlotRegion>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_regions<W: std::io::Write>(writer: W, regions: &[PlotRegion]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in regions {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<regions>", e))?;
    Ok(())
}
