use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use broomscan_core::calibration::{
    apply_calibration, fit_empirical_line, read_panels, write_panels, PanelObservation,
};
use broomscan_core::canopy::{apply_mask, canopy_mask, CanopyMask};
use broomscan_core::features::{
    extract_plant_features, kde_curve, silverman_bandwidth, write_feature_csv, FeatureRecord, Label,
};
use broomscan_core::phenology::{accumulate, read_weather, stage_dates, write_weather};
use broomscan_core::pipeline::extract_scene_records;
use broomscan_core::raster::{load_raster, read_regions, save_raster, write_regions, Grid, Units};
use broomscan_core::synthgen::{gen_field, gen_weather};
use broomscan_core::{BandId, MultibandRaster};

use crate::config::PipelineConfig;
use crate::output::{self, io_err};
use crate::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

/// Index of a synthetic field directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<StageEntry>,
    pub regions: String,
    pub weather: String,
    /// Present when scenes are in digital numbers and need calibrating.
    pub panels: Option<String>,
    pub labels: BTreeMap<String, Label>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageEntry {
    pub gdd: f64,
    /// Day of season on which the stage was reached.
    pub day: Option<usize>,
    pub scene: String,
    pub truth: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Infection effect scale (0 for no signal).
    #[arg(long)]
    effect: Option<f64>,
    /// Number of plants in the field.
    #[arg(long)]
    plants: Option<usize>,
    /// Write scenes as digital numbers plus a panel CSV instead of reflectance.
    #[arg(long)]
    digital_numbers: bool,
}

// linear sensor response used for digital-number scenes
const DN_OFFSET: f64 = -0.01;
const DN_PANELS: [f64; 2] = [0.05, 0.6];

fn dn_gain(band: BandId) -> f64 {
    2e-5 * (1.0 + 0.1 * band.index() as f64)
}

fn to_digital_numbers(raster: &MultibandRaster) -> CliResult<MultibandRaster> {
    let out = raster.map_bands(|band| {
        if band.band == BandId::Thermal {
            return Ok(band.clone());
        }
        let gain = dn_gain(band.band);
        let pixels = band
            .pixels()
            .iter()
            .map(|&r| ((r as f64 - DN_OFFSET) / gain) as f32)
            .collect();
        let mut b = band.with_grid(Grid::new(band.width(), band.height(), pixels)?);
        b.units = Units::DigitalNumber;
        Ok(b)
    })?;
    Ok(out)
}

fn panels() -> Vec<PanelObservation> {
    BandId::ALL
        .into_iter()
        .filter(|&b| b != BandId::Thermal)
        .flat_map(|band| {
            DN_PANELS.map(|r| PanelObservation {
                band,
                mean_dn: (r - DN_OFFSET) / dn_gain(band),
                known_reflectance: r,
            })
        })
        .collect()
}

pub fn synth(config: PipelineConfig, args: SynthArgs) -> CliResult {
    let mut config = config.resolved();
    if let Some(e) = args.effect {
        config.synth = config.synth.with_effect_scale(e);
    }
    if let Some(n) = args.plants {
        config.synth.n_plants = n;
    }
    let sc = &config.synth;
    sc.validate()?;
    let prov = config.provenance();
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let weather = gen_weather(sc)?;
    output::table(Some(&dir.join("weather.csv")), &prov, |w| {
        write_weather(w, &weather)
    })?;
    let days = stage_dates(&accumulate(&weather, sc.weather.tbase)?, &sc.stages)?;

    let mut stages = Vec::new();
    let mut labels = BTreeMap::new();
    let mut clamped = 0;
    for (s, day) in days.iter().enumerate() {
        let (raster, truth) = gen_field(sc, s)?;
        let tag = truth.stage.to_string();
        let raster = if args.digital_numbers {
            to_digital_numbers(&raster)?
        } else {
            raster
        };
        let scene = format!("scene_{tag}.json");
        save_raster(&raster, dir.join(&scene))?;
        let truth_file = format!("truth_{tag}.csv");
        output::table(Some(&dir.join(&truth_file)), &prov, |w| truth.write_csv(w))?;
        if s == 0 {
            output::table(Some(&dir.join("regions.csv")), &prov, |w| {
                write_regions(w, &truth.regions())
            })?;
            labels = truth.labels();
        }
        clamped += truth.clamped;
        stages.push(StageEntry {
            gdd: truth.stage,
            day: day.day,
            scene,
            truth: truth_file,
        });
    }
    let panels_file = args.digital_numbers.then(|| "panels.csv".to_owned());
    if let Some(p) = &panels_file {
        output::table(Some(&dir.join(p)), &prov, |w| write_panels(w, &panels()))?;
    }
    let manifest = Manifest {
        stages,
        regions: "regions.csv".into(),
        weather: "weather.csv".into(),
        panels: panels_file,
        labels,
    };
    output::write_json(&dir.join(MANIFEST), &manifest)?;
    output::write_json(&dir.join("config.json"), &config)?;
    println!(
        "{} plants ({} infected) at {} stages in {}; {clamped} reflectance values clamped",
        sc.n_plants,
        sc.n_infected(),
        sc.stages.len(),
        dir.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct GddArgs {
    /// Weather CSV with date,tmin,tmax.
    #[arg(long)]
    weather: Option<PathBuf>,
    #[arg(long)]
    tbase: Option<f64>,
    /// Comma-separated GDD targets.
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<f64>>,
    /// Stage table destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the cumulative series as date,gdd.
    #[arg(long)]
    series: Option<PathBuf>,
}

pub fn gdd(config: PipelineConfig, args: GddArgs) -> CliResult {
    let path = args
        .weather
        .or(config.paths.weather.clone())
        .ok_or_else(|| CliError::Usage("--weather is required".into()))?;
    let tbase = args.tbase.unwrap_or(config.phenology.tbase);
    let targets = args.targets.unwrap_or(config.phenology.targets.clone());
    let series = accumulate(&read_weather(&path)?, tbase)?;
    let dates = stage_dates(&series, &targets)?;
    let prov = config.provenance();
    output::table(args.out.as_deref(), &prov, |w| {
        let mut lines = String::from("target,day,date\n");
        for d in &dates {
            let day = d.day.map(|v| v.to_string()).unwrap_or_default();
            let date = d.date.map(|v| v.to_string()).unwrap_or_default();
            lines.push_str(&format!("{},{day},{date}\n", d.target));
        }
        output::text(w, &lines)
    })?;
    if let Some(p) = &args.series {
        output::table(Some(p), &prov, |w| {
            let mut lines = String::from("date,gdd\n");
            for (d, g) in series.dates.iter().zip(&series.cumulative) {
                lines.push_str(&format!("{d},{g}\n"));
            }
            output::text(w, &lines)
        })?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Panel CSV with band,mean_dn,known_reflectance.
    #[arg(long)]
    panels: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn calibrate(config: PipelineConfig, args: CalibrateArgs) -> CliResult {
    let panels = args
        .panels
        .or(config.paths.panels.clone())
        .ok_or_else(|| CliError::Usage("--panels is required".into()))?;
    let model = fit_empirical_line(&read_panels(&panels)?)?;
    let (raster, report) = apply_calibration(&model, &load_raster(&args.input)?)?;
    output::ensure_parent(&args.out)?;
    save_raster(&raster, &args.out)?;
    for (band, fit) in &model.lines {
        eprintln!(
            "{band}: gain {:.6e} offset {:.6}, {} clamped below 0, {} above the ceiling",
            fit.gain, fit.offset, report.negative[band], report.overflow[band]
        );
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct CropArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Region CSV with plant_id,x,y,w,h on the multispectral grid.
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Only this plant.
    #[arg(long)]
    plant: Option<String>,
}

pub fn crop(config: PipelineConfig, args: CropArgs) -> CliResult {
    let regions_path = args
        .regions
        .or(config.paths.regions.clone())
        .ok_or_else(|| CliError::Usage("--regions is required".into()))?;
    let raster = load_raster(&args.input)?;
    let regions: Vec<_> = read_regions(&regions_path)?
        .into_iter()
        .filter(|r| args.plant.as_ref().is_none_or(|p| &r.plant_id == p))
        .collect();
    if regions.is_empty() {
        return Err(CliError::Data("no matching regions".into()));
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    for region in &regions {
        let plot = broomscan_core::raster::crop(&raster, region)?;
        save_raster(
            &plot,
            args.out_dir.join(format!("{}.json", region.plant_id)),
        )?;
    }
    println!(
        "{} plots written to {}",
        regions.len(),
        args.out_dir.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// SAVI threshold; pixels strictly above it are canopy.
    #[arg(long)]
    tau: Option<f64>,
    /// SAVI soil adjustment factor.
    #[arg(long = "soil-factor", visible_alias = "L")]
    soil_factor: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

pub fn mask(config: PipelineConfig, args: MaskArgs) -> CliResult {
    let raster = load_raster(&args.input)?;
    let tau = args.tau.unwrap_or(config.canopy.threshold);
    let l = args.soil_factor.unwrap_or(config.canopy.soil_factor);
    let mask = canopy_mask(&raster, l, tau)?;
    output::ensure_parent(&args.out)?;
    mask.save(&args.out)?;
    println!(
        "{} of {} pixels are canopy",
        mask.count(),
        mask.bits().len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// One reflectance plot.
    #[arg(
        long = "in",
        conflicts_with = "data_dir",
        required_unless_present = "data_dir"
    )]
    input: Option<PathBuf>,
    /// Canopy mask for `--in`; computed from SAVI when absent.
    #[arg(long, requires = "input")]
    mask: Option<PathBuf>,
    #[arg(long, requires = "input")]
    plant_id: Option<String>,
    /// Growth stage of the plot; defaults to the first configured stage.
    #[arg(long, requires = "input")]
    stage: Option<f64>,
    #[arg(long, requires = "input")]
    label: Option<Label>,
    /// Per-band KDE curves of the canopy pixels, as band,x,density.
    #[arg(long, requires = "input")]
    kde_out: Option<PathBuf>,
    /// Synthetic field directory with a manifest; extracts every plant at every stage.
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn require_reflectance(raster: &MultibandRaster, what: &Path) -> CliResult {
    if raster.bands().any(|b| b.units == Units::DigitalNumber) {
        return Err(CliError::Data(format!(
            "{} holds digital numbers; calibrate it first",
            what.display()
        )));
    }
    Ok(())
}

pub fn features(config: PipelineConfig, args: FeaturesArgs) -> CliResult {
    let prov = config.provenance();
    let records = match (&args.input, &args.data_dir) {
        (Some(input), _) => vec![plot_features(&config, &args, input)?],
        (None, Some(dir)) => field_features(&config, dir)?,
        (None, None) => return Err(CliError::Usage("give --in or --data-dir".into())),
    };
    output::table(Some(&args.out), &prov, |w| {
        write_feature_csv(w, &records, None)
    })
}

fn plot_features(
    config: &PipelineConfig,
    args: &FeaturesArgs,
    input: &Path,
) -> CliResult<FeatureRecord> {
    let raster = load_raster(input)?;
    require_reflectance(&raster, input)?;
    let mask = match &args.mask {
        Some(p) => CanopyMask::load(p)?,
        None => canopy_mask(&raster, config.canopy.soil_factor, config.canopy.threshold)?,
    };
    let pixels = apply_mask(&raster, &mask)?;
    if let Some(path) = &args.kde_out {
        output::table(Some(path), &config.provenance(), |w| {
            let mut lines = String::from("band,x,density\n");
            for (band, values) in &pixels {
                let Some(bw) = silverman_bandwidth(values) else {
                    continue;
                };
                for (x, d) in kde_curve(values, bw, 256)? {
                    lines.push_str(&format!("{band},{x},{d}\n"));
                }
            }
            output::text(w, &lines)
        })?;
    }
    let stage = args
        .stage
        .or(config.phenology.targets.first().copied())
        .ok_or_else(|| {
            CliError::Usage("--stage is required when no stages are configured".into())
        })?;
    let plant_id = args.plant_id.clone().unwrap_or_else(|| {
        input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("plot")
            .to_owned()
    });
    Ok(FeatureRecord {
        plant_id,
        gdd_stage: stage,
        label: args.label.unwrap_or(Label::Healthy),
        synthetic: false,
        features: extract_plant_features(&pixels, &config.features)?,
    })
}

fn field_features(config: &PipelineConfig, dir: &Path) -> CliResult<Vec<FeatureRecord>> {
    let manifest: Manifest = output::read_json(&dir.join(MANIFEST))?;
    let regions = read_regions(dir.join(&manifest.regions))?;
    let calibration = match &manifest.panels {
        Some(p) => Some(fit_empirical_line(&read_panels(dir.join(p))?)?),
        None => None,
    };
    let mut records = Vec::new();
    for stage in &manifest.stages {
        let path = dir.join(&stage.scene);
        let mut raster = load_raster(&path)?;
        if let Some(model) = &calibration {
            raster = apply_calibration(model, &raster)?.0;
        }
        require_reflectance(&raster, &path)?;
        let (r, dropped) = extract_scene_records(
            &raster,
            &regions,
            &manifest.labels,
            stage.gdd,
            &config.canopy,
            &config.features,
        )?;
        for d in &dropped {
            eprintln!("stage {}: dropped {}: {}", stage.gdd, d.plant_id, d.reason);
        }
        records.extend(r);
    }
    Ok(records)
}
