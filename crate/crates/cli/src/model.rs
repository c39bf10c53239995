use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;

use broomscan_core::balance::{
    assert_feature_width, balance as balance_samples, records_from_sequences,
    sequences_from_records, BalanceMethod, SequenceSample,
};
use broomscan_core::evaluate::{
    confusion, per_class_report, render_table, write_confusion_csv, write_report_csv,
    write_report_json, ReportMeta,
};
use broomscan_core::features::{read_feature_csv, write_feature_csv, FeatureRecord};
use broomscan_core::lstm::{
    self, gradcheck as gc, param_count_note, predict_batch, save_checkpoint, Checkpoint,
};
use broomscan_core::scenarios::{
    run_scenario, split_samples, Partition, ScenarioConfig, ScenarioId, SmoteScope,
};
use broomscan_core::{seeds, Label, ModelConfig, ScenarioReport};

use crate::config::PipelineConfig;
use crate::output::{self, file_tag, io_err};
use crate::{CliError, CliResult};

fn parse_method(s: &str) -> Result<BalanceMethod, String> {
    match s.to_ascii_lowercase().as_str() {
        "meanmatch" | "mean-match" => Ok(BalanceMethod::Meanmatch),
        "smote" => Ok(BalanceMethod::Smote),
        other => Err(format!(
            "unknown balance method `{other}` (meanmatch or smote)"
        )),
    }
}

fn load_records(config: &PipelineConfig, data: Option<PathBuf>) -> CliResult<Vec<FeatureRecord>> {
    let path = data
        .or(config.paths.features.clone())
        .ok_or_else(|| CliError::Usage("a feature CSV is required (--data or --in)".into()))?;
    Ok(read_feature_csv(&path)?)
}

fn stages_or_all(records: &[FeatureRecord], stages: Option<Vec<f64>>) -> Vec<f64> {
    stages.unwrap_or_else(|| {
        let mut s: Vec<f64> = records.iter().map(|r| r.gdd_stage).collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    })
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: Option<BalanceMethod>,
    /// Final size of the balanced class.
    #[arg(long)]
    target: Option<usize>,
    /// SMOTE neighbours.
    #[arg(long)]
    k: Option<usize>,
    /// Stages forming each sequence; all stages in the table when absent.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

pub fn balance(config: PipelineConfig, args: BalanceArgs) -> CliResult {
    let records = load_records(&config, args.input)?;
    let stages = stages_or_all(&records, args.stages);
    let (samples, skipped) = sequences_from_records(&records, &stages)?;
    if !skipped.is_empty() {
        eprintln!(
            "{} plants lack one of the stages and were left out",
            skipped.len()
        );
    }
    let b = &config.balance;
    let balanced = balance_samples(
        &samples,
        args.method.unwrap_or(b.method),
        args.target.or(b.target),
        args.k.unwrap_or(b.k),
        seeds::derive(config.seed, "balance", 0),
        b.mode,
    )?;
    let infected = balanced
        .iter()
        .filter(|s| s.label == Label::Infected)
        .count();
    eprintln!(
        "{} infected, {} healthy after balancing",
        infected,
        balanced.len() - infected
    );
    let out = records_from_sequences(&balanced)?;
    output::table(Some(&args.out), &config.provenance(), |w| {
        write_feature_csv(w, &out, None)
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature CSV; split into train, validation and test by plant.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Checkpoint destination.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss and accuracy CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

pub fn train(config: PipelineConfig, args: TrainArgs) -> CliResult {
    let records = load_records(&config, args.data)?;
    let stages = stages_or_all(&records, args.stages);
    let (samples, _) = sequences_from_records(&records, &stages)?;
    assert_feature_width(&samples)?;
    let mut tc = config.train.clone();
    tc.seed = config.seed;
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    let assignment = split_samples(&samples, tc.split, seeds::derive(config.seed, "split", 0))?;
    let mut parts: BTreeMap<Partition, Vec<SequenceSample>> = BTreeMap::new();
    for s in samples {
        parts
            .entry(assignment.get(&s.plant_id).expect("assigned"))
            .or_default()
            .push(s);
    }
    let mut take = |p| parts.remove(&p).unwrap_or_default();
    let (train_set, val, test) = (
        take(Partition::Train),
        take(Partition::Val),
        take(Partition::Test),
    );
    let (params, history) = lstm::train(&train_set, &val, &config.model, &tc)?;
    output::ensure_parent(&args.out)?;
    save_checkpoint(
        &Checkpoint {
            params: params.clone(),
            seed: config.seed,
            epoch: tc.epochs,
        },
        &args.out,
    )?;
    if let Some(path) = &args.history {
        output::table(Some(path), &config.provenance(), |w| history.write_csv(w))?;
    }
    if test.is_empty() {
        println!(
            "trained on {} sequences; no test partition",
            train_set.len()
        );
        return Ok(());
    }
    let predicted: Vec<Label> = predict_batch(&params, &test)?
        .into_iter()
        .map(|p| p.0)
        .collect();
    let labels: Vec<Label> = test.iter().map(|s| s.label).collect();
    let report = per_class_report(
        &confusion(&predicted, &labels, Label::Infected)?,
        ReportMeta {
            scenario: "train".into(),
            stages,
            augmentation: "none".into(),
        },
    )?;
    println!(
        "test accuracy {:.2}%, broomrape recall {:.2}%, precision {:.2}% on {} sequences",
        report.accuracy,
        report.broomrape.recall,
        report.broomrape.precision,
        test.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Feature CSV from `features`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Scenarios to run, e.g. S1,S4.
    #[arg(long, value_delimiter = ',', conflicts_with = "all")]
    scenario: Vec<ScenarioId>,
    /// Run every scenario in the configuration.
    #[arg(long)]
    all: bool,
    /// Where SMOTE runs relative to the split: train_only or pre_split.
    #[arg(long)]
    scope: Option<SmoteScope>,
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Report CSV destination.
    #[arg(long)]
    out: PathBuf,
    /// Also write the reports, with confusion counts, as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Directory for plot data: training curves, test probabilities,
    /// confusion counts and accuracy bars.
    #[arg(long, value_name = "DIR")]
    plots_dir: Option<PathBuf>,
}

fn selected_scenarios(config: &PipelineConfig, args: &ScenarioArgs) -> Vec<ScenarioConfig> {
    let base = config.resolved();
    let mut chosen: Vec<ScenarioConfig> = if args.scenario.is_empty() {
        base.scenarios.clone()
    } else {
        args.scenario
            .iter()
            .map(|&id| {
                base.scenarios
                    .iter()
                    .find(|s| s.id == id)
                    .cloned()
                    .unwrap_or_else(|| ScenarioConfig::new(id, base.seed))
            })
            .collect()
    };
    for s in &mut chosen {
        if let Some(scope) = args.scope {
            s.smote_scope = scope;
        }
        if let Some(stages) = &args.stages {
            s.stages = stages.clone();
        }
    }
    chosen
}

pub fn scenario(config: PipelineConfig, args: ScenarioArgs) -> CliResult {
    let mut config = config;
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    let scenarios = selected_scenarios(&config, &args);
    if scenarios.is_empty() {
        return Err(CliError::Usage("no scenarios selected".into()));
    }
    // record the effective selection so the provenance hash covers it
    config.scenarios = scenarios.clone();
    let records = load_records(&config, args.data.clone())?;
    let prov = config.provenance();

    let mut reports: Vec<ScenarioReport> = Vec::new();
    for sc in &scenarios {
        let runs = run_scenario(&records, sc, &config.model, &config.train)?;
        for run in runs {
            let r = &run.report;
            eprintln!(
                "{} {:<26} {:<17} accuracy {:6.2}  broomrape recall {:6.2}",
                r.scenario,
                r.stage_tag(),
                r.augmentation,
                r.accuracy,
                r.broomrape.recall
            );
            if let Some(dir) = &args.plots_dir {
                let stem = format!("{}_{}", r.scenario, file_tag(&r.stage_tag()));
                output::table(Some(&dir.join(format!("history_{stem}.csv"))), &prov, |w| {
                    run.history.write_csv(w)
                })?;
                output::table(
                    Some(&dir.join(format!("probabilities_{stem}.csv"))),
                    &prov,
                    |w| {
                        let mut lines = String::from("plant_id,label,synthetic,probability\n");
                        for p in &run.test_predictions {
                            lines.push_str(&format!(
                                "{},{},{},{}\n",
                                p.plant_id, p.label, p.synthetic, p.probability
                            ));
                        }
                        output::text(w, &lines)
                    },
                )?;
            }
            reports.push(run.report);
        }
    }

    output::table(Some(&args.out), &prov, |w| {
        write_report_csv(w, &reports, None)
    })?;
    if let Some(path) = &args.json {
        let mut f = output::create(path)?;
        write_report_json(&mut f, &reports)?;
        std::io::Write::flush(&mut f).map_err(|e| io_err(path, e))?;
    }
    if let Some(dir) = &args.plots_dir {
        output::table(Some(&dir.join("confusion.csv")), &prov, |w| {
            write_confusion_csv(w, &reports, None)
        })?;
        output::table(Some(&dir.join("accuracy_bars.csv")), &prov, |w| {
            let mut lines = String::from("scenario,stages,augmentation,accuracy\n");
            for r in &reports {
                lines.push_str(&format!(
                    "{},{},{},{:.2}\n",
                    r.scenario,
                    r.stage_tag(),
                    r.augmentation,
                    r.accuracy
                ));
            }
            output::text(w, &lines)
        })?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Input width followed by the hidden size of each layer.
    #[arg(long, value_delimiter = ',', default_value = "5,8")]
    dims: Vec<usize>,
    /// Sequence length.
    #[arg(long, default_value_t = 3)]
    seq: usize,
    #[arg(long, default_value_t = gc::DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    #[arg(long, default_value_t = gc::DEFAULT_TOLERANCE)]
    tolerance: f64,
}

pub fn gradcheck(config: PipelineConfig, args: GradcheckArgs) -> CliResult {
    if args.dims.len() < 2 {
        return Err(CliError::Usage(
            "--dims needs an input width and at least one hidden size".into(),
        ));
    }
    let model = ModelConfig {
        input_dim: args.dims[0],
        hidden: args.dims[1..].to_vec(),
        dropout: args.dropout,
        l2: args.l2,
        ..config.model.clone()
    };
    let r = gc::check(&model, args.seq, config.seed, args.eps)?;
    let i = r.worst_index;
    println!(
        "max relative error {:.3e} over {} parameters (worst index {i}: analytic {:.6e}, numeric {:.6e})",
        r.max_rel_error, r.n_params, r.analytic[i], r.numeric[i]
    );
    if r.passes(args.tolerance) {
        Ok(())
    } else {
        Err(CliError::Invariant(format!(
            "gradient check error {:.3e} exceeds {:.1e}",
            r.max_rel_error, args.tolerance
        )))
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report CSV from `scenario`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Text destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn report(config: PipelineConfig, args: ReportArgs) -> CliResult {
    let file = std::fs::File::open(&args.input).map_err(|e| io_err(&args.input, e))?;
    let mut text = render_table(file)?;
    text.push('\n');
    text.push_str(&param_count_note(&config.model));
    text.push('\n');
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_err(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
