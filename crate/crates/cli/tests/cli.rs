use std::path::Path;
use std::process::{Command, Output};

fn broomscan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_broomscan"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = broomscan(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn exit_codes_separate_usage_data_and_invariant_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(broomscan(dir.path(), &["bogus"]).status.code(), Some(1));
    assert_eq!(
        broomscan(
            dir.path(),
            &["scenario", "--out", "r.csv", "--scenario", "S9"]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        broomscan(
            dir.path(),
            &["features", "--in", "missing.json", "--out", "f.csv"]
        )
        .status
        .code(),
        Some(2)
    );
    assert_eq!(broomscan(dir.path(), &["--help"]).status.code(), Some(0));
    // a tolerance no finite-difference check can meet
    assert_eq!(
        broomscan(dir.path(), &["gradcheck", "--tolerance", "1e-30"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn gradcheck_passes_with_and_without_regularization() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gradcheck"]);
    let out = ok(
        dir.path(),
        &[
            "gradcheck",
            "--dims",
            "4,6,3",
            "--dropout",
            "0.2",
            "--l2",
            "1e-3",
            "--seed",
            "3",
        ],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
}

fn run_pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ok(
        dir,
        &[
            "--seed",
            "11",
            "synth",
            "--out-dir",
            "field",
            "--plants",
            "40",
        ],
    );
    ok(
        dir,
        &[
            "--seed",
            "11",
            "features",
            "--data-dir",
            "field",
            "--out",
            "features.csv",
        ],
    );
    ok(
        dir,
        &[
            "--seed",
            "11",
            "scenario",
            "--data",
            "features.csv",
            "--scenario",
            "S1,S4",
            "--scope",
            "pre_split",
            "--epochs",
            "2",
            "--out",
            "report.csv",
            "--json",
            "report.json",
            "--plots-dir",
            "plots",
        ],
    );
    let mut files = Vec::new();
    for name in [
        "features.csv",
        "report.csv",
        "report.json",
        "plots/confusion.csv",
        "plots/accuracy_bars.csv",
    ] {
        files.push((name.to_owned(), std::fs::read(dir.join(name)).unwrap()));
    }
    let mut plots: Vec<_> = std::fs::read_dir(dir.join("plots"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    plots.sort();
    for p in plots {
        files.push((
            p.file_name().unwrap().to_string_lossy().into_owned(),
            std::fs::read(&p).unwrap(),
        ));
    }
    files
}

#[test]
fn pipeline_outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_pipeline(a.path());
    let second = run_pipeline(b.path());
    assert_eq!(first.len(), second.len());
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        assert!(x == y, "{name} differs between runs");
    }
    let report = String::from_utf8_lossy(&first[1].1).into_owned();
    assert!(report.starts_with("# broomscan"));
    // S1 has one row per stage, S4 one per prefix of two or more stages
    assert_eq!(report.lines().filter(|l| l.starts_with("S1,")).count(), 5);
    assert_eq!(report.lines().filter(|l| l.starts_with("S4,")).count(), 4);

    let rendered = ok(a.path(), &["report", "--in", "report.csv"]);
    assert!(String::from_utf8_lossy(&rendered.stdout).contains("41633"));
}

#[test]
fn digital_numbers_calibrate_back_to_reflectance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth",
            "--out-dir",
            "dn",
            "--plants",
            "12",
            "--digital-numbers",
        ],
    );
    ok(d, &["synth", "--out-dir", "refl", "--plants", "12"]);
    // uncalibrated scenes are refused by the feature extractor
    ok(
        d,
        &[
            "crop",
            "--in",
            "dn/scene_324.json",
            "--regions",
            "dn/regions.csv",
            "--out-dir",
            "raw",
            "--plant",
            "P001",
        ],
    );
    let refused = broomscan(d, &["features", "--in", "raw/P001.json", "--out", "x.csv"]);
    assert_ne!(refused.status.code(), Some(0));

    ok(
        d,
        &[
            "calibrate",
            "--panels",
            "dn/panels.csv",
            "--in",
            "dn/scene_324.json",
            "--out",
            "cal/scene.json",
        ],
    );
    for (scene, name) in [("cal/scene.json", "cal"), ("refl/scene_324.json", "ref")] {
        ok(
            d,
            &[
                "crop",
                "--in",
                scene,
                "--regions",
                "refl/regions.csv",
                "--out-dir",
                name,
                "--plant",
                "P001",
            ],
        );
        ok(
            d,
            &[
                "mask",
                "--in",
                &format!("{name}/P001.json"),
                "--out",
                &format!("{name}/mask.json"),
            ],
        );
        ok(
            d,
            &[
                "features",
                "--in",
                &format!("{name}/P001.json"),
                "--mask",
                &format!("{name}/mask.json"),
                "--out",
                &format!("{name}.csv"),
            ],
        );
    }
    let row = |f: &str| -> Vec<f64> {
        let text = std::fs::read_to_string(d.join(f)).unwrap();
        let line = text
            .lines()
            .find(|l| l.starts_with("P001"))
            .unwrap()
            .to_owned();
        line.split(',')
            .skip(4)
            .map(|v| v.parse().unwrap())
            .collect()
    };
    let (cal, reference) = (row("cal.csv"), row("ref.csv"));
    assert_eq!(cal.len(), 49);
    for (i, (a, b)) in cal.iter().zip(&reference).enumerate() {
        assert!(
            (a - b).abs() <= 1e-3 * (1.0 + b.abs()),
            "feature {i}: {a} vs {b}"
        );
    }
}

#[test]
fn balance_and_train_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out-dir", "f", "--plants", "40"]);
    ok(d, &["features", "--data-dir", "f", "--out", "feat.csv"]);
    let out = ok(
        d,
        &[
            "balance", "--in", "feat.csv", "--method", "smote", "--out", "bal.csv",
        ],
    );
    let msg = String::from_utf8_lossy(&out.stderr).into_owned();
    let text = std::fs::read_to_string(d.join("bal.csv")).unwrap();
    let infected = text.lines().filter(|l| l.contains(",infected,")).count();
    let healthy = text.lines().filter(|l| l.contains(",healthy,")).count();
    assert_eq!(infected, healthy, "{msg}");
    assert!(text.contains("~syn"));
    ok(
        d,
        &[
            "train",
            "--data",
            "feat.csv",
            "--epochs",
            "2",
            "--out",
            "model/ck.json",
            "--history",
            "hist.csv",
        ],
    );
    assert!(d.join("model/ck.json").exists());
    let hist = std::fs::read_to_string(d.join("hist.csv")).unwrap();
    assert_eq!(hist.lines().filter(|l| !l.starts_with('#')).count(), 3);
}
