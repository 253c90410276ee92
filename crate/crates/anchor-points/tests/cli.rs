//! End-to-end tests of the `anchor-points` binary: exit codes, file outputs,
//! and the contracts each subcommand promises.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::DMatrix;

use anchor_points::corr::{logistic, CorrelationModel};
use anchor_points::synth::{generate_population, SynthSpec};
use anchor_points::tensor::{save_prediction_tensor, PredictionTensor};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_anchor-points")
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).to_string(),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().to_string()
}

/// Small noisy population bundle for generic subcommand tests.
fn small_bundle(dir: &Path, seed: u64) -> PathBuf {
    let spec = SynthSpec {
        n_models: 10,
        n_examples: 24,
        class_count: 2,
        latent_rank: 2,
        noise_sigma: 0.2,
        trend_mix: 0.0,
        family_offsets: None,
        seed,
        n_profiles: Some(4),
        skill_decay: None,
    };
    let (tensor, _) = generate_population(&spec).unwrap();
    save_prediction_tensor(&tensor, dir).unwrap()
}

#[test]
fn validate_accepts_a_clean_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_bundle(dir.path(), 1);
    let (code, stdout, _) = run(&["validate", &path_str(&manifest)]);
    assert_eq!(code, 0, "stdout: {stdout}");
    assert!(stdout.contains("ok"));
}

#[test]
fn validate_flags_bad_row_sums_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("class_0.csv"), "0.4,0.5\n0.5,0.5\n").unwrap();
    fs::write(dir.path().join("class_1.csv"), "0.5,0.5\n0.5,0.5\n").unwrap();
    fs::write(dir.path().join("labels.txt"), "0\n1\n").unwrap();
    let manifest = dir.path().join("manifest.json");
    fs::write(
        &manifest,
        r#"{"model_ids":["m0","m1"],"example_ids":["e0","e1"],"class_count":2,
           "labels_file":"labels.txt","class_files":["class_0.csv","class_1.csv"]}"#,
    )
    .unwrap();
    let (code, stdout, _) = run(&["validate", &path_str(&manifest)]);
    assert_eq!(code, 1);
    assert!(stdout.contains("error:"), "stdout: {stdout}");
    assert!(stdout.contains("sum"), "stdout: {stdout}");
}

#[test]
fn validate_missing_manifest_is_exit_two() {
    let (code, _, stderr) = run(&["validate", "/nonexistent/manifest.json"]);
    assert_eq!(code, 2, "stderr: {stderr}");
}

#[test]
fn select_full_budget_reports_zero_objective_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_bundle(dir.path(), 2);
    let out1 = dir.path().join("a1.json");
    let out2 = dir.path().join("a2.json");
    let (code, stdout, _) = run(&[
        "select",
        "--manifest",
        &path_str(&manifest),
        "--k",
        "24",
        "--seed",
        "9",
        "--out",
        &path_str(&out1),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("objective: 0"), "stdout: {stdout}");
    let (code, _, _) = run(&[
        "select",
        "--manifest",
        &path_str(&manifest),
        "--k",
        "24",
        "--seed",
        "9",
        "--out",
        &path_str(&out2),
    ]);
    assert_eq!(code, 0);
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
}

#[test]
fn select_separates_latent_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_models: 8,
        n_examples: 12,
        class_count: 2,
        latent_rank: 2,
        noise_sigma: 0.0,
        trend_mix: 0.0,
        family_offsets: None,
        seed: 5,
        n_profiles: Some(2),
        skill_decay: None,
    };
    let (tensor, truth) = generate_population(&spec).unwrap();
    let manifest = save_prediction_tensor(&tensor, dir.path()).unwrap();
    let out = dir.path().join("anchors.json");
    let (code, _, _) = run(&[
        "select",
        "--manifest",
        &path_str(&manifest),
        "--k",
        "2",
        "--seed",
        "3",
        "--out",
        &path_str(&out),
    ]);
    assert_eq!(code, 0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let medoids: Vec<String> = json["medoids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let profiles: Vec<usize> = medoids
        .iter()
        .map(|id| {
            let idx = tensor.example_index(id).unwrap();
            truth.profile[idx]
        })
        .collect();
    assert_ne!(profiles[0], profiles[1], "medoids {medoids:?} share a profile");
    // Objective is essentially zero: anchors cover both profiles exactly.
    assert!(json["objective"].as_f64().unwrap() < 1e-6);
}

fn write_score_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let anchors = dir.join("anchors.json");
    fs::write(
        &anchors,
        r#"{
  "medoids": ["e0", "e2"],
  "weights": [3, 1],
  "assignment": {"e0": "e0", "e1": "e0", "e2": "e2", "e3": "e0"},
  "objective": 0.1,
  "seed": 0
}"#,
    )
    .unwrap();
    let evals = dir.join("evals.csv");
    fs::write(
        &evals,
        "model_id,example_id,confidence\ntarget_a,e0,0.8\ntarget_a,e2,0.4\n",
    )
    .unwrap();
    (anchors, evals)
}

#[test]
fn score_computes_the_weighted_mean() {
    let dir = tempfile::tempdir().unwrap();
    let (anchors, evals) = write_score_fixture(dir.path());
    let out = dir.path().join("scores.csv");
    let (code, stdout, _) = run(&[
        "score",
        "--anchors",
        &path_str(&anchors),
        "--evals",
        &path_str(&evals),
        "--out",
        &path_str(&out),
    ]);
    assert_eq!(code, 0);
    // (3 * 0.8 + 1 * 0.4) / 4 = 0.7
    assert!(stdout.contains("target_a: 0.7"), "stdout: {stdout}");
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("model_id,apw_score"));
    assert!(text.contains("target_a,0.7"));
}

#[test]
fn score_with_unit_weights_is_the_plain_mean() {
    let dir = tempfile::tempdir().unwrap();
    let anchors = dir.path().join("anchors.json");
    fs::write(
        &anchors,
        r#"{
  "medoids": ["e0", "e1"],
  "weights": [1, 1],
  "assignment": {"e0": "e0", "e1": "e1"},
  "objective": 0.0,
  "seed": 0
}"#,
    )
    .unwrap();
    let evals = dir.path().join("evals.csv");
    fs::write(&evals, "model_id,example_id,confidence\nm,e0,0.3\nm,e1,0.5\n").unwrap();
    let (code, stdout, _) = run(&["score", "--anchors", &path_str(&anchors), "--evals", &path_str(&evals)]);
    assert_eq!(code, 0);
    assert!(stdout.contains("m: 0.4"), "stdout: {stdout}");
}

#[test]
fn score_rejects_mismatched_anchor_ids() {
    let dir = tempfile::tempdir().unwrap();
    let (anchors, _) = write_score_fixture(dir.path());
    let evals = dir.path().join("bad.csv");
    fs::write(&evals, "model_id,example_id,confidence\nm,e0,0.8\nm,e9,0.4\n").unwrap();
    let (code, _, stderr) = run(&["score", "--anchors", &path_str(&anchors), "--evals", &path_str(&evals)]);
    assert_eq!(code, 1);
    assert!(stderr.contains("e2"), "stderr: {stderr}");
}

/// Bundle whose columns are all identical across examples, so fitted trends
/// are the identity.
fn identity_bundle(dir: &Path) -> PathBuf {
    let confs = [0.2, 0.35, 0.5, 0.65, 0.8];
    let class0 = DMatrix::from_fn(5, 6, |m, _| confs[m]);
    let class1 = class0.map(|v| 1.0 - v);
    let (tensor, _) = PredictionTensor::new(
        (0..5).map(|m| format!("m{m}")).collect(),
        (0..6).map(|x| format!("e{x}")).collect(),
        2,
        vec![class0, class1],
        vec![0; 6],
    )
    .unwrap();
    save_prediction_tensor(&tensor, dir).unwrap()
}

#[test]
fn predict_identity_trends_copy_the_anchor_value() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = identity_bundle(dir.path());
    let anchors = dir.path().join("anchors.json");
    let (code, _, _) = run(&[
        "select",
        "--manifest",
        &path_str(&manifest),
        "--k",
        "1",
        "--seed",
        "1",
        "--out",
        &path_str(&anchors),
    ]);
    assert_eq!(code, 0);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&anchors).unwrap()).unwrap();
    let anchor_id = json["medoids"][0].as_str().unwrap().to_string();

    let evals = dir.path().join("evals.csv");
    fs::write(
        &evals,
        format!("model_id,example_id,confidence\ntarget,{anchor_id},0.66\n"),
    )
    .unwrap();
    let out = dir.path().join("estimates.csv");
    let (code, _, stderr) = run(&[
        "predict",
        "--manifest",
        &path_str(&manifest),
        "--anchors",
        &path_str(&anchors),
        "--evals",
        &path_str(&evals),
        "--out",
        &path_str(&out),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "example_id,estimate,is_anchor");
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let est: f64 = fields[1].parse().unwrap();
        assert!((est - 0.66).abs() <= 1e-9, "line {line}");
    }
}

#[test]
fn predict_rejects_unknown_anchor_ids() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = identity_bundle(dir.path());
    let anchors = dir.path().join("anchors.json");
    run(&[
        "select",
        "--manifest",
        &path_str(&manifest),
        "--k",
        "1",
        "--seed",
        "1",
        "--out",
        &path_str(&anchors),
    ]);
    let evals = dir.path().join("evals.csv");
    fs::write(&evals, "model_id,example_id,confidence\ntarget,not_an_example,0.5\n").unwrap();
    let out = dir.path().join("estimates.csv");
    let (code, _, _) = run(&[
        "predict",
        "--manifest",
        &path_str(&manifest),
        "--anchors",
        &path_str(&anchors),
        "--evals",
        &path_str(&evals),
        "--out",
        &path_str(&out),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn map_renders_an_equilateral_layout_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    // Pairwise correlation 0 between three examples: distance 1 everywhere.
    let corr = DMatrix::<f64>::identity(3, 3);
    let cm = CorrelationModel::from_corr(corr, 1e-6, 5).unwrap();
    let ids: Vec<String> = (0..3).map(|i| format!("p{i}")).collect();
    let corr_path = dir.path().join("corr.csv");
    anchor_points::corr::save_correlation(&cm, &corr_path, Some(&ids)).unwrap();
    let colors = dir.path().join("colors.csv");
    fs::write(&colors, "example_id,color\np0,0.1\np1,0.5\np2,0.9\n").unwrap();
    let svg1 = dir.path().join("map1.svg");
    let svg2 = dir.path().join("map2.svg");
    for svg in [&svg1, &svg2] {
        let (code, stdout, stderr) = run(&[
            "map",
            "--correlation",
            &path_str(&corr_path),
            "--colors",
            &path_str(&colors),
            "--out",
            &path_str(svg),
            "--title",
            "fixture",
        ]);
        assert_eq!(code, 0, "stderr: {stderr}");
        assert!(stdout.contains("stress"));
    }
    assert_eq!(fs::read(&svg1).unwrap(), fs::read(&svg2).unwrap());

    // Coordinates reproduce the unit-distance triangle.
    let coords_text = fs::read_to_string(dir.path().join("map1.csv")).unwrap();
    let pts: Vec<(f64, f64)> = coords_text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    for i in 0..3 {
        for j in (i + 1)..3 {
            let dist = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
            assert!((dist - 1.0).abs() <= 1e-9, "pair ({i},{j}) at distance {dist}");
        }
    }
}

/// Population whose confidences are monotone in a scalar skill, giving
/// strictly ordered accuracies and perfect anchor scores.
fn monotone_bundle(dir: &Path) -> PathBuf {
    let n = 8;
    let d = 40;
    let skills: Vec<f64> = (0..n).map(|m| -1.53 + 3.0 * m as f64 / (n - 1) as f64).collect();
    let diffs: Vec<f64> = (0..d).map(|x| -1.95 + 3.9 * x as f64 / (d - 1) as f64).collect();
    let class0 = DMatrix::from_fn(n, d, |m, x| logistic(skills[m] - diffs[x]));
    let class1 = class0.map(|p| 1.0 - p);
    let (tensor, _) = PredictionTensor::new(
        (0..n).map(|m| format!("m{m}")).collect(),
        (0..d).map(|x| format!("e{x}")).collect(),
        2,
        vec![class0, class1],
        vec![0; d],
    )
    .unwrap();
    save_prediction_tensor(&tensor, dir).unwrap()
}

#[test]
fn evaluate_reports_perfect_aucc_on_a_monotone_population() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = monotone_bundle(dir.path());
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"methods": ["anchor_weighted"], "n_source": 4, "budget_max": 3,
           "n_runs": 2, "seed": 11}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let (code, stdout, stderr) = run(&[
        "evaluate",
        "--manifest",
        &path_str(&manifest),
        "--config",
        &path_str(&config),
        "--out-dir",
        &path_str(&out_dir),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(stdout.contains("AUCC 1.0000"), "stdout: {stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["methods"][0]["aucc"]["mean"].as_f64().unwrap(), 1.0);
    let csv_text = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(csv_text.lines().next().unwrap(), "method,size,run,tau");
}

#[test]
fn synth_is_deterministic_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"n_models": 6, "n_examples": 16, "class_count": 3, "latent_rank": 1,
           "noise_sigma": 0.0, "trend_mix": 0.0, "seed": 4}"#,
    )
    .unwrap();
    let out1 = dir.path().join("b1");
    let out2 = dir.path().join("b2");
    for out in [&out1, &out2] {
        let (code, _, stderr) =
            run(&["synth", "--spec", &path_str(&spec), "--out-dir", &path_str(out)]);
        assert_eq!(code, 0, "stderr: {stderr}");
    }
    for name in ["manifest.json", "class_0.csv", "class_1.csv", "class_2.csv", "labels.txt", "ground_truth.json"] {
        assert_eq!(
            fs::read(out1.join(name)).unwrap(),
            fs::read(out2.join(name)).unwrap(),
            "{name} differs between identical synth runs"
        );
    }
    let (code, _, _) = run(&["validate", &path_str(&out1.join("manifest.json"))]);
    assert_eq!(code, 0);
}
