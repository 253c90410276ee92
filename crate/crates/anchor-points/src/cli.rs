//! Command-line interface: validate | select | score | predict | map |
//! evaluate | synth.
//!
//! Every subcommand is deterministic given its flags (seeds included) and
//! writes machine-readable files plus a short human summary on stdout.
//! Exit codes: 0 success, 1 validation/domain failure, 2 usage/IO failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::anchors::{load_anchor_set, read_anchor_set_file, save_anchor_set, select_anchors};
use crate::corr::{correlation_matrix, load_correlation, save_correlation, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::estimator::{
    fit_predictor_in, predict_all, predict_classes, save_estimates, RegressionSpace,
};
use crate::eval::{
    load_embeddings, run_ranking_experiments, write_report_csv, write_report_json, EvalReport,
    ExperimentConfig, Method,
};
use crate::mapviz::{mds_coordinates, render_map, save_coordinates};
use crate::synth::{generate_population, read_synth_spec, save_ground_truth};
use crate::tensor::{load_prediction_tensor, load_raw, save_prediction_tensor, Issue};

#[derive(Debug, Parser)]
#[command(
    name = "anchor-points",
    version,
    about = "Select tiny representative evaluation subsets from prediction bundles"
)]
pub struct Cli {
    /// Cap the number of worker threads (results are identical for any cap).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a prediction bundle against the format contract.
    Validate {
        /// Bundle manifest (JSON).
        manifest: PathBuf,
    },
    /// Select anchor points from a prediction bundle.
    Select {
        #[arg(long)]
        manifest: PathBuf,
        /// Number of anchors.
        #[arg(long)]
        k: usize,
        /// Logit clipping constant.
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        #[arg(long)]
        seed: u64,
        /// Output anchor-set JSON.
        #[arg(long)]
        out: PathBuf,
        /// Also write the correlation matrix (CSV + JSON sidecar) here.
        #[arg(long)]
        correlation_out: Option<PathBuf>,
    },
    /// Score target models from their anchor evaluations (weighted score).
    Score {
        /// Anchor-set JSON produced by `select`.
        #[arg(long)]
        anchors: PathBuf,
        /// Anchor evaluations CSV: model_id,example_id,confidence.
        #[arg(long)]
        evals: PathBuf,
        /// Optional scores CSV (model_id,apw_score).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate a target model's per-example confidences from its anchor
    /// evaluations.
    Predict {
        /// Source bundle the anchors were selected from.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        anchors: PathBuf,
        /// Anchor evaluations CSV for a single target model:
        /// model_id,example_id,confidence or model_id,example_id,class_0,...
        #[arg(long)]
        evals: PathBuf,
        /// Output estimates CSV.
        #[arg(long)]
        out: PathBuf,
        /// Estimate each class separately and renormalize per example
        /// (requires per-class eval columns).
        #[arg(long)]
        per_class: bool,
        /// Fit trends in logit space instead of probability space.
        #[arg(long)]
        logit_space: bool,
    },
    /// Render an anchor point map (SVG plus coordinates CSV).
    Map {
        /// Prediction bundle to correlate.
        #[arg(long, conflicts_with = "correlation")]
        manifest: Option<PathBuf>,
        /// Precomputed correlation matrix CSV (with JSON sidecar).
        #[arg(long)]
        correlation: Option<PathBuf>,
        /// Point colors CSV: example_id,color with values in [0, 1].
        #[arg(long)]
        colors: PathBuf,
        /// Anchor-set JSON to draw as triangles.
        #[arg(long)]
        anchors: Option<PathBuf>,
        /// Output SVG path; coordinates go to the same path with a .csv
        /// extension.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        /// Intermediate MDS dimensionality before projecting to 2-D
        /// (0 = direct).
        #[arg(long, default_value_t = 0)]
        intermediate_dims: usize,
        #[arg(long)]
        title: Option<String>,
    },
    /// Run the ranking-evaluation protocol from a JSON config.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON config: {"methods": [...], "n_source": .., "budget_max": ..,
        /// "n_runs": .., "seed": .., "eval_sizes": [..]?}
        #[arg(long)]
        config: PathBuf,
        /// Embeddings CSV (D rows x d columns, headerless), required by the
        /// embedding baselines.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic prediction bundle from a JSON spec.
    Synth {
        /// Synthetic population spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Dispatch a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(threads) = cli.threads {
        // Ignore failure: the global pool can already be set in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Validate { manifest } => cmd_validate(&manifest),
        Command::Select {
            manifest,
            k,
            eps,
            seed,
            out,
            correlation_out,
        } => cmd_select(&manifest, k, eps, seed, &out, correlation_out.as_deref()),
        Command::Score { anchors, evals, out } => cmd_score(&anchors, &evals, out.as_deref()),
        Command::Predict {
            manifest,
            anchors,
            evals,
            out,
            per_class,
            logit_space,
        } => cmd_predict(&manifest, &anchors, &evals, &out, per_class, logit_space),
        Command::Map {
            manifest,
            correlation,
            colors,
            anchors,
            out,
            eps,
            intermediate_dims,
            title,
        } => cmd_map(
            manifest.as_deref(),
            correlation.as_deref(),
            &colors,
            anchors.as_deref(),
            &out,
            eps,
            intermediate_dims,
            title.as_deref(),
        ),
        Command::Evaluate {
            manifest,
            config,
            embeddings,
            out_dir,
        } => cmd_evaluate(&manifest, &config, embeddings.as_deref(), &out_dir),
        Command::Synth { spec, out_dir } => cmd_synth(&spec, &out_dir),
    }
}

fn print_issues(kind: &str, issues: &[Issue]) {
    for issue in issues {
        println!("{kind}: {issue}");
    }
}

fn cmd_validate(manifest: &Path) -> Result<i32> {
    let tensor = load_raw(manifest)?;
    let report = tensor.validate();
    print_issues("error", &report.errors);
    print_issues("warning", &report.warnings);
    println!(
        "{}: {} models x {} examples x {} classes - {}",
        manifest.display(),
        tensor.n_models(),
        tensor.n_examples(),
        tensor.class_count(),
        if report.ok { "ok" } else { "invalid" }
    );
    Ok(if report.ok { 0 } else { 1 })
}

fn cmd_select(
    manifest: &Path,
    k: usize,
    eps: f64,
    seed: u64,
    out: &Path,
    correlation_out: Option<&Path>,
) -> Result<i32> {
    let (tensor, warnings) = load_prediction_tensor(manifest)?;
    print_issues("warning", &warnings);
    let conf = tensor.correct_class_matrix();
    let cm = correlation_matrix(&conf, eps)?;
    let aset = select_anchors(&cm, k, seed)?;
    save_anchor_set(&aset, tensor.example_ids(), out)?;
    if let Some(corr_path) = correlation_out {
        save_correlation(&cm, corr_path, Some(tensor.example_ids()))?;
    }
    println!("objective: {}", aset.objective);
    for (p, &m) in aset.medoids.iter().enumerate() {
        println!(
            "anchor {}: {} (weight {})",
            p,
            tensor.example_ids()[m],
            aset.weights[p]
        );
    }
    println!("wrote {}", out.display());
    Ok(0)
}

/// Anchor evaluations keyed by model, in first-appearance order. Each model
/// maps anchor example ids to the row of values from the CSV.
struct AnchorEvals {
    models: Vec<(String, BTreeMap<String, Vec<f64>>)>,
    /// Number of value columns: 1 for plain confidence, Y for per-class.
    value_columns: usize,
}

fn read_anchor_evals(path: &Path) -> Result<AnchorEvals> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::malformed(path, e.to_string()))?
        .clone();
    if headers.len() < 3 || &headers[0] != "model_id" || &headers[1] != "example_id" {
        return Err(Error::malformed(
            path,
            "expected header model_id,example_id,confidence or model_id,example_id,class_0,...",
        ));
    }
    let value_columns = headers.len() - 2;
    if value_columns == 1 {
        if &headers[2] != "confidence" {
            return Err(Error::malformed(path, "third column must be 'confidence'"));
        }
    } else {
        for (i, h) in headers.iter().skip(2).enumerate() {
            let expected = format!("class_{i}");
            if h != expected {
                return Err(Error::malformed(
                    path,
                    format!("expected column '{expected}', found '{h}'"),
                ));
            }
        }
    }
    let mut models: Vec<(String, BTreeMap<String, Vec<f64>>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::malformed(path, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(Error::malformed(
                path,
                format!("row {} has {} fields, expected {}", line + 2, record.len(), headers.len()),
            ));
        }
        let model_id = record[0].to_string();
        let example_id = record[1].to_string();
        let mut values = Vec::with_capacity(value_columns);
        for c in 0..value_columns {
            let raw = &record[2 + c];
            let v: f64 = raw.trim().parse().map_err(|_| {
                Error::malformed(path, format!("non-numeric value '{raw}' on row {}", line + 2))
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "{}: value {v} for model '{model_id}' on '{example_id}' outside [0, 1]",
                    path.display()
                )));
            }
            values.push(v);
        }
        let entry = match models.iter_mut().find(|(id, _)| *id == model_id) {
            Some((_, map)) => map,
            None => {
                models.push((model_id.clone(), BTreeMap::new()));
                &mut models.last_mut().expect("just pushed").1
            }
        };
        if entry.insert(example_id.clone(), values).is_some() {
            return Err(Error::invalid(format!(
                "{}: duplicate row for model '{model_id}', example '{example_id}'",
                path.display()
            )));
        }
    }
    if models.is_empty() {
        return Err(Error::invalid(format!("{}: no evaluation rows", path.display())));
    }
    Ok(AnchorEvals { models, value_columns })
}

/// Pull this model's values for each medoid id, in medoid order. The id set
/// must match the anchor set exactly.
fn evals_for_anchors(
    evals: &BTreeMap<String, Vec<f64>>,
    medoid_ids: &[String],
    model_id: &str,
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(medoid_ids.len());
    for id in medoid_ids {
        let row = evals.get(id).ok_or_else(|| {
            Error::invalid(format!("model '{model_id}' has no evaluation for anchor '{id}'"))
        })?;
        rows.push(row.clone());
    }
    if evals.len() != medoid_ids.len() {
        let extras: Vec<&str> = evals
            .keys()
            .filter(|k| !medoid_ids.contains(k))
            .map(String::as_str)
            .collect();
        return Err(Error::invalid(format!(
            "model '{model_id}' has evaluations for non-anchor examples: {}",
            extras.join(", ")
        )));
    }
    Ok(rows)
}

fn cmd_score(anchors: &Path, evals: &Path, out: Option<&Path>) -> Result<i32> {
    let file = read_anchor_set_file(anchors)?;
    let evals = read_anchor_evals(evals)?;
    if evals.value_columns != 1 {
        return Err(Error::invalid(
            "score expects the confidence schema (model_id,example_id,confidence)".to_string(),
        ));
    }
    let total_weight: usize = file.weights.iter().sum();
    let mut lines = Vec::new();
    for (model_id, rows) in &evals.models {
        let confs = evals_for_anchors(rows, &file.medoids, model_id)?;
        let weighted: f64 = confs
            .iter()
            .zip(&file.weights)
            .map(|(c, &w)| c[0] * w as f64)
            .sum();
        let score = weighted / total_weight as f64;
        println!("{model_id}: {score}");
        lines.push((model_id.clone(), score));
    }
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e.to_string()))?;
        w.write_record(["model_id", "apw_score"])
            .map_err(|e| Error::malformed(path, e.to_string()))?;
        for (id, score) in &lines {
            w.write_record([id.as_str(), &score.to_string()])
                .map_err(|e| Error::malformed(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_predict(
    manifest: &Path,
    anchors: &Path,
    evals: &Path,
    out: &Path,
    per_class: bool,
    logit_space: bool,
) -> Result<i32> {
    let (tensor, warnings) = load_prediction_tensor(manifest)?;
    print_issues("warning", &warnings);
    let aset = load_anchor_set(anchors, tensor.example_ids())?;
    let evals = read_anchor_evals(evals)?;
    if evals.models.len() != 1 {
        return Err(Error::invalid(format!(
            "predict expects a single target model per invocation, found {}",
            evals.models.len()
        )));
    }
    let (model_id, rows) = &evals.models[0];
    let medoid_ids: Vec<String> = aset
        .medoids
        .iter()
        .map(|&m| tensor.example_ids()[m].clone())
        .collect();
    let anchor_rows = evals_for_anchors(rows, &medoid_ids, model_id)?;
    let space = if logit_space {
        RegressionSpace::Logit
    } else {
        RegressionSpace::Probability
    };

    if per_class {
        let y_count = tensor.class_count();
        if evals.value_columns != y_count {
            return Err(Error::invalid(format!(
                "per-class prediction needs {} class columns, found {}",
                y_count, evals.value_columns
            )));
        }
        let mut models = Vec::with_capacity(y_count);
        for y in 0..y_count {
            let slice = tensor.class_slice(y)?;
            models.push(fit_predictor_in(&slice, &aset, space)?);
        }
        let target = nalgebra::DMatrix::from_fn(aset.k(), y_count, |p, y| anchor_rows[p][y]);
        let (estimates, labels) = predict_classes(&models, &target)?;
        let mut w = csv::Writer::from_path(out).map_err(|e| Error::malformed(out, e.to_string()))?;
        w.write_record(["example_id", "estimate", "is_anchor", "predicted_label"])
            .map_err(|e| Error::malformed(out, e.to_string()))?;
        let mut is_anchor = vec![false; tensor.n_examples()];
        for &m in &aset.medoids {
            is_anchor[m] = true;
        }
        for i in 0..tensor.n_examples() {
            let gold = tensor.labels()[i];
            w.write_record([
                tensor.example_ids()[i].as_str(),
                &estimates[(i, gold)].to_string(),
                if is_anchor[i] { "true" } else { "false" },
                &labels[i].to_string(),
            ])
            .map_err(|e| Error::malformed(out, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(out, e))?;
    } else {
        // Plain correct-class estimation. Rows carry either the measured
        // correct-class confidence directly or full class rows to take the
        // gold entry from.
        let confs: Vec<f64> = if evals.value_columns == 1 {
            anchor_rows.iter().map(|r| r[0]).collect()
        } else if evals.value_columns == tensor.class_count() {
            aset.medoids
                .iter()
                .zip(&anchor_rows)
                .map(|(&m, r)| r[tensor.labels()[m]])
                .collect()
        } else {
            return Err(Error::invalid(format!(
                "evaluation rows carry {} values; expected 1 or {}",
                evals.value_columns,
                tensor.class_count()
            )));
        };
        let conf = tensor.correct_class_matrix();
        let pm = fit_predictor_in(&conf, &aset, space)?;
        if !pm.zero_variance_anchors.is_empty() {
            eprintln!(
                "warning: anchors {:?} have constant source confidence; using mean fallback",
                pm.zero_variance_anchors
            );
        }
        let est = predict_all(&pm, &confs)?;
        save_estimates(&est, tensor.example_ids(), out)?;
    }
    println!(
        "estimated {} examples for '{}' from {} anchors",
        tensor.n_examples(),
        model_id,
        aset.k()
    );
    println!("wrote {}", out.display());
    Ok(0)
}

fn read_colors(path: &Path, example_ids: &[String]) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::malformed(path, e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "example_id" || &headers[1] != "color" {
        return Err(Error::malformed(path, "expected header example_id,color"));
    }
    let mut by_id: BTreeMap<String, f64> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::malformed(path, e.to_string()))?;
        let v: f64 = record[1].trim().parse().map_err(|_| {
            Error::malformed(path, format!("non-numeric color on row {}", line + 2))
        })?;
        if by_id.insert(record[0].to_string(), v).is_some() {
            return Err(Error::invalid(format!(
                "{}: duplicate color for '{}'",
                path.display(),
                &record[0]
            )));
        }
    }
    example_ids
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::invalid(format!("{}: no color for '{}'", path.display(), id)))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_map(
    manifest: Option<&Path>,
    correlation: Option<&Path>,
    colors: &Path,
    anchors: Option<&Path>,
    out: &Path,
    eps: f64,
    intermediate_dims: usize,
    title: Option<&str>,
) -> Result<i32> {
    let (cm, example_ids) = match (manifest, correlation) {
        (Some(path), None) => {
            let (tensor, warnings) = load_prediction_tensor(path)?;
            print_issues("warning", &warnings);
            let conf = tensor.correct_class_matrix();
            (correlation_matrix(&conf, eps)?, tensor.example_ids().to_vec())
        }
        (None, Some(path)) => {
            let (cm, ids) = load_correlation(path)?;
            let ids = ids.unwrap_or_else(|| (0..cm.n_examples()).map(|i| i.to_string()).collect());
            (cm, ids)
        }
        _ => {
            return Err(Error::invalid(
                "map needs exactly one of --manifest or --correlation".to_string(),
            ))
        }
    };
    let color_values = read_colors(colors, &example_ids)?;
    let aset = match anchors {
        Some(path) => Some(load_anchor_set(path, &example_ids)?),
        None => None,
    };
    let coords = mds_coordinates(&cm, 2, intermediate_dims)?;
    if coords.dims_retained < 2 && intermediate_dims == 0 {
        eprintln!(
            "warning: only {} positive eigenvalue dimension(s); padding with zeros",
            coords.dims_retained
        );
    }
    let default_title = out
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "anchor point map".to_string());
    render_map(
        &coords,
        &color_values,
        aset.as_ref(),
        out,
        title.unwrap_or(&default_title),
    )?;
    let coords_path = out.with_extension("csv");
    save_coordinates(&coords, &example_ids, &coords_path)?;
    println!("stress: {}", coords.stress);
    println!("wrote {} and {}", out.display(), coords_path.display());
    Ok(0)
}

#[derive(Debug, Deserialize)]
struct EvalConfigFile {
    methods: Vec<Method>,
    n_source: usize,
    budget_max: usize,
    n_runs: usize,
    seed: u64,
    #[serde(default)]
    eval_sizes: Vec<usize>,
}

fn cmd_evaluate(
    manifest: &Path,
    config_path: &Path,
    embeddings: Option<&Path>,
    out_dir: &Path,
) -> Result<i32> {
    let (tensor, warnings) = load_prediction_tensor(manifest)?;
    print_issues("warning", &warnings);
    let text = std::fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let file: EvalConfigFile = serde_json::from_str(&text)
        .map_err(|e| Error::malformed(config_path, format!("bad config JSON: {e}")))?;
    if file.methods.is_empty() {
        return Err(Error::invalid("config lists no methods".to_string()));
    }
    let config = ExperimentConfig {
        method: file.methods[0],
        n_source: file.n_source,
        budget_max: file.budget_max,
        n_runs: file.n_runs,
        seed: file.seed,
        eval_sizes: file.eval_sizes.clone(),
    };
    let emb = match embeddings {
        Some(path) => Some(load_embeddings(path, tensor.n_examples())?),
        None => None,
    };
    let report = run_ranking_experiments(&tensor, &file.methods, &config, emb.as_ref())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join("report.csv");
    let json_path = out_dir.join("report.json");
    write_report_csv(&report, &csv_path)?;
    write_report_json(&report, &json_path)?;
    print_report_summary(&report);
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(0)
}

fn print_report_summary(report: &EvalReport) {
    println!(
        "{} runs, {} source models, sizes {:?}",
        report.n_runs, report.n_source, report.eval_sizes
    );
    for m in &report.methods {
        match &m.aucc {
            Some(a) => println!("{}: AUCC {:.4} (se {:.4})", m.method.name(), a.mean, a.se),
            None => {
                let taus: Vec<String> = m
                    .curve
                    .iter()
                    .map(|p| format!("{}:{:.3}", p.size, p.mean_tau))
                    .collect();
                println!("{}: tau by size {}", m.method.name(), taus.join(" "));
            }
        }
    }
}

fn cmd_synth(spec_path: &Path, out_dir: &Path) -> Result<i32> {
    let spec = read_synth_spec(spec_path)?;
    let (tensor, truth) = generate_population(&spec)?;
    let manifest = save_prediction_tensor(&tensor, out_dir)?;
    save_ground_truth(&truth, &out_dir.join("ground_truth.json"))?;
    println!(
        "generated {} models x {} examples x {} classes ({} loading profiles, rank {}, noise {})",
        spec.n_models,
        spec.n_examples,
        spec.class_count,
        spec.profiles(),
        spec.latent_rank,
        spec.noise_sigma
    );
    println!("wrote {}", manifest.display());
    Ok(0)
}
