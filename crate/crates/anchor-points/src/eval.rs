//! Ranking-evaluation harness: randomized source/target splits, anchor and
//! baseline selectors, Kendall-tau curves with AUCC, agreement sweeps, and
//! the trend-transfer analyses.
//!
//! Every run derives its own seeds from (experiment seed, run index), so runs
//! can execute in parallel in any order and still produce identical reports.
//! Target models are scored strictly through an audited reader that records
//! which examples were touched; a method evaluating at budget k may read at
//! most k distinct examples per target model.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{select_medoids, AnchorSet};
use crate::corr::{correlation_matrix_of, CorrelationModel, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::estimator::{apw_score, fit_predictor, predict_all, predict_classes, PredictorModel};
use crate::tensor::{read_matrix_csv, ConfidenceMatrix, PredictionTensor};
use crate::util::{compensated_sum, derive_seed, mean, rng, standard_error};

// Seed stream tags.
const STREAM_RUN: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_SUBSET: u64 = 3;
const STREAM_ANCHORS: u64 = 4;
const STREAM_EMBED: u64 = 5;
const STREAM_PAIRS: u64 = 6;

/// Selection / scoring methods under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    AnchorWeighted,
    AnchorPredictor,
    RandomExact,
    RandomMean,
    EmbeddingExact,
    EmbeddingWeighted,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::AnchorWeighted => "anchor_weighted",
            Method::AnchorPredictor => "anchor_predictor",
            Method::RandomExact => "random_exact",
            Method::RandomMean => "random_mean",
            Method::EmbeddingExact => "embedding_exact",
            Method::EmbeddingWeighted => "embedding_weighted",
        }
    }

    fn needs_anchors(self) -> bool {
        matches!(self, Method::AnchorWeighted | Method::AnchorPredictor)
    }

    fn needs_embeddings(self) -> bool {
        matches!(self, Method::EmbeddingExact | Method::EmbeddingWeighted)
    }
}

/// Protocol parameters for a ranking experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub n_source: usize,
    pub budget_max: usize,
    pub n_runs: usize,
    pub seed: u64,
    /// Evaluation sizes; empty means 1..=budget_max.
    #[serde(default)]
    pub eval_sizes: Vec<usize>,
}

impl ExperimentConfig {
    pub fn sizes(&self) -> Vec<usize> {
        if self.eval_sizes.is_empty() {
            (1..=self.budget_max).collect()
        } else {
            self.eval_sizes.clone()
        }
    }
}

/// One evaluation-size point of a method's tau curve, aggregated over runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub mean_tau: f64,
    pub se_tau: f64,
    /// Per-run tau values (undefined taus recorded as 0).
    pub taus: Vec<f64>,
    /// How many runs had an undefined tau (constant scores) mapped to 0.
    pub undefined_taus: usize,
    /// Audit: maximum distinct target-prediction reads over (run, model).
    pub max_target_reads: usize,
    /// Anchor-predictor only: mean agreement with the targets' own
    /// predictions, over (run, target).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_agreement: Option<f64>,
    /// Anchor-predictor only: mean absolute error of confidence estimates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_estimate_mae: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuccSummary {
    pub mean: f64,
    pub se: f64,
    pub per_run: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub curve: Vec<CurvePoint>,
    /// Present when the evaluation sizes cover 1..=budget_max.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aucc: Option<AuccSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSplit {
    pub run: usize,
    pub source_ids: Vec<String>,
    pub target_ids: Vec<String>,
}

/// Full experiment output; reproducible byte-for-byte from (tensor, config,
/// embeddings).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_source: usize,
    pub budget_max: usize,
    pub n_runs: usize,
    pub seed: u64,
    pub eval_sizes: Vec<usize>,
    pub methods: Vec<MethodReport>,
    pub runs: Vec<RunSplit>,
}

impl EvalReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Uniformly random disjoint source/target split over model indices,
/// deterministic in the seed. Outputs are sorted; only membership is random.
pub fn split_model_indices(n_models: usize, n_source: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let chosen = sample_indices(n_models, n_source, seed);
    let set: BTreeSet<usize> = chosen.iter().copied().collect();
    let rest: Vec<usize> = (0..n_models).filter(|i| !set.contains(i)).collect();
    (chosen, rest)
}

/// k distinct indices from 0..n (sorted), via a seeded partial Fisher-Yates.
fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng(seed);
    for i in 0..k.min(n) {
        let j = r.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}

/// Split a tensor's models into disjoint source and target id lists.
pub fn split_models(
    tensor: &PredictionTensor,
    n_source: usize,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    let n = tensor.n_models();
    if n_source < 2 || n_source >= n {
        return Err(Error::invalid(format!(
            "n_source {n_source} outside [2, {n})"
        )));
    }
    let (src, tgt) = split_model_indices(n, n_source, seed);
    let ids = |v: Vec<usize>| v.into_iter().map(|i| tensor.model_ids()[i].clone()).collect();
    Ok((ids(src), ids(tgt)))
}

/// Tau-b core; None when either side is constant (zero denominator).
fn tau_b_core(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));

    let n0 = n * (n - 1) / 2;
    let mut ties_x = 0usize;
    let mut ties_xy = 0usize;
    let mut run_x = 1usize;
    let mut run_xy = 1usize;
    for i in 1..n {
        if pairs[i].0 == pairs[i - 1].0 {
            run_x += 1;
            if pairs[i].1 == pairs[i - 1].1 {
                run_xy += 1;
            } else {
                ties_xy += run_xy * (run_xy - 1) / 2;
                run_xy = 1;
            }
        } else {
            ties_x += run_x * (run_x - 1) / 2;
            run_x = 1;
            ties_xy += run_xy * (run_xy - 1) / 2;
            run_xy = 1;
        }
    }
    ties_x += run_x * (run_x - 1) / 2;
    ties_xy += run_xy * (run_xy - 1) / 2;

    // Merge sort the y sequence, counting swaps (each swap = one discordant
    // pair).
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0f64; n];
    let mut swaps = 0usize;
    let mut width = 1usize;
    while width < n {
        let mut lo = 0usize;
        while lo < n {
            let mid = (lo + width).min(n);
            let hi = (lo + 2 * width).min(n);
            if mid < hi {
                let (mut i, mut j, mut k) = (lo, mid, lo);
                while i < mid || j < hi {
                    if i < mid && (j >= hi || ys[i] <= ys[j]) {
                        buf[k] = ys[i];
                        i += 1;
                    } else {
                        buf[k] = ys[j];
                        swaps += mid - i;
                        j += 1;
                    }
                    k += 1;
                }
                ys[lo..hi].copy_from_slice(&buf[lo..hi]);
            }
            lo += 2 * width;
        }
        width *= 2;
    }

    let mut ties_y = 0usize;
    let mut run_y = 1usize;
    for i in 1..n {
        if ys[i] == ys[i - 1] {
            run_y += 1;
        } else {
            ties_y += run_y * (run_y - 1) / 2;
            run_y = 1;
        }
    }
    ties_y += run_y * (run_y - 1) / 2;

    let denom_x = (n0 - ties_x) as f64;
    let denom_y = (n0 - ties_y) as f64;
    if denom_x == 0.0 || denom_y == 0.0 {
        return None;
    }
    let con_minus_dis =
        n0 as f64 - ties_x as f64 - ties_y as f64 + ties_xy as f64 - 2.0 * swaps as f64;
    Some((con_minus_dis / (denom_x * denom_y).sqrt()).clamp(-1.0, 1.0))
}

/// Tie-corrected Kendall rank correlation (tau-b) over all pairs. Errors on
/// length mismatch, fewer than two entries, non-finite values, or constant
/// input (undefined correlation).
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "kendall tau inputs have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("kendall tau needs at least 2 entries".to_string()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("kendall tau inputs must be finite".to_string()));
    }
    tau_b_core(a, b)
        .ok_or_else(|| Error::invalid("kendall tau undefined for constant input".to_string()))
}

/// Area under the tau curve: the arithmetic mean of tau over sizes 1..=B.
pub fn aucc(taus: &std::collections::BTreeMap<usize, f64>, budget_max: usize) -> Result<f64> {
    let mut values = Vec::with_capacity(budget_max);
    for size in 1..=budget_max {
        match taus.get(&size) {
            Some(&t) => values.push(t),
            None => return Err(Error::invalid(format!("missing tau for size {size}"))),
        }
    }
    Ok(mean(&values))
}

/// Accuracy of one model over the whole evaluation set: fraction of examples
/// whose argmax class (ties to the lowest class) matches the gold label.
pub fn true_performance(tensor: &PredictionTensor, model_id: &str) -> Result<f64> {
    let m = tensor
        .model_index(model_id)
        .ok_or_else(|| Error::invalid(format!("unknown model id '{model_id}'")))?;
    Ok(accuracy_by_index(tensor, m))
}

fn accuracy_by_index(tensor: &PredictionTensor, m: usize) -> f64 {
    let d = tensor.n_examples();
    let hits = (0..d)
        .filter(|&i| tensor.predicted_class(m, i) == tensor.labels()[i])
        .count();
    hits as f64 / d as f64
}

/// Records which examples of one target model were read while scoring.
pub struct TargetReader<'a> {
    tensor: &'a PredictionTensor,
    model: usize,
    seen: BTreeSet<usize>,
}

impl<'a> TargetReader<'a> {
    pub fn new(tensor: &'a PredictionTensor, model: usize) -> Self {
        TargetReader {
            tensor,
            model,
            seen: BTreeSet::new(),
        }
    }

    /// Distinct examples evaluated so far.
    pub fn reads(&self) -> usize {
        self.seen.len()
    }

    pub fn correct_confidence(&mut self, example: usize) -> f64 {
        self.seen.insert(example);
        self.tensor.prob(self.model, example, self.tensor.labels()[example])
    }

    pub fn class_probs(&mut self, example: usize) -> Vec<f64> {
        self.seen.insert(example);
        (0..self.tensor.class_count())
            .map(|y| self.tensor.prob(self.model, example, y))
            .collect()
    }

    pub fn predicted_class(&mut self, example: usize) -> usize {
        self.seen.insert(example);
        self.tensor.predicted_class(self.model, example)
    }
}

/// Euclidean distance matrix over embedding rows.
pub fn euclidean_distances(embeddings: &DMatrix<f64>) -> DMatrix<f64> {
    let d = embeddings.nrows();
    let mut dist = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let mut s = 0.0;
            for c in 0..embeddings.ncols() {
                let diff = embeddings[(i, c)] - embeddings[(j, c)];
                s += diff * diff;
            }
            let v = s.sqrt();
            dist[(i, j)] = v;
            dist[(j, i)] = v;
        }
    }
    dist
}

/// Load an embeddings CSV (D rows x d columns, headerless, row order =
/// manifest example order).
pub fn load_embeddings(path: &Path, n_examples: usize) -> Result<DMatrix<f64>> {
    let m = read_matrix_csv(path)?;
    if m.nrows() != n_examples {
        return Err(Error::invalid(format!(
            "{}: embeddings have {} rows for {} examples",
            path.display(),
            m.nrows(),
            n_examples
        )));
    }
    Ok(m)
}

/// What a method evaluates on at one (run, size): either a plain subset or a
/// weighted anchor set.
enum Selection {
    Plain(Vec<usize>),
    Weighted(AnchorSet),
}

fn score_one_target(
    method: Method,
    selection: &Selection,
    predictors: Option<&[PredictorModel]>,
    reader: &mut TargetReader<'_>,
    labels: &[usize],
) -> Result<f64> {
    match (method, selection) {
        (Method::RandomExact | Method::EmbeddingExact, Selection::Plain(subset)) => {
            let hits = subset
                .iter()
                .filter(|&&i| reader.predicted_class(i) == labels[i])
                .count();
            Ok(hits as f64 / subset.len() as f64)
        }
        (Method::RandomMean, Selection::Plain(subset)) => {
            let confs: Vec<f64> = subset.iter().map(|&i| reader.correct_confidence(i)).collect();
            Ok(mean(&confs))
        }
        (Method::AnchorWeighted | Method::EmbeddingWeighted, Selection::Weighted(aset)) => {
            let confs: Vec<f64> = aset
                .medoids
                .iter()
                .map(|&m| reader.correct_confidence(m).clamp(0.0, 1.0))
                .collect();
            apw_score(aset, &confs)
        }
        (Method::AnchorPredictor, Selection::Weighted(aset)) => {
            let models = predictors.expect("predictor models prepared for anchor_predictor");
            let k = aset.k();
            let y_count = models.len();
            let mut target = DMatrix::zeros(k, y_count);
            for (p, &m) in aset.medoids.iter().enumerate() {
                let probs = reader.class_probs(m);
                for y in 0..y_count {
                    target[(p, y)] = probs[y].clamp(0.0, 1.0);
                }
            }
            let (_, est_labels) = predict_classes(models, &target)?;
            let hits = est_labels.iter().zip(labels).filter(|(a, b)| a == b).count();
            Ok(hits as f64 / labels.len() as f64)
        }
        _ => Err(Error::invalid("method/selection mismatch".to_string())),
    }
}

/// Per (method, size, run) result collected inside a run.
#[derive(Clone)]
struct CellOutcome {
    tau: f64,
    undefined: bool,
    max_reads: usize,
    agreement: Option<f64>,
    estimate_mae: Option<f64>,
}

struct RunOutcome {
    split: RunSplit,
    // Indexed [method][size].
    cells: Vec<Vec<CellOutcome>>,
}

/// Run the ranking protocol for several methods at once, sharing splits and
/// anchor solves so methods see identical randomness.
pub fn run_ranking_experiments(
    tensor: &PredictionTensor,
    methods: &[Method],
    config: &ExperimentConfig,
    embeddings: Option<&DMatrix<f64>>,
) -> Result<EvalReport> {
    let n = tensor.n_models();
    let d = tensor.n_examples();
    if methods.is_empty() {
        return Err(Error::invalid("no methods requested".to_string()));
    }
    if config.n_source < 2 || config.n_source + 2 > n {
        return Err(Error::invalid(format!(
            "n_source {} leaves fewer than 2 of {} models as targets",
            config.n_source, n
        )));
    }
    if config.budget_max < 1 {
        return Err(Error::invalid("budget_max must be at least 1".to_string()));
    }
    if config.n_runs < 1 {
        return Err(Error::invalid("n_runs must be at least 1".to_string()));
    }
    let sizes = config.sizes();
    if sizes.is_empty() || sizes.iter().any(|&s| s == 0 || s > d) {
        return Err(Error::invalid(format!(
            "eval sizes must lie in [1, {d}]"
        )));
    }
    let needs_anchors = methods.iter().any(|m| m.needs_anchors());
    let needs_predictor = methods.contains(&Method::AnchorPredictor);
    let needs_embeddings = methods.iter().any(|m| m.needs_embeddings());
    if needs_embeddings && embeddings.is_none() {
        return Err(Error::invalid(
            "embedding methods require an embeddings matrix".to_string(),
        ));
    }
    if let Some(emb) = embeddings {
        if emb.nrows() != d {
            return Err(Error::invalid(format!(
                "embeddings have {} rows for {} examples",
                emb.nrows(),
                d
            )));
        }
    }

    // Embedding medoids depend only on (embeddings, size, seed); compute once.
    let embed_selections: Option<Vec<AnchorSet>> = if needs_embeddings {
        let emb_dist = euclidean_distances(embeddings.expect("checked above"));
        let mut sets = Vec::with_capacity(sizes.len());
        for &size in &sizes {
            sets.push(select_medoids(
                &emb_dist,
                size,
                derive_seed(config.seed, &[STREAM_EMBED, size as u64]),
            )?);
        }
        Some(sets)
    } else {
        None
    };

    let labels = tensor.labels().to_vec();
    let full_conf = tensor.correct_class_matrix();
    let outcomes: Result<Vec<RunOutcome>> = (0..config.n_runs)
        .into_par_iter()
        .map(|run| {
            let run_seed = derive_seed(config.seed, &[STREAM_RUN, run as u64]);
            let (src, tgt) =
                split_model_indices(n, config.n_source, derive_seed(run_seed, &[STREAM_SPLIT]));
            let split = RunSplit {
                run,
                source_ids: src.iter().map(|&i| tensor.model_ids()[i].clone()).collect(),
                target_ids: tgt.iter().map(|&i| tensor.model_ids()[i].clone()).collect(),
            };

            // Source-side artifacts.
            let source_conf_values = select_rows(&full_conf.values, &src);
            let corr: Option<CorrelationModel> = if needs_anchors {
                Some(correlation_matrix_of(&source_conf_values, DEFAULT_EPS, true)?)
            } else {
                None
            };
            let per_class_source: Option<Vec<DMatrix<f64>>> = if needs_predictor {
                Some(
                    (0..tensor.class_count())
                        .map(|y| {
                            let slice = tensor.class_slice(y).expect("class index in range");
                            select_rows(&slice.values, &src)
                        })
                        .collect(),
                )
            } else {
                None
            };

            let true_perf: Vec<f64> = tgt.iter().map(|&m| accuracy_by_index(tensor, m)).collect();

            let mut cells: Vec<Vec<CellOutcome>> =
                vec![Vec::with_capacity(sizes.len()); methods.len()];
            for (size_idx, &size) in sizes.iter().enumerate() {
                // Shared artifacts for this (run, size).
                let anchors: Option<AnchorSet> = match &corr {
                    Some(cm) => Some(select_medoids(
                        &cm.dist,
                        size,
                        derive_seed(run_seed, &[STREAM_ANCHORS, size as u64]),
                    )?),
                    None => None,
                };
                let predictors: Option<Vec<PredictorModel>> = match (&anchors, &per_class_source) {
                    (Some(aset), Some(slices)) => {
                        let example_ids = full_conf.example_ids.clone();
                        let models: Result<Vec<PredictorModel>> = slices
                            .iter()
                            .map(|values| {
                                let cmx = ConfidenceMatrix {
                                    values: values.clone(),
                                    model_ids: split.source_ids.clone(),
                                    example_ids: example_ids.clone(),
                                };
                                fit_predictor(&cmx, aset)
                            })
                            .collect();
                        Some(models?)
                    }
                    _ => None,
                };
                // Confidence estimates are scored against a predictor fitted
                // on the gold-label matrix itself (the per-class predictors
                // regress class-y columns, whose anchor-side regressor is a
                // different quantity).
                let gold_model: Option<PredictorModel> = match (&anchors, &per_class_source) {
                    (Some(aset), Some(_)) => {
                        let cmx = ConfidenceMatrix {
                            values: source_conf_values.clone(),
                            model_ids: split.source_ids.clone(),
                            example_ids: full_conf.example_ids.clone(),
                        };
                        Some(fit_predictor(&cmx, aset)?)
                    }
                    _ => None,
                };
                let subset: Vec<usize> = sample_indices(
                    d,
                    size,
                    derive_seed(run_seed, &[STREAM_SUBSET, size as u64]),
                );

                for (mi, &method) in methods.iter().enumerate() {
                    let selection = match method {
                        Method::RandomExact | Method::RandomMean => Selection::Plain(subset.clone()),
                        Method::AnchorWeighted | Method::AnchorPredictor => {
                            Selection::Weighted(anchors.clone().expect("anchors prepared"))
                        }
                        Method::EmbeddingExact | Method::EmbeddingWeighted => Selection::Weighted(
                            embed_selections.as_ref().expect("embedding medoids prepared")
                                [size_idx]
                                .clone(),
                        ),
                    };
                    // Embedding-exact scores plain accuracy on the medoids.
                    let selection = match (method, selection) {
                        (Method::EmbeddingExact, Selection::Weighted(aset)) => {
                            Selection::Plain(aset.medoids)
                        }
                        (_, s) => s,
                    };

                    let mut scores = Vec::with_capacity(tgt.len());
                    let mut max_reads = 0usize;
                    let mut agreements = Vec::new();
                    let mut est_maes = Vec::new();
                    for &t in &tgt {
                        let mut reader = TargetReader::new(tensor, t);
                        let score = score_one_target(
                            method,
                            &selection,
                            predictors.as_deref(),
                            &mut reader,
                            &labels,
                        )?;
                        max_reads = max_reads.max(reader.reads());
                        scores.push(score);

                        if method == Method::AnchorPredictor {
                            let (agr, emae) = predictor_fidelity(
                                tensor,
                                t,
                                predictors.as_deref().expect("predictors prepared"),
                                gold_model.as_ref().expect("gold predictor prepared"),
                                &full_conf,
                            )?;
                            agreements.push(agr);
                            est_maes.push(emae);
                        }
                    }
                    let (tau, undefined) = match tau_b_core(&scores, &true_perf) {
                        Some(t) => (t, false),
                        // Constant scores carry no ranking signal; count
                        // them as tau = 0 rather than aborting the run.
                        None => (0.0, true),
                    };
                    cells[mi].push(CellOutcome {
                        tau,
                        undefined,
                        max_reads,
                        agreement: if agreements.is_empty() { None } else { Some(mean(&agreements)) },
                        estimate_mae: if est_maes.is_empty() { None } else { Some(mean(&est_maes)) },
                    });
                }
            }
            Ok(RunOutcome { split, cells })
        })
        .collect();
    let outcomes = outcomes?;

    let mut method_reports = Vec::with_capacity(methods.len());
    for (mi, &method) in methods.iter().enumerate() {
        let mut curve = Vec::with_capacity(sizes.len());
        for (si, &size) in sizes.iter().enumerate() {
            let taus: Vec<f64> = outcomes.iter().map(|o| o.cells[mi][si].tau).collect();
            let undefined = outcomes.iter().filter(|o| o.cells[mi][si].undefined).count();
            let max_reads = outcomes.iter().map(|o| o.cells[mi][si].max_reads).max().unwrap_or(0);
            let agr: Vec<f64> = outcomes.iter().filter_map(|o| o.cells[mi][si].agreement).collect();
            let emae: Vec<f64> =
                outcomes.iter().filter_map(|o| o.cells[mi][si].estimate_mae).collect();
            curve.push(CurvePoint {
                size,
                mean_tau: mean(&taus),
                se_tau: standard_error(&taus),
                taus,
                undefined_taus: undefined,
                max_target_reads: max_reads,
                mean_agreement: if agr.is_empty() { None } else { Some(mean(&agr)) },
                mean_estimate_mae: if emae.is_empty() { None } else { Some(mean(&emae)) },
            });
        }
        let covers_budget = sizes.len() == config.budget_max
            && sizes.iter().enumerate().all(|(i, &s)| s == i + 1);
        let aucc_summary = if covers_budget {
            let per_run: Vec<f64> = (0..config.n_runs)
                .map(|run| {
                    let taus: Vec<f64> =
                        (0..sizes.len()).map(|si| outcomes[run].cells[mi][si].tau).collect();
                    mean(&taus)
                })
                .collect();
            Some(AuccSummary {
                mean: mean(&per_run),
                se: standard_error(&per_run),
                per_run,
            })
        } else {
            None
        };
        method_reports.push(MethodReport {
            method,
            curve,
            aucc: aucc_summary,
        });
    }

    Ok(EvalReport {
        n_source: config.n_source,
        budget_max: config.budget_max,
        n_runs: config.n_runs,
        seed: config.seed,
        eval_sizes: sizes,
        methods: method_reports,
        runs: outcomes.into_iter().map(|o| o.split).collect(),
    })
}

/// Instance-level fidelity of the anchor predictor on one target model:
/// agreement between estimated and actual predicted classes, and MAE of the
/// correct-class confidence estimates. Uses full target predictions (this is
/// the ground-truth side of the evaluation, not part of scoring).
fn predictor_fidelity(
    tensor: &PredictionTensor,
    target: usize,
    predictors: &[PredictorModel],
    gold_model: &PredictorModel,
    full_conf: &ConfidenceMatrix,
) -> Result<(f64, f64)> {
    let aset = &predictors[0].anchors;
    let k = aset.k();
    let y_count = predictors.len();
    let d = tensor.n_examples();
    let mut target_probs = DMatrix::zeros(k, y_count);
    for (p, &m) in aset.medoids.iter().enumerate() {
        for y in 0..y_count {
            target_probs[(p, y)] = tensor.prob(target, m, y).clamp(0.0, 1.0);
        }
    }
    let (_, est_labels) = predict_classes(predictors, &target_probs)?;
    let actual: Vec<usize> = (0..d).map(|i| tensor.predicted_class(target, i)).collect();
    let agr = crate::estimator::agreement(&est_labels, &actual)?;

    // Correct-class estimate MAE via the gold-class predictor outputs.
    let measured: Vec<f64> = aset
        .medoids
        .iter()
        .map(|&m| full_conf.values[(target, m)].clamp(0.0, 1.0))
        .collect();
    let est = predict_all(gold_model, &measured)?;
    let actual_conf: Vec<f64> = (0..d).map(|i| full_conf.values[(target, i)]).collect();
    let emae = crate::estimator::mae(&est.values, &actual_conf)?;
    Ok((agr, emae))
}

fn select_rows(values: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), values.ncols(), |r, c| values[(rows[r], c)])
}

/// Run the protocol for a single method (the config's own).
pub fn run_ranking_experiment(
    tensor: &PredictionTensor,
    config: &ExperimentConfig,
    embeddings: Option<&DMatrix<f64>>,
) -> Result<EvalReport> {
    run_ranking_experiments(tensor, &[config.method], config, embeddings)
}

/// Baseline scores outside the harness: evaluate the given targets on a
/// subset chosen by `method` at size k. The same subset serves every target.
pub fn baseline_scores(
    tensor: &PredictionTensor,
    target_ids: &[String],
    method: Method,
    k: usize,
    seed: u64,
    embeddings: Option<&DMatrix<f64>>,
) -> Result<std::collections::BTreeMap<String, f64>> {
    let d = tensor.n_examples();
    if k == 0 || k > d {
        return Err(Error::invalid(format!("k = {k} outside [1, {d}]")));
    }
    if method.needs_anchors() {
        return Err(Error::invalid(
            "baseline_scores covers the random and embedding baselines only".to_string(),
        ));
    }
    let selection = match method {
        Method::RandomExact | Method::RandomMean => {
            Selection::Plain(sample_indices(d, k, derive_seed(seed, &[STREAM_SUBSET, k as u64])))
        }
        Method::EmbeddingExact | Method::EmbeddingWeighted => {
            let emb = embeddings.ok_or_else(|| {
                Error::invalid("embedding methods require an embeddings matrix".to_string())
            })?;
            if emb.nrows() != d {
                return Err(Error::invalid(format!(
                    "embeddings have {} rows for {} examples",
                    emb.nrows(),
                    d
                )));
            }
            let aset = select_medoids(
                &euclidean_distances(emb),
                k,
                derive_seed(seed, &[STREAM_EMBED, k as u64]),
            )?;
            if method == Method::EmbeddingExact {
                Selection::Plain(aset.medoids)
            } else {
                Selection::Weighted(aset)
            }
        }
        _ => unreachable!("anchor methods rejected above"),
    };
    let labels = tensor.labels().to_vec();
    let mut out = std::collections::BTreeMap::new();
    for id in target_ids {
        let m = tensor
            .model_index(id)
            .ok_or_else(|| Error::invalid(format!("unknown model id '{id}'")))?;
        let mut reader = TargetReader::new(tensor, m);
        let score = score_one_target(method, &selection, None, &mut reader, &labels)?;
        out.insert(id.clone(), score);
    }
    Ok(out)
}

/// Summary statistics over per-pair MAE values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaeSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Deciles 10%..90%.
    pub deciles: Vec<f64>,
}

fn summarize(mut values: Vec<f64>) -> MaeSummary {
    values.sort_by(f64::total_cmp);
    let quantile = |q: f64| -> f64 {
        let pos = q * (values.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        values[lo] * (1.0 - frac) + values[hi] * frac
    };
    MaeSummary {
        count: values.len(),
        mean: mean(&values),
        median: quantile(0.5),
        deciles: (1..=9).map(|i| quantile(i as f64 / 10.0)).collect(),
    }
}

/// Per-bucket target-side MAE distributions of source-fitted trends,
/// bucketed by fitted slope sign.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendGeneralization {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positive: Option<MaeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negative: Option<MaeSummary>,
}

fn check_shared_examples(a: &ConfidenceMatrix, b: &ConfidenceMatrix) -> Result<()> {
    if a.example_ids != b.example_ids {
        return Err(Error::invalid(
            "source and target confidence matrices must share example ids".to_string(),
        ));
    }
    Ok(())
}

/// OLS fit of column j on column i over a matrix's rows plus the target-side
/// MAE of that fit.
fn pair_transfer_mae(
    source: &DMatrix<f64>,
    target: &DMatrix<f64>,
    i: usize,
    j: usize,
) -> Option<(f64, f64)> {
    let n = source.nrows();
    let xs: Vec<f64> = (0..n).map(|r| source[(r, i)]).collect();
    let ys: Vec<f64> = (0..n).map(|r| source[(r, j)]).collect();
    let mx = mean(&xs);
    let my = mean(&ys);
    let sxx = compensated_sum(xs.iter().map(|x| (x - mx) * (x - mx)));
    if sxx == 0.0 {
        return None;
    }
    let sxy = compensated_sum(xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)));
    let slope = sxy / sxx;
    let bias = my - slope * mx;
    let nt = target.nrows();
    let mae = compensated_sum(
        (0..nt).map(|r| (slope * target[(r, i)] + bias - target[(r, j)]).abs()),
    ) / nt as f64;
    Some((slope, mae))
}

/// Sample up to n_pairs example pairs whose source-side logit-space Pearson
/// correlation exceeds the threshold, fit a trend per pair on the source
/// models, and return the mean MAE of those trends on the target models.
pub fn transfer_mae(
    source_conf: &ConfidenceMatrix,
    target_conf: &ConfidenceMatrix,
    corr_threshold: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    check_shared_examples(source_conf, target_conf)?;
    let cm = correlation_matrix_of(&source_conf.values, DEFAULT_EPS, true)?;
    let d = cm.n_examples();
    let mut qualifying: Vec<(usize, usize)> = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            if cm.corr[(i, j)] > corr_threshold {
                qualifying.push((i, j));
            }
        }
    }
    if qualifying.is_empty() {
        return Err(Error::invalid(format!(
            "no example pairs exceed correlation threshold {corr_threshold}"
        )));
    }
    let chosen = sample_pairs(qualifying, n_pairs, derive_seed(seed, &[STREAM_PAIRS]));
    let mut maes = Vec::with_capacity(chosen.len());
    for (i, j) in chosen {
        if let Some((_, mae)) = pair_transfer_mae(&source_conf.values, &target_conf.values, i, j) {
            maes.push(mae);
        }
    }
    if maes.is_empty() {
        return Err(Error::invalid("all qualifying pairs were degenerate".to_string()));
    }
    Ok(mean(&maes))
}

fn sample_pairs(mut pairs: Vec<(usize, usize)>, n: usize, seed: u64) -> Vec<(usize, usize)> {
    if pairs.len() <= n {
        return pairs;
    }
    let mut r = rng(seed);
    for i in 0..n {
        let j = r.gen_range(i..pairs.len());
        pairs.swap(i, j);
    }
    pairs.truncate(n);
    pairs.sort_unstable();
    pairs
}

/// Bucket sampled strong-fit pairs (raw-space R^2 above the threshold) by
/// fitted slope sign, and summarize target-side MAE per bucket. An empty
/// bucket is reported as absent rather than as an error.
pub fn trend_generalization(
    source_conf: &ConfidenceMatrix,
    target_conf: &ConfidenceMatrix,
    r2_threshold: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<TrendGeneralization> {
    check_shared_examples(source_conf, target_conf)?;
    // Fits are in raw probability space, so the fit's own R^2 is the squared
    // raw-space Pearson correlation.
    let cm = correlation_matrix_of(&source_conf.values, DEFAULT_EPS, false)?;
    let d = cm.n_examples();
    let mut qualifying: Vec<(usize, usize)> = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            let r = cm.corr[(i, j)];
            if r * r > r2_threshold {
                qualifying.push((i, j));
            }
        }
    }
    let chosen = sample_pairs(qualifying, n_pairs, derive_seed(seed, &[STREAM_PAIRS]));
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for (i, j) in chosen {
        if let Some((slope, mae)) = pair_transfer_mae(&source_conf.values, &target_conf.values, i, j)
        {
            if slope >= 0.0 {
                positive.push(mae);
            } else {
                negative.push(mae);
            }
        }
    }
    Ok(TrendGeneralization {
        positive: if positive.is_empty() { None } else { Some(summarize(positive)) },
        negative: if negative.is_empty() { None } else { Some(summarize(negative)) },
    })
}

/// Long-format CSV export: method,size,run,tau.
pub fn write_report_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e.to_string()))?;
    w.write_record(["method", "size", "run", "tau"])
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    for m in &report.methods {
        for point in &m.curve {
            for (run, tau) in point.taus.iter().enumerate() {
                w.write_record([
                    m.method.name(),
                    &point.size.to_string(),
                    &run.to_string(),
                    &tau.to_string(),
                ])
                .map_err(|e| Error::malformed(path, e.to_string()))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// JSON summary export.
pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    let json =
        serde_json::to_string_pretty(report).map_err(|e| Error::malformed(path, e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}
