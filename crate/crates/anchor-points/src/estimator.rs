//! Scoring and instance-level estimation from anchor evaluations: the
//! cluster-weighted anchor score, and the anchor point predictor (one
//! univariate least-squares trend per (anchor, test example), of which each
//! test example uses only its nearest anchor's fit).

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorSet, AnchorSetFile};
use crate::corr::{logistic, logit, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::tensor::ConfidenceMatrix;
use crate::util::compensated_sum;

/// Anchor columns whose variance across source models falls below this get
/// the degenerate fallback fit (slope 0, bias = test-column mean).
const ZERO_VARIANCE: f64 = 1e-24;

/// Which space the per-pair trends are fit in. Fits on raw probabilities are
/// the default; selection distances always live in logit space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionSpace {
    Probability,
    Logit,
}

/// Fitted trend tables: `slopes`/`biases` are K x T over (anchor, test
/// example) pairs, `test_indices` lists the non-anchor examples in ascending
/// order, and `nearest` maps every example to its anchor's cluster index.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub anchors: AnchorSet,
    pub slopes: DMatrix<f64>,
    pub biases: DMatrix<f64>,
    pub test_indices: Vec<usize>,
    pub nearest: Vec<usize>,
    pub space: RegressionSpace,
    /// Cluster indices of anchors that had (near-)constant source columns.
    pub zero_variance_anchors: Vec<usize>,
}

/// Estimated confidences for one target model over all D examples. Anchor
/// positions carry the measured values exactly; everything is in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateVector {
    pub values: Vec<f64>,
    pub anchor_mask: Vec<bool>,
}

fn check_confidences(confs: &[f64], k: usize) -> Result<()> {
    if confs.len() != k {
        return Err(Error::invalid(format!(
            "expected {} anchor confidences, got {}",
            k,
            confs.len()
        )));
    }
    for (i, &c) in confs.iter().enumerate() {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::invalid(format!(
                "anchor confidence {c} at position {i} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Cluster-size-weighted mean of a target model's anchor confidences;
/// weights are the cluster sizes, which sum to D.
pub fn apw_score(anchors: &AnchorSet, target_anchor_confidences: &[f64]) -> Result<f64> {
    check_confidences(target_anchor_confidences, anchors.k())?;
    let total: usize = anchors.weights.iter().sum();
    let weighted = compensated_sum(
        anchors
            .weights
            .iter()
            .zip(target_anchor_confidences)
            .map(|(&w, &c)| w as f64 * c),
    );
    Ok(weighted / total as f64)
}

/// Per-column centering statistics shared across the trend-table cells.
struct ColumnStats {
    mean: f64,
    deviations: Vec<f64>,
    sum_sq: f64,
}

fn column_stats(col: &[f64]) -> ColumnStats {
    let n = col.len() as f64;
    let mean = compensated_sum(col.iter().copied()) / n;
    let deviations: Vec<f64> = col.iter().map(|v| v - mean).collect();
    let sum_sq = compensated_sum(deviations.iter().map(|v| v * v));
    ColumnStats {
        mean,
        deviations,
        sum_sq,
    }
}

/// Fit the predictor in raw probability space.
pub fn fit_predictor(source: &ConfidenceMatrix, anchors: &AnchorSet) -> Result<PredictorModel> {
    fit_predictor_in(source, anchors, RegressionSpace::Probability)
}

/// Fit the predictor with an explicit regression space.
pub fn fit_predictor_in(
    source: &ConfidenceMatrix,
    anchors: &AnchorSet,
    space: RegressionSpace,
) -> Result<PredictorModel> {
    let n = source.values.nrows();
    let d = source.values.ncols();
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 source models to fit trends, found {n}"
        )));
    }
    if anchors.assignment.len() != d {
        return Err(Error::invalid(format!(
            "anchor set covers {} examples, source matrix has {d}",
            anchors.assignment.len()
        )));
    }
    let k = anchors.k();
    let test_indices = anchors.test_indices();
    let t = test_indices.len();

    let column = |j: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let v = source.values[(i, j)];
                match space {
                    RegressionSpace::Probability => v,
                    RegressionSpace::Logit => logit(v, DEFAULT_EPS),
                }
            })
            .collect()
    };
    let test_stats: Vec<ColumnStats> =
        test_indices.iter().map(|&j| column_stats(&column(j))).collect();

    // Each (anchor, test) cell is independent; parallelize over anchor rows.
    let rows: Vec<(Vec<(f64, f64)>, bool)> = (0..k)
        .into_par_iter()
        .map(|a| {
            let x = column_stats(&column(anchors.medoids[a]));
            let degenerate = x.sum_sq / n as f64 <= ZERO_VARIANCE;
            let fits: Vec<(f64, f64)> = test_stats
                .iter()
                .map(|y| {
                    if degenerate {
                        return (0.0, y.mean);
                    }
                    let sxy = compensated_sum(
                        x.deviations.iter().zip(&y.deviations).map(|(a, b)| a * b),
                    );
                    let slope = sxy / x.sum_sq;
                    (slope, y.mean - slope * x.mean)
                })
                .collect();
            (fits, degenerate)
        })
        .collect();

    let mut slopes = DMatrix::zeros(k, t);
    let mut biases = DMatrix::zeros(k, t);
    let mut zero_variance_anchors = Vec::new();
    for (a, (fits, degenerate)) in rows.into_iter().enumerate() {
        if degenerate {
            zero_variance_anchors.push(a);
        }
        for (j, (slope, bias)) in fits.into_iter().enumerate() {
            slopes[(a, j)] = slope;
            biases[(a, j)] = bias;
        }
    }

    Ok(PredictorModel {
        anchors: anchors.clone(),
        slopes,
        biases,
        test_indices,
        nearest: anchors.assignment.clone(),
        space,
        zero_variance_anchors,
    })
}

/// Estimate a target model's confidence on every example from its measured
/// anchor confidences. Anchor positions copy the measurements; each test
/// example runs through its nearest anchor's trend, clamped into [0, 1].
pub fn predict_all(pm: &PredictorModel, target_anchor_confidences: &[f64]) -> Result<EstimateVector> {
    let k = pm.anchors.k();
    check_confidences(target_anchor_confidences, k)?;
    let d = pm.nearest.len();
    let mut values = vec![0.0f64; d];
    let mut anchor_mask = vec![false; d];
    for (p, &m) in pm.anchors.medoids.iter().enumerate() {
        values[m] = target_anchor_confidences[p];
        anchor_mask[m] = true;
    }
    for (j, &t) in pm.test_indices.iter().enumerate() {
        let cluster = pm.nearest[t];
        let measured = target_anchor_confidences[cluster];
        let x = match pm.space {
            RegressionSpace::Probability => measured,
            RegressionSpace::Logit => logit(measured, DEFAULT_EPS),
        };
        let raw = pm.slopes[(cluster, j)] * x + pm.biases[(cluster, j)];
        values[t] = match pm.space {
            RegressionSpace::Probability => raw.clamp(0.0, 1.0),
            RegressionSpace::Logit => logistic(raw),
        };
    }
    Ok(EstimateVector { values, anchor_mask })
}

/// Per-class prediction for multi-class tasks: one fitted predictor per
/// class (all sharing the anchor set), estimates renormalized per example
/// after clamping into [1e-6, 1], argmax ties to the lowest class.
pub fn predict_classes(
    per_class_models: &[PredictorModel],
    target_anchor_probs: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let y_count = per_class_models.len();
    if y_count < 2 {
        return Err(Error::invalid("need at least 2 per-class predictors".to_string()));
    }
    let first = &per_class_models[0];
    for pm in &per_class_models[1..] {
        if pm.anchors.medoids != first.anchors.medoids
            || pm.anchors.assignment != first.anchors.assignment
        {
            return Err(Error::invalid(
                "per-class predictors use mismatched anchor sets".to_string(),
            ));
        }
    }
    let k = first.anchors.k();
    if target_anchor_probs.nrows() != k || target_anchor_probs.ncols() != y_count {
        return Err(Error::invalid(format!(
            "target anchor matrix is {}x{}, expected {}x{}",
            target_anchor_probs.nrows(),
            target_anchor_probs.ncols(),
            k,
            y_count
        )));
    }
    let d = first.nearest.len();
    let mut estimates = DMatrix::zeros(d, y_count);
    for (y, pm) in per_class_models.iter().enumerate() {
        let confs: Vec<f64> = (0..k).map(|p| target_anchor_probs[(p, y)]).collect();
        let est = predict_all(pm, &confs)?;
        for i in 0..d {
            estimates[(i, y)] = est.values[i];
        }
    }
    let mut labels = vec![0usize; d];
    for i in 0..d {
        for y in 0..y_count {
            estimates[(i, y)] = estimates[(i, y)].clamp(1e-6, 1.0);
        }
        let sum: f64 = (0..y_count).map(|y| estimates[(i, y)]).sum();
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for y in 0..y_count {
            estimates[(i, y)] /= sum;
            if estimates[(i, y)] > best_v {
                best_v = estimates[(i, y)];
                best = y;
            }
        }
        labels[i] = best;
    }
    Ok((estimates, labels))
}

/// Fraction of positions where the two label arrays agree.
pub fn agreement(estimated: &[usize], actual: &[usize]) -> Result<f64> {
    if estimated.len() != actual.len() {
        return Err(Error::invalid(format!(
            "agreement inputs have lengths {} and {}",
            estimated.len(),
            actual.len()
        )));
    }
    if estimated.is_empty() {
        return Err(Error::invalid("agreement of empty arrays".to_string()));
    }
    let hits = estimated.iter().zip(actual).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / estimated.len() as f64)
}

/// Mean absolute difference.
pub fn mae(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::invalid(format!(
            "mae inputs have lengths {} and {}",
            estimates.len(),
            truth.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::invalid("mae of empty arrays".to_string()));
    }
    Ok(compensated_sum(estimates.iter().zip(truth).map(|(a, b)| (a - b).abs()))
        / estimates.len() as f64)
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictorBundle {
    example_ids: Vec<String>,
    anchor_set: AnchorSetFile,
    regression_space: RegressionSpace,
    zero_variance_anchors: Vec<usize>,
    rows: usize,
    cols: usize,
    slopes_le_f64_b64: String,
    biases_le_f64_b64: String,
}

fn encode_matrix(m: &DMatrix<f64>) -> String {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            bytes.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    B64.encode(bytes)
}

fn decode_matrix(s: &str, rows: usize, cols: usize, path: &Path) -> Result<DMatrix<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::malformed(path, format!("bad base64 matrix: {e}")))?;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::malformed(
            path,
            format!("matrix blob holds {} bytes, expected {}", bytes.len(), rows * cols * 8),
        ));
    }
    let mut m = DMatrix::zeros(rows, cols);
    let mut it = bytes.chunks_exact(8);
    for r in 0..rows {
        for c in 0..cols {
            let chunk = it.next().expect("length checked");
            m[(r, c)] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok(m)
}

/// Persist a fitted predictor as a single JSON bundle (anchor set by example
/// id, trend tables as base64 little-endian f64 blobs).
pub fn save_predictor(pm: &PredictorModel, example_ids: &[String], path: &Path) -> Result<()> {
    let bundle = PredictorBundle {
        example_ids: example_ids.to_vec(),
        anchor_set: AnchorSetFile::from_anchor_set(&pm.anchors, example_ids)?,
        regression_space: pm.space,
        zero_variance_anchors: pm.zero_variance_anchors.clone(),
        rows: pm.slopes.nrows(),
        cols: pm.slopes.ncols(),
        slopes_le_f64_b64: encode_matrix(&pm.slopes),
        biases_le_f64_b64: encode_matrix(&pm.biases),
    };
    let json = serde_json::to_string_pretty(&bundle).map_err(|e| Error::malformed(path, e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Load a predictor bundle; returns the model and the example id order it
/// was fitted against.
pub fn load_predictor(path: &Path) -> Result<(PredictorModel, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bundle: PredictorBundle =
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, format!("bad predictor JSON: {e}")))?;
    let anchors = bundle.anchor_set.to_anchor_set(&bundle.example_ids)?;
    let slopes = decode_matrix(&bundle.slopes_le_f64_b64, bundle.rows, bundle.cols, path)?;
    let biases = decode_matrix(&bundle.biases_le_f64_b64, bundle.rows, bundle.cols, path)?;
    let test_indices = anchors.test_indices();
    if test_indices.len() != bundle.cols || anchors.k() != bundle.rows {
        return Err(Error::malformed(path, "trend table shape disagrees with anchor set"));
    }
    let nearest = anchors.assignment.clone();
    Ok((
        PredictorModel {
            anchors,
            slopes,
            biases,
            test_indices,
            nearest,
            space: bundle.regression_space,
            zero_variance_anchors: bundle.zero_variance_anchors,
        },
        bundle.example_ids,
    ))
}

/// Write an estimate vector as CSV (`example_id,estimate,is_anchor`).
pub fn save_estimates(est: &EstimateVector, example_ids: &[String], path: &Path) -> Result<()> {
    if example_ids.len() != est.values.len() {
        return Err(Error::invalid(format!(
            "{} example ids for {} estimates",
            example_ids.len(),
            est.values.len()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e.to_string()))?;
    w.write_record(["example_id", "estimate", "is_anchor"])
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    for i in 0..est.values.len() {
        w.write_record([
            example_ids[i].as_str(),
            &est.values[i].to_string(),
            if est.anchor_mask[i] { "true" } else { "false" },
        ])
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::select_anchors;
    use crate::corr::{correlation_matrix, DEFAULT_EPS};
    use approx::assert_abs_diff_eq;

    fn conf(values: DMatrix<f64>) -> ConfidenceMatrix {
        let n = values.nrows();
        let d = values.ncols();
        ConfidenceMatrix {
            values,
            model_ids: (0..n).map(|i| format!("m{i}")).collect(),
            example_ids: (0..d).map(|i| format!("e{i}")).collect(),
        }
    }

    fn manual_anchor_set(medoids: Vec<usize>, assignment: Vec<usize>) -> AnchorSet {
        let k = medoids.len();
        let mut weights = vec![0usize; k];
        for &a in &assignment {
            weights[a] += 1;
        }
        AnchorSet {
            medoids,
            assignment,
            weights,
            objective: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn apw_weighted_mean_example() {
        let aset = manual_anchor_set(vec![0, 2], vec![0, 0, 1, 0]);
        // weights (3, 1), confidences (0.8, 0.4), D = 4
        assert_abs_diff_eq!(apw_score(&aset, &[0.8, 0.4]).unwrap(), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn apw_on_full_anchor_set_is_plain_mean() {
        let aset = manual_anchor_set(vec![0, 1, 2], vec![0, 1, 2]);
        let confs = [0.2, 0.5, 0.8];
        assert_abs_diff_eq!(
            apw_score(&aset, &confs).unwrap(),
            (0.2 + 0.5 + 0.8) / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn apw_of_constant_confidence_is_that_constant() {
        let aset = manual_anchor_set(vec![1, 3], vec![0, 0, 1, 1, 1]);
        assert_abs_diff_eq!(apw_score(&aset, &[0.62, 0.62]).unwrap(), 0.62, epsilon = 1e-12);
    }

    #[test]
    fn apw_rejects_length_mismatch() {
        let aset = manual_anchor_set(vec![0], vec![0, 0]);
        assert!(apw_score(&aset, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn apw_is_monotone_in_each_confidence() {
        let aset = manual_anchor_set(vec![0, 2], vec![0, 0, 1, 0]);
        let base = apw_score(&aset, &[0.5, 0.5]).unwrap();
        assert!(apw_score(&aset, &[0.6, 0.5]).unwrap() > base);
        assert!(apw_score(&aset, &[0.5, 0.6]).unwrap() > base);
    }

    #[test]
    fn exact_linear_columns_fit_exactly() {
        // Column 1 = 0.5 * column 0 + 0.2, column 0 is the anchor.
        let values = DMatrix::from_row_slice(3, 2, &[0.2, 0.3, 0.4, 0.4, 0.6, 0.5]);
        let source = conf(values);
        let aset = manual_anchor_set(vec![0], vec![0, 0]);
        let pm = fit_predictor(&source, &aset).unwrap();
        assert_abs_diff_eq!(pm.slopes[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pm.biases[(0, 0)], 0.2, epsilon = 1e-12);
        assert!(pm.zero_variance_anchors.is_empty());
    }

    #[test]
    fn constant_anchor_falls_back_with_warning() {
        let values = DMatrix::from_row_slice(3, 2, &[0.6, 0.3, 0.6, 0.45, 0.6, 0.6]);
        let source = conf(values);
        let aset = manual_anchor_set(vec![0], vec![0, 0]);
        let pm = fit_predictor(&source, &aset).unwrap();
        assert_eq!(pm.slopes[(0, 0)], 0.0);
        assert_abs_diff_eq!(pm.biases[(0, 0)], 0.45, epsilon = 1e-12);
        assert_eq!(pm.zero_variance_anchors, vec![0]);
    }

    #[test]
    fn ols_matches_closed_form_oracle() {
        let values = DMatrix::from_row_slice(3, 2, &[0.2, 0.3, 0.4, 0.4, 0.6, 0.6]);
        let source = conf(values);
        let aset = manual_anchor_set(vec![0], vec![0, 0]);
        let pm = fit_predictor(&source, &aset).unwrap();
        assert_abs_diff_eq!(pm.slopes[(0, 0)], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(pm.biases[(0, 0)], 0.13333333333333333, epsilon = 1e-9);
    }

    #[test]
    fn identity_trends_copy_the_anchor_value() {
        let values = DMatrix::from_row_slice(3, 3, &[0.2, 0.2, 0.2, 0.5, 0.5, 0.5, 0.8, 0.8, 0.8]);
        let source = conf(values);
        let aset = manual_anchor_set(vec![1], vec![0, 0, 0]);
        let pm = fit_predictor(&source, &aset).unwrap();
        let est = predict_all(&pm, &[0.66]).unwrap();
        assert!(est.values.iter().all(|&v| (v - 0.66).abs() <= 1e-12));
        assert_eq!(est.anchor_mask, vec![false, true, false]);
    }

    #[test]
    fn trend_arithmetic_example() {
        let aset = manual_anchor_set(vec![0], vec![0, 0]);
        let pm = PredictorModel {
            anchors: aset,
            slopes: DMatrix::from_element(1, 1, 0.5),
            biases: DMatrix::from_element(1, 1, 0.2),
            test_indices: vec![1],
            nearest: vec![0, 0],
            space: RegressionSpace::Probability,
            zero_variance_anchors: vec![],
        };
        let est = predict_all(&pm, &[0.8]).unwrap();
        assert_abs_diff_eq!(est.values[1], 0.6, epsilon = 1e-12);
        assert_eq!(est.values[0], 0.8);
    }

    /// Shared exact-linear family: every column is an affine map of a latent
    /// scalar in probability space, so held-out models reconstruct exactly.
    fn exact_family(n_models: usize) -> (ConfidenceMatrix, Vec<f64>) {
        let latents: Vec<f64> = (0..n_models).map(|i| 0.1 + 0.8 * i as f64 / (n_models - 1) as f64).collect();
        let coeffs = [(1.0, 0.0), (0.5, 0.2), (-0.4, 0.7), (0.25, 0.3), (0.9, 0.05)];
        let values = DMatrix::from_fn(n_models, coeffs.len(), |m, j| {
            let (w, b) = coeffs[j];
            w * latents[m] + b
        });
        (conf(values), latents.to_vec())
    }

    #[test]
    fn exact_linear_family_reconstructs_held_out_model() {
        let (source, _) = exact_family(6);
        let cm = correlation_matrix(&source, DEFAULT_EPS).unwrap();
        let aset = select_anchors(&cm, 2, 1).unwrap();
        let pm = fit_predictor(&source, &aset).unwrap();

        // A fresh model from the same family, evaluated only on the anchors.
        let target_latent = 0.37;
        let coeffs = [(1.0, 0.0), (0.5, 0.2), (-0.4, 0.7), (0.25, 0.3), (0.9, 0.05)];
        let truth: Vec<f64> = coeffs.iter().map(|(w, b)| w * target_latent + b).collect();
        let measured: Vec<f64> = pm.anchors.medoids.iter().map(|&m| truth[m]).collect();
        let est = predict_all(&pm, &measured).unwrap();
        for (e, t) in est.values.iter().zip(&truth) {
            assert_abs_diff_eq!(e, t, epsilon = 1e-9);
        }
    }

    #[test]
    fn full_anchor_set_prediction_is_identity() {
        let (source, _) = exact_family(5);
        let cm = correlation_matrix(&source, DEFAULT_EPS).unwrap();
        let aset = select_anchors(&cm, source.values.ncols(), 0).unwrap();
        let pm = fit_predictor(&source, &aset).unwrap();
        let measured = [0.9, 0.1, 0.4, 0.6, 0.2];
        let est = predict_all(&pm, &measured).unwrap();
        assert_eq!(est.values, measured.to_vec());
        assert!(est.anchor_mask.iter().all(|&b| b));
    }

    #[test]
    fn predict_classes_renormalizes_and_breaks_ties_low() {
        let aset = manual_anchor_set(vec![0], vec![0, 0]);
        let make = |slope: f64, bias: f64| PredictorModel {
            anchors: aset.clone(),
            slopes: DMatrix::from_element(1, 1, slope),
            biases: DMatrix::from_element(1, 1, bias),
            test_indices: vec![1],
            nearest: vec![0, 0],
            space: RegressionSpace::Probability,
            zero_variance_anchors: vec![],
        };
        // Both classes estimate 0.6 on the test point -> renormalized to 0.5
        // each, argmax must pick class 0.
        let models = [make(0.0, 0.6), make(0.0, 0.6)];
        let target = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let (est, labels) = predict_classes(&models, &target).unwrap();
        assert_abs_diff_eq!(est[(1, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(est[(1, 1)], 0.5, epsilon = 1e-12);
        assert_eq!(labels[1], 0);
    }

    #[test]
    fn complementary_binary_estimates_renormalize_to_noop() {
        // Class 1 source columns are exactly 1 - class 0 columns, so raw
        // estimates already sum to 1.
        let class0 = DMatrix::from_row_slice(3, 2, &[0.2, 0.3, 0.4, 0.4, 0.6, 0.5]);
        let class1 = class0.map(|v| 1.0 - v);
        let aset = manual_anchor_set(vec![0], vec![0, 0]);
        let m0 = fit_predictor(&conf(class0), &aset).unwrap();
        let m1 = fit_predictor(&conf(class1), &aset).unwrap();
        let target = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        let (est, _) = predict_classes(&[m0, m1], &target).unwrap();
        for i in 0..2 {
            let raw0 = est[(i, 0)];
            let raw1 = est[(i, 1)];
            assert_abs_diff_eq!(raw0 + raw1, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn predict_classes_rejects_mismatched_anchor_sets() {
        let a0 = manual_anchor_set(vec![0], vec![0, 0]);
        let a1 = manual_anchor_set(vec![1], vec![0, 0]);
        let make = |aset: &AnchorSet| PredictorModel {
            anchors: aset.clone(),
            slopes: DMatrix::from_element(1, 1, 1.0),
            biases: DMatrix::from_element(1, 1, 0.0),
            test_indices: aset.test_indices(),
            nearest: aset.assignment.clone(),
            space: RegressionSpace::Probability,
            zero_variance_anchors: vec![],
        };
        let target = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert!(predict_classes(&[make(&a0), make(&a1)], &target).is_err());
    }

    #[test]
    fn renormalized_argmax_ignores_common_positive_scaling() {
        let aset = manual_anchor_set(vec![0], vec![0, 0]);
        let make = |bias: f64| PredictorModel {
            anchors: aset.clone(),
            slopes: DMatrix::from_element(1, 1, 0.0),
            biases: DMatrix::from_element(1, 1, bias),
            test_indices: vec![1],
            nearest: vec![0, 0],
            space: RegressionSpace::Probability,
            zero_variance_anchors: vec![],
        };
        let target = DMatrix::from_row_slice(1, 2, &[0.2, 0.6]);
        let (_, labels) = predict_classes(&[make(0.2), make(0.6)], &target).unwrap();
        let (_, labels_scaled) = predict_classes(&[make(0.1), make(0.3)], &target).unwrap();
        assert_eq!(labels, labels_scaled);
    }

    #[test]
    fn agreement_examples() {
        assert_eq!(agreement(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
        assert_eq!(agreement(&[0, 1, 1, 0], &[1, 0, 0, 1]).unwrap(), 0.0);
        assert_eq!(agreement(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(agreement(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[0.4, 0.7], &[0.4, 0.7]).unwrap(), 0.0);
        assert_abs_diff_eq!(mae(&[0.2, 0.8], &[0.3, 0.6]).unwrap(), 0.15, epsilon = 1e-12);
        let a = [0.2, 0.5, 0.9];
        let b: Vec<f64> = a.iter().map(|v| v - 0.07).collect();
        assert_abs_diff_eq!(mae(&a, &b).unwrap(), 0.07, epsilon = 1e-12);
        assert!(mae(&[0.1], &[]).is_err());
    }

    #[test]
    fn predictor_bundle_round_trips() {
        let (source, _) = exact_family(6);
        let cm = correlation_matrix(&source, DEFAULT_EPS).unwrap();
        let aset = select_anchors(&cm, 2, 1).unwrap();
        let pm = fit_predictor(&source, &aset).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictor.json");
        save_predictor(&pm, &source.example_ids, &path).unwrap();
        let (loaded, ids) = load_predictor(&path).unwrap();
        assert_eq!(loaded, pm);
        assert_eq!(ids, source.example_ids);
    }

    #[test]
    fn logit_space_mode_round_trips_through_the_link() {
        // Exact linear structure in logit space: col1 = 2 * logit(col0) - 0.5.
        let base = [0.3f64, 0.45, 0.6, 0.75];
        let col1: Vec<f64> = base.iter().map(|&p| logistic(2.0 * logit(p, DEFAULT_EPS) - 0.5)).collect();
        let values = DMatrix::from_fn(4, 2, |m, j| if j == 0 { base[m] } else { col1[m] });
        let source = conf(values);
        let aset = manual_anchor_set(vec![0], vec![0, 0]);
        let pm = fit_predictor_in(&source, &aset, RegressionSpace::Logit).unwrap();
        let est = predict_all(&pm, &[0.5]).unwrap();
        let expected = logistic(2.0 * logit(0.5, DEFAULT_EPS) - 0.5);
        assert_abs_diff_eq!(est.values[1], expected, epsilon = 1e-9);
    }
}
