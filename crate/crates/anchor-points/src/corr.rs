//! Cross-model correlation structure: the logit transform, the D x D Pearson
//! correlation matrix of confidences across models, its induced distance
//! matrix `1 - corr`, and approximate matrix rank via truncated SVD.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_matrix_csv, write_matrix_csv, ConfidenceMatrix};
use crate::util::compensated_sum;

/// Default clipping constant for the logit transform. Confidences of exactly
/// 0 or 1 are clipped to keep the transform finite.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Columns whose logit variance falls below this are treated as constant:
/// they carry no trend signal and correlate 0 with everything else, which
/// maps to the neutral distance 1.
const ZERO_VARIANCE: f64 = 1e-24;

/// Pairwise example correlations across a model set, and the induced
/// distances. `corr` is symmetric with unit diagonal; `dist = 1 - corr`
/// entry-for-entry, so it is symmetric with zero diagonal and lies in [0, 2].
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationModel {
    pub corr: DMatrix<f64>,
    pub dist: DMatrix<f64>,
    pub epsilon: f64,
    pub n_models: usize,
}

/// Smallest rank whose truncated-SVD reconstruction meets an MAE threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    pub mae: f64,
    pub threshold: f64,
}

/// Logit of `p` with endpoints clipped into [eps, 1 - eps]. The clipped
/// branches use the closed form ln((1 - eps) / eps) directly; computing
/// `1 - (1 - eps)` first would cost ~5 digits of the clip value.
pub fn logit(p: f64, eps: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
    debug_assert!(eps > 0.0 && eps < 0.5, "eps {eps} outside (0, 0.5)");
    if p >= 1.0 - eps {
        ((1.0 - eps) / eps).ln()
    } else if p <= eps {
        -(((1.0 - eps) / eps).ln())
    } else {
        (p / (1.0 - p)).ln()
    }
}

/// Inverse of [`logit`] (the standard logistic function).
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl CorrelationModel {
    /// Wrap an existing correlation matrix. The upper triangle is mirrored so
    /// symmetry holds bitwise, the diagonal is forced to exactly 1, and
    /// entries are clamped into [-1, 1]; anything further off than 1e-9 is
    /// rejected.
    pub fn from_corr(corr: DMatrix<f64>, epsilon: f64, n_models: usize) -> Result<Self> {
        if corr.nrows() != corr.ncols() {
            return Err(Error::invalid(format!(
                "correlation matrix is {}x{}, expected square",
                corr.nrows(),
                corr.ncols()
            )));
        }
        let d = corr.nrows();
        let mut m = corr;
        for i in 0..d {
            if (m[(i, i)] - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "correlation diagonal entry {} is {}, expected 1",
                    i,
                    m[(i, i)]
                )));
            }
            m[(i, i)] = 1.0;
            for j in (i + 1)..d {
                let v = m[(i, j)];
                if (v - m[(j, i)]).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "correlation matrix asymmetric at ({i}, {j})"
                    )));
                }
                if v.abs() > 1.0 + 1e-9 {
                    return Err(Error::invalid(format!(
                        "correlation entry ({i}, {j}) = {v} outside [-1, 1]"
                    )));
                }
                let v = v.clamp(-1.0, 1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let dist = distances_from_corr(&m);
        Ok(CorrelationModel {
            corr: m,
            dist,
            epsilon,
            n_models,
        })
    }

    pub fn n_examples(&self) -> usize {
        self.corr.nrows()
    }
}

fn distances_from_corr(corr: &DMatrix<f64>) -> DMatrix<f64> {
    let d = corr.nrows();
    let mut dist = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 1.0 - corr[(i, j)];
            dist[(i, j)] = v;
            dist[(j, i)] = v;
        }
    }
    dist
}

/// Pearson correlation of logit-transformed confidences between every pair of
/// example columns, measured across models.
pub fn correlation_matrix(conf: &ConfidenceMatrix, eps: f64) -> Result<CorrelationModel> {
    correlation_matrix_of(&conf.values, eps, true)
}

/// Core correlation routine over the columns of an N x D matrix. When
/// `in_logit_space` is false the values are correlated as-is, which is what
/// the trend-transfer analyses use for raw-probability fits.
pub fn correlation_matrix_of(
    values: &DMatrix<f64>,
    eps: f64,
    in_logit_space: bool,
) -> Result<CorrelationModel> {
    let n = values.nrows();
    let d = values.ncols();
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 models to correlate, found {n}"
        )));
    }
    // Pass 1: transform and center each column.
    let mut deviations: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut sxx: Vec<f64> = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = (0..n)
            .map(|i| {
                let v = values[(i, j)];
                if in_logit_space {
                    logit(v, eps)
                } else {
                    v
                }
            })
            .collect();
        let mean = compensated_sum(col.iter().copied()) / n as f64;
        let dev: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let ss = compensated_sum(dev.iter().map(|v| v * v));
        deviations.push(dev);
        sxx.push(ss);
    }
    let degenerate: Vec<bool> = sxx.iter().map(|&s| s / n as f64 <= ZERO_VARIANCE).collect();

    // Pass 2: each cell is independent, so rows can be computed in parallel
    // without affecting the result.
    let rows: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0f64; d];
            row[i] = 1.0;
            for j in (i + 1)..d {
                row[j] = if degenerate[i] || degenerate[j] {
                    0.0
                } else {
                    let sxy = compensated_sum(
                        deviations[i].iter().zip(&deviations[j]).map(|(a, b)| a * b),
                    );
                    (sxy / (sxx[i] * sxx[j]).sqrt()).clamp(-1.0, 1.0)
                };
            }
            row
        })
        .collect();

    let mut corr = DMatrix::zeros(d, d);
    for i in 0..d {
        corr[(i, i)] = 1.0;
        for j in (i + 1)..d {
            corr[(i, j)] = rows[i][j];
            corr[(j, i)] = rows[i][j];
        }
    }
    let dist = distances_from_corr(&corr);
    Ok(CorrelationModel {
        corr,
        dist,
        epsilon: eps,
        n_models: n,
    })
}

/// Smallest rank r whose best rank-r approximation of the matrix has mean
/// absolute reconstruction error at or below the threshold, together with
/// that MAE. The MAE is taken over all entries in the matrix's own scale.
///
/// By Eckart-Young the best rank-r approximation is the projection onto the
/// top r singular vectors; it is computed here through the symmetric
/// eigendecomposition of the smaller Gram matrix, which stays accurate on
/// exactly rank-deficient inputs (duplicated rows or columns).
pub fn approximate_rank(matrix: &DMatrix<f64>, mae_threshold: f64) -> Result<RankReport> {
    if !(mae_threshold > 0.0) {
        return Err(Error::invalid(format!(
            "mae_threshold must be positive, got {mae_threshold}"
        )));
    }
    let n = matrix.nrows();
    let d = matrix.ncols();
    let max_rank = n.min(d);
    let left = n <= d;
    let gram = if left {
        matrix * matrix.transpose()
    } else {
        matrix.transpose() * matrix
    };
    let eigen = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eigen.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .total_cmp(&eigen.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let cells = (n * d) as f64;
    let mut recon = DMatrix::<f64>::zeros(n, d);
    let mut best_rank = max_rank;
    let mut best_mae = f64::INFINITY;
    for (step, &idx) in order.iter().take(max_rank).enumerate() {
        let basis = eigen.eigenvectors.column(idx);
        if left {
            // recon += u (u^T A)
            let coeffs = basis.transpose() * matrix;
            for r in 0..n {
                for c in 0..d {
                    recon[(r, c)] += basis[r] * coeffs[(0, c)];
                }
            }
        } else {
            // recon += (A v) v^T
            let coeffs = matrix * basis;
            for r in 0..n {
                for c in 0..d {
                    recon[(r, c)] += coeffs[r] * basis[c];
                }
            }
        }
        let mae = compensated_sum(
            matrix.iter().zip(recon.iter()).map(|(a, b)| (a - b).abs()),
        ) / cells;
        best_rank = step + 1;
        best_mae = mae;
        if mae <= mae_threshold {
            break;
        }
    }
    Ok(RankReport {
        rank: best_rank,
        mae: best_mae,
        threshold: mae_threshold,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrelationSidecar {
    epsilon: f64,
    n_models: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    example_ids: Option<Vec<String>>,
}

fn sidecar_path(matrix_path: &Path) -> PathBuf {
    matrix_path.with_extension("json")
}

/// Write the correlation matrix as headerless CSV plus a JSON sidecar
/// (`<matrix stem>.json`) carrying epsilon, the source model count, and
/// optionally the example ids for downstream exports.
pub fn save_correlation(
    cm: &CorrelationModel,
    matrix_path: &Path,
    example_ids: Option<&[String]>,
) -> Result<()> {
    write_matrix_csv(&cm.corr, matrix_path)?;
    let sidecar = CorrelationSidecar {
        epsilon: cm.epsilon,
        n_models: cm.n_models,
        example_ids: example_ids.map(|ids| ids.to_vec()),
    };
    let path = sidecar_path(matrix_path);
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::malformed(&path, e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Load a correlation matrix and its sidecar. The distance matrix is
/// rederived as `1 - corr`, so a save/load round trip reproduces it exactly.
pub fn load_correlation(matrix_path: &Path) -> Result<(CorrelationModel, Option<Vec<String>>)> {
    let corr = read_matrix_csv(matrix_path)?;
    let path = sidecar_path(matrix_path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: CorrelationSidecar =
        serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e.to_string()))?;
    let cm = CorrelationModel::from_corr(corr, sidecar.epsilon, sidecar.n_models)?;
    if let Some(ids) = &sidecar.example_ids {
        if ids.len() != cm.n_examples() {
            return Err(Error::invalid(format!(
                "{}: sidecar lists {} example ids for a {}-example matrix",
                path.display(),
                ids.len(),
                cm.n_examples()
            )));
        }
    }
    Ok((cm, sidecar.example_ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Definitional two-pass Pearson, kept separate from the implementation.
    fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        sxy / (sxx * syy).sqrt()
    }

    fn conf_from_columns(cols: &[Vec<f64>]) -> ConfidenceMatrix {
        let n = cols[0].len();
        let d = cols.len();
        let values = DMatrix::from_fn(n, d, |r, c| cols[c][r]);
        ConfidenceMatrix {
            values,
            model_ids: (0..n).map(|i| format!("m{i}")).collect(),
            example_ids: (0..d).map(|i| format!("e{i}")).collect(),
        }
    }

    #[test]
    fn logit_midpoint_is_zero() {
        assert_eq!(logit(0.5, 1e-6), 0.0);
    }

    #[test]
    fn logit_three_quarters_is_ln_three() {
        assert_abs_diff_eq!(logit(0.75, 1e-6), 3.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(logit(0.75, 1e-6), 1.0986123, epsilon = 1e-7);
    }

    #[test]
    fn logit_of_one_is_clipped() {
        // Independent evaluation of the clipped closed form.
        let expected = ((1.0 - 1e-6) / 1e-6f64).ln();
        assert_eq!(logit(1.0, 1e-6), expected);
        assert_abs_diff_eq!(logit(1.0, 1e-6), 13.815509, epsilon = 1e-6);
        assert_eq!(logit(0.0, 1e-6), -expected);
    }

    #[test]
    fn logistic_inverts_logit() {
        for &p in &[0.01, 0.3, 0.5, 0.77, 0.99] {
            assert_abs_diff_eq!(logistic(logit(p, 1e-12)), p, epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_columns_correlate_fully() {
        let conf = conf_from_columns(&[
            vec![0.2, 0.5, 0.8],
            vec![0.2, 0.5, 0.8],
            vec![0.9, 0.3, 0.4],
        ]);
        let cm = correlation_matrix(&conf, DEFAULT_EPS).unwrap();
        assert_abs_diff_eq!(cm.corr[(0, 1)], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cm.dist[(0, 1)], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn anti_linear_columns_correlate_negatively() {
        // Column 1's logits are c - logit(column 0) for constant c = 2.
        let l = [0.3f64, 0.55, 0.9].map(|p| logit(p, DEFAULT_EPS));
        let other: Vec<f64> = l.iter().map(|v| logistic(2.0 - v)).collect();
        let conf = conf_from_columns(&[vec![0.3, 0.55, 0.9], other]);
        let cm = correlation_matrix(&conf, DEFAULT_EPS).unwrap();
        assert_abs_diff_eq!(cm.corr[(0, 1)], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cm.dist[(0, 1)], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn pearson_matches_definitional_oracle() {
        let conf = conf_from_columns(&[vec![0.6, 0.7, 0.8], vec![0.2, 0.5, 0.9]]);
        let cm = correlation_matrix(&conf, DEFAULT_EPS).unwrap();
        let lx: Vec<f64> = [0.6, 0.7, 0.8].iter().map(|&p| logit(p, DEFAULT_EPS)).collect();
        let ly: Vec<f64> = [0.2, 0.5, 0.9].iter().map(|&p| logit(p, DEFAULT_EPS)).collect();
        let oracle = naive_pearson(&lx, &ly);
        assert_abs_diff_eq!(cm.corr[(0, 1)], oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(cm.corr[(0, 1)], 0.9973524481231595, epsilon = 1e-12);
    }

    #[test]
    fn constant_column_correlates_zero_with_others() {
        let conf = conf_from_columns(&[vec![0.4, 0.4, 0.4], vec![0.2, 0.5, 0.9]]);
        let cm = correlation_matrix(&conf, DEFAULT_EPS).unwrap();
        assert_eq!(cm.corr[(0, 1)], 0.0);
        assert_eq!(cm.corr[(0, 0)], 1.0);
        assert_eq!(cm.dist[(0, 1)], 1.0);
    }

    #[test]
    fn correlation_is_invariant_under_global_affine_in_logit_space() {
        let mut r = crate::util::rng(11);
        use rand::Rng;
        let n = 8;
        let d = 6;
        let logits = DMatrix::from_fn(n, d, |_, _| r.gen_range(-3.0..3.0));
        let probs = logits.map(logistic);
        let shifted = logits.map(|v| 1.7 * v + 0.4).map(logistic);
        let a = correlation_matrix_of(&probs, 1e-9, true).unwrap();
        let b = correlation_matrix_of(&shifted, 1e-9, true).unwrap();
        for i in 0..d {
            for j in 0..d {
                assert_abs_diff_eq!(a.corr[(i, j)], b.corr[(i, j)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn dist_is_exactly_one_minus_corr_and_symmetric_bitwise() {
        let conf = conf_from_columns(&[
            vec![0.6, 0.7, 0.8, 0.2],
            vec![0.2, 0.5, 0.9, 0.4],
            vec![0.3, 0.1, 0.6, 0.8],
        ]);
        let cm = correlation_matrix(&conf, DEFAULT_EPS).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.dist[(i, j)], 1.0 - cm.corr[(i, j)]);
                assert_eq!(cm.dist[(i, j)].to_bits(), cm.dist[(j, i)].to_bits());
            }
        }
    }

    #[test]
    fn rank_one_outer_product_has_rank_one() {
        let mut r = crate::util::rng(3);
        use rand::Rng;
        let u: Vec<f64> = (0..10).map(|_| r.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..20).map(|_| r.gen_range(-1.0..1.0)).collect();
        let m = DMatrix::from_fn(10, 20, |i, j| u[i] * v[j]);
        let report = approximate_rank(&m, 1e-6).unwrap();
        assert_eq!(report.rank, 1);
        assert!(report.mae < 1e-8);
    }

    #[test]
    fn full_rank_matrix_needs_full_rank() {
        let m = DMatrix::<f64>::identity(5, 5);
        let report = approximate_rank(&m, 1e-12).unwrap();
        assert_eq!(report.rank, 5);
        assert!(report.mae <= 1e-12);
    }

    #[test]
    fn rank_is_monotone_in_threshold() {
        let mut r = crate::util::rng(5);
        use rand::Rng;
        let m = DMatrix::from_fn(8, 12, |_, _| r.gen_range(0.0..1.0));
        let mut last = usize::MAX;
        for t in [1e-9, 1e-4, 1e-2, 0.1, 0.5] {
            let rank = approximate_rank(&m, t).unwrap().rank;
            assert!(rank <= last, "rank grew as threshold loosened");
            last = rank;
        }
    }

    #[test]
    fn tiny_threshold_recovers_full_reconstruction() {
        let mut r = crate::util::rng(9);
        use rand::Rng;
        let m = DMatrix::from_fn(6, 7, |_, _| r.gen_range(0.0..1.0));
        let report = approximate_rank(&m, 1e-10).unwrap();
        assert_eq!(report.rank, 6);
        assert!(report.mae <= 1e-8, "full reconstruction should match the matrix");
    }

    #[test]
    fn threshold_must_be_positive() {
        let m = DMatrix::<f64>::identity(3, 3);
        assert!(approximate_rank(&m, 0.0).is_err());
    }

    #[test]
    fn correlation_round_trips_through_files() {
        let conf = conf_from_columns(&[
            vec![0.6, 0.7, 0.8],
            vec![0.2, 0.5, 0.9],
            vec![0.3, 0.1, 0.6],
        ]);
        let cm = correlation_matrix(&conf, DEFAULT_EPS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corr.csv");
        save_correlation(&cm, &path, Some(&conf.example_ids)).unwrap();
        let (loaded, ids) = load_correlation(&path).unwrap();
        assert_eq!(loaded.corr, cm.corr);
        assert_eq!(loaded.dist, cm.dist);
        assert_eq!(loaded.n_models, cm.n_models);
        assert_eq!(ids.unwrap(), conf.example_ids);
    }
}
