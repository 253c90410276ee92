//! Prediction-tensor data model: file formats, ingestion, validation, and
//! derived confidence views.
//!
//! A bundle on disk is a JSON manifest naming one dense CSV matrix per class
//! (N model rows x D example columns, no header) plus a labels file with one
//! gold class index per line. Model and example order is manifest order and
//! is never sorted implicitly.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums within this distance of 1 are accepted untouched.
pub const SUM_TOLERANCE: f64 = 1e-6;
/// Row sums between [`SUM_TOLERANCE`] and this are renormalized with a warning.
pub const RENORM_TOLERANCE: f64 = 1e-3;
/// Individual probabilities may stray outside [0, 1] by at most this much.
pub const PROB_TOLERANCE: f64 = 1e-6;

/// Where an issue was found, plus a human-readable message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub location: String,
    pub message: String,
}

impl Issue {
    pub fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Issue {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Outcome of checking a tensor against its invariants. `ok` is true iff
/// `errors` is empty; warnings alone do not fail validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
    pub ok: bool,
}

/// Predicted class probabilities of N models on D examples over Y classes,
/// plus gold labels. Stored as one N x D matrix per class, mirroring the
/// on-disk layout. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTensor {
    model_ids: Vec<String>,
    example_ids: Vec<String>,
    class_count: usize,
    probs: Vec<DMatrix<f64>>,
    labels: Vec<usize>,
}

/// N x D matrix of per-example confidences for a single class view.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatrix {
    pub values: DMatrix<f64>,
    pub model_ids: Vec<String>,
    pub example_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    model_ids: Vec<String>,
    example_ids: Vec<String>,
    class_count: usize,
    labels_file: String,
    class_files: Vec<String>,
}

impl PredictionTensor {
    /// Build a tensor, enforcing every invariant. Rows whose probabilities
    /// sum to 1 within [`RENORM_TOLERANCE`] but beyond [`SUM_TOLERANCE`] are
    /// renormalized and reported as warnings; anything worse is an error.
    pub fn new(
        model_ids: Vec<String>,
        example_ids: Vec<String>,
        class_count: usize,
        probs: Vec<DMatrix<f64>>,
        labels: Vec<usize>,
    ) -> Result<(Self, Vec<Issue>)> {
        let mut tensor = PredictionTensor {
            model_ids,
            example_ids,
            class_count,
            probs,
            labels,
        };
        let warnings = tensor.renormalize_rows();
        let report = tensor.validate();
        if !report.ok {
            let joined = report
                .errors
                .iter()
                .map(Issue::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::invalid(joined));
        }
        Ok((tensor, warnings))
    }

    /// Build without any checking. Intended for the validator path and for
    /// tests that need deliberately broken tensors; run [`validate`] before
    /// trusting the result.
    ///
    /// [`validate`]: PredictionTensor::validate
    pub fn new_unchecked(
        model_ids: Vec<String>,
        example_ids: Vec<String>,
        class_count: usize,
        probs: Vec<DMatrix<f64>>,
        labels: Vec<usize>,
    ) -> Self {
        PredictionTensor {
            model_ids,
            example_ids,
            class_count,
            probs,
            labels,
        }
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_examples(&self) -> usize {
        self.example_ids.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn example_ids(&self) -> &[String] {
        &self.example_ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Probability assigned by model `n` to class `y` on example `i`.
    pub fn prob(&self, n: usize, i: usize, y: usize) -> f64 {
        self.probs[y][(n, i)]
    }

    pub fn model_index(&self, id: &str) -> Option<usize> {
        self.model_ids.iter().position(|m| m == id)
    }

    pub fn example_index(&self, id: &str) -> Option<usize> {
        self.example_ids.iter().position(|e| e == id)
    }

    /// Predicted class of model `n` on example `i`: argmax over classes,
    /// ties broken by lowest class index.
    pub fn predicted_class(&self, n: usize, i: usize) -> usize {
        let mut best = 0usize;
        let mut best_p = self.probs[0][(n, i)];
        for y in 1..self.class_count {
            let p = self.probs[y][(n, i)];
            if p > best_p {
                best = y;
                best_p = p;
            }
        }
        best
    }

    /// Check every invariant and report each violation. Row sums that are off
    /// by more than [`SUM_TOLERANCE`] but within [`RENORM_TOLERANCE`] are
    /// warnings (they are auto-renormalized on load); beyond that they are
    /// errors.
    pub fn validate(&self) -> ValidationReport {
        let mut errors = Vec::new();
        let mut warnings = Vec::new();
        let n = self.model_ids.len();
        let d = self.example_ids.len();
        let y_count = self.class_count;

        if n < 2 {
            errors.push(Issue::new("model_ids", format!("need at least 2 models, found {n}")));
        }
        if d < 2 {
            errors.push(Issue::new("example_ids", format!("need at least 2 examples, found {d}")));
        }
        if y_count < 2 {
            errors.push(Issue::new("class_count", format!("need at least 2 classes, found {y_count}")));
        }
        report_duplicates(&self.model_ids, "model_ids", &mut errors);
        report_duplicates(&self.example_ids, "example_ids", &mut errors);

        if self.probs.len() != y_count {
            errors.push(Issue::new(
                "probs",
                format!("expected {} class matrices, found {}", y_count, self.probs.len()),
            ));
        }
        for (y, m) in self.probs.iter().enumerate() {
            if m.nrows() != n || m.ncols() != d {
                errors.push(Issue::new(
                    format!("class {y}"),
                    format!("matrix is {}x{}, expected {}x{}", m.nrows(), m.ncols(), n, d),
                ));
            }
        }
        if self.labels.len() != d {
            errors.push(Issue::new(
                "labels",
                format!("expected {} labels, found {}", d, self.labels.len()),
            ));
        }
        for (i, &label) in self.labels.iter().enumerate() {
            if label >= y_count {
                errors.push(Issue::new(
                    format!("labels[{i}]"),
                    format!("label {label} outside [0, {y_count})"),
                ));
            }
        }
        // Cell range and row-sum checks only make sense on consistent shapes.
        if errors.is_empty() {
            for model in 0..n {
                for example in 0..d {
                    let mut sum = 0.0;
                    for class in 0..y_count {
                        let p = self.probs[class][(model, example)];
                        sum += p;
                        if !(-PROB_TOLERANCE..=1.0 + PROB_TOLERANCE).contains(&p) {
                            errors.push(Issue::new(
                                self.cell_location(model, example, Some(class)),
                                format!("probability {p} outside [0, 1]"),
                            ));
                        }
                    }
                    let off = (sum - 1.0).abs();
                    if off > RENORM_TOLERANCE {
                        errors.push(Issue::new(
                            self.cell_location(model, example, None),
                            format!("class probabilities sum to {sum}"),
                        ));
                    } else if off > SUM_TOLERANCE {
                        warnings.push(Issue::new(
                            self.cell_location(model, example, None),
                            format!("class probabilities sum to {sum}; renormalized on load"),
                        ));
                    }
                }
            }
        }

        let ok = errors.is_empty();
        ValidationReport { errors, warnings, ok }
    }

    fn cell_location(&self, model: usize, example: usize, class: Option<usize>) -> String {
        let mid = self.model_ids.get(model).map(String::as_str).unwrap_or("?");
        let eid = self.example_ids.get(example).map(String::as_str).unwrap_or("?");
        match class {
            Some(y) => format!("model '{mid}', example '{eid}', class {y}"),
            None => format!("model '{mid}', example '{eid}'"),
        }
    }

    /// Clamp sub-tolerance excursions outside [0, 1] and rescale rows whose
    /// sums are off by more than [`SUM_TOLERANCE`] but within
    /// [`RENORM_TOLERANCE`]. Scaling by a positive constant preserves the
    /// per-row argmax.
    fn renormalize_rows(&mut self) -> Vec<Issue> {
        let mut warnings = Vec::new();
        let n = self.model_ids.len();
        let d = self.example_ids.len();
        let y_count = self.class_count;
        if self.probs.len() != y_count
            || self.probs.iter().any(|m| m.nrows() != n || m.ncols() != d)
        {
            return warnings; // shape errors are left for validate()
        }
        for model in 0..n {
            for example in 0..d {
                let mut sum = 0.0;
                let mut in_band = true;
                for class in 0..y_count {
                    let p = self.probs[class][(model, example)];
                    if !(-PROB_TOLERANCE..=1.0 + PROB_TOLERANCE).contains(&p) {
                        in_band = false;
                    }
                    sum += p;
                }
                if !in_band {
                    continue; // out-of-range cells are validation errors
                }
                for class in 0..y_count {
                    let p = self.probs[class][(model, example)];
                    self.probs[class][(model, example)] = p.clamp(0.0, 1.0);
                }
                let off = (sum - 1.0).abs();
                if off > SUM_TOLERANCE && off <= RENORM_TOLERANCE {
                    for class in 0..y_count {
                        self.probs[class][(model, example)] /= sum;
                    }
                    warnings.push(Issue::new(
                        self.cell_location(model, example, None),
                        format!("class probabilities summed to {sum}; renormalized"),
                    ));
                }
            }
        }
        warnings
    }

    /// N x D matrix of each model's probability on the gold class:
    /// `values[n][i] = probs[n][i][labels[i]]`.
    pub fn correct_class_matrix(&self) -> ConfidenceMatrix {
        let n = self.n_models();
        let d = self.n_examples();
        let mut values = DMatrix::zeros(n, d);
        for i in 0..d {
            let label = self.labels[i];
            for m in 0..n {
                values[(m, i)] = self.probs[label][(m, i)];
            }
        }
        ConfidenceMatrix {
            values,
            model_ids: self.model_ids.clone(),
            example_ids: self.example_ids.clone(),
        }
    }

    /// N x D matrix of each model's probability on one fixed class.
    pub fn class_slice(&self, class_index: usize) -> Result<ConfidenceMatrix> {
        if class_index >= self.class_count {
            return Err(Error::invalid(format!(
                "class index {} outside [0, {})",
                class_index, self.class_count
            )));
        }
        Ok(ConfidenceMatrix {
            values: self.probs[class_index].clone(),
            model_ids: self.model_ids.clone(),
            example_ids: self.example_ids.clone(),
        })
    }
}

/// Convenience wrapper over [`PredictionTensor::validate`].
pub fn validate(tensor: &PredictionTensor) -> ValidationReport {
    tensor.validate()
}

fn report_duplicates(ids: &[String], what: &str, errors: &mut Vec<Issue>) {
    let mut seen = std::collections::BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            errors.push(Issue::new(what, format!("duplicate id '{id}'")));
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, relative: &str) -> PathBuf {
    let p = Path::new(relative);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Read an N x D headerless CSV of floats. Parse failures are reported with
/// their 1-based row/column position.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col_idx, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::malformed(
                    path,
                    format!("non-numeric cell '{}' at row {}, column {}", cell.trim(), row_idx + 1, col_idx + 1),
                )
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::invalid(format!(
                    "{}: row {} has {} columns, expected {}",
                    path.display(),
                    row_idx + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::malformed(path, "empty matrix file"));
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

/// Write a matrix as headerless CSV. Floats use the shortest representation
/// that round-trips, so save/load reproduces values bitwise.
pub fn write_matrix_csv(matrix: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in 0..matrix.nrows() {
        for c in 0..matrix.ncols() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&matrix[(r, c)].to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Structural load: manifest, shapes, and numeric parsing only. Domain
/// invariants are left to [`validate`], which is what `validate` on the CLI
/// uses so it can report every violation instead of stopping at the first.
pub fn load_raw(manifest_path: &Path) -> Result<PredictionTensor> {
    let text = read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::malformed(manifest_path, format!("bad manifest JSON: {e}")))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    if manifest.class_files.len() != manifest.class_count {
        return Err(Error::invalid(format!(
            "{}: manifest declares {} classes but lists {} class files",
            manifest_path.display(),
            manifest.class_count,
            manifest.class_files.len()
        )));
    }

    let labels_path = resolve(base, &manifest.labels_file);
    let labels_text = read_to_string(&labels_path)?;
    let mut labels = Vec::new();
    for (i, line) in labels_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: usize = line.trim().parse().map_err(|_| {
            Error::malformed(&labels_path, format!("non-integer label '{}' on line {}", line.trim(), i + 1))
        })?;
        labels.push(v);
    }
    if labels.len() != manifest.example_ids.len() {
        return Err(Error::invalid(format!(
            "{}: {} labels for {} examples",
            labels_path.display(),
            labels.len(),
            manifest.example_ids.len()
        )));
    }

    let n = manifest.model_ids.len();
    let d = manifest.example_ids.len();
    let mut probs = Vec::with_capacity(manifest.class_count);
    for (y, file) in manifest.class_files.iter().enumerate() {
        let class_path = resolve(base, file);
        let m = read_matrix_csv(&class_path)?;
        if m.nrows() != n || m.ncols() != d {
            return Err(Error::invalid(format!(
                "{}: class {} matrix is {}x{}, manifest declares {}x{}",
                class_path.display(),
                y,
                m.nrows(),
                m.ncols(),
                n,
                d
            )));
        }
        probs.push(m);
    }

    Ok(PredictionTensor::new_unchecked(
        manifest.model_ids,
        manifest.example_ids,
        manifest.class_count,
        probs,
        labels,
    ))
}

/// Load a bundle and enforce every tensor invariant. Rows within the
/// renormalization band are rescaled and returned as warnings.
pub fn load_prediction_tensor(manifest_path: &Path) -> Result<(PredictionTensor, Vec<Issue>)> {
    let raw = load_raw(manifest_path)?;
    PredictionTensor::new(
        raw.model_ids,
        raw.example_ids,
        raw.class_count,
        raw.probs,
        raw.labels,
    )
}

/// Write a tensor as a manifest bundle under `dir` (created if missing).
/// Returns the manifest path.
pub fn save_prediction_tensor(tensor: &PredictionTensor, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut class_files = Vec::new();
    for y in 0..tensor.class_count {
        let name = format!("class_{y}.csv");
        write_matrix_csv(&tensor.probs[y], &dir.join(&name))?;
        class_files.push(name);
    }
    let labels_name = "labels.txt";
    let mut labels_text = String::new();
    for label in &tensor.labels {
        labels_text.push_str(&label.to_string());
        labels_text.push('\n');
    }
    fs::write(dir.join(labels_name), labels_text).map_err(|e| Error::io(dir.join(labels_name), e))?;

    let manifest = Manifest {
        model_ids: tensor.model_ids.clone(),
        example_ids: tensor.example_ids.clone(),
        class_count: tensor.class_count,
        labels_file: labels_name.to_string(),
        class_files,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::malformed(&manifest_path, e.to_string()))?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}
