//! Anchor point maps: classical (Torgerson) multidimensional scaling of the
//! example distance matrix, and deterministic SVG scatter rendering with a
//! red-white-blue diverging color scale.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::anchors::AnchorSet;
use crate::corr::CorrelationModel;
use crate::error::{Error, Result};

/// Color scale endpoints: red at 0, white at 0.5, blue at 1.
const COLOR_LOW: [u8; 3] = [0xc0, 0x39, 0x2b];
const COLOR_MID: [u8; 3] = [0xff, 0xff, 0xff];
const COLOR_HIGH: [u8; 3] = [0x29, 0x80, 0xb9];

/// Eigenvalues below this fraction of the largest are treated as zero.
const EIGEN_REL_TOLERANCE: f64 = 1e-12;

/// 2-D (or higher) embedding of the examples. `coords` columns are ordered by
/// decreasing explained eigenvalue and centered; `stress` is the normalized
/// residual between the input distances and the embedded Euclidean distances;
/// `dims_retained` counts the positive-eigenvalue dimensions actually kept
/// before any zero padding (or the intermediate dimensionality when the
/// two-stage pipeline is used).
#[derive(Debug, Clone, PartialEq)]
pub struct MapCoordinates {
    pub coords: DMatrix<f64>,
    pub stress: f64,
    pub dims_retained: usize,
}

/// Classical MDS on the correlation-induced distances.
pub fn mds_coordinates(
    cm: &CorrelationModel,
    out_dims: usize,
    intermediate_dims: usize,
) -> Result<MapCoordinates> {
    mds_from_distances(&cm.dist, out_dims, intermediate_dims)
}

/// Classical MDS on an arbitrary symmetric distance matrix: double-center
/// -1/2 D^2, take the top positive eigenpairs, and scale eigenvectors by the
/// square roots of their eigenvalues. With `intermediate_dims > 0` the
/// embedding first goes to that dimensionality and is then projected to
/// `out_dims` with PCA. Columns follow a fixed sign convention (first entry
/// of nontrivial magnitude is positive), so output is deterministic.
pub fn mds_from_distances(
    dist: &DMatrix<f64>,
    out_dims: usize,
    intermediate_dims: usize,
) -> Result<MapCoordinates> {
    let d = dist.nrows();
    if dist.ncols() != d {
        return Err(Error::invalid("distance matrix must be square".to_string()));
    }
    if out_dims == 0 {
        return Err(Error::invalid("out_dims must be at least 1".to_string()));
    }
    if intermediate_dims > 0 && intermediate_dims < out_dims {
        return Err(Error::invalid(format!(
            "intermediate_dims {intermediate_dims} is smaller than out_dims {out_dims}"
        )));
    }
    let target = if intermediate_dims > 0 { intermediate_dims } else { out_dims };

    // B = -1/2 J D^2 J via row/column means of the squared distances.
    let nf = d as f64;
    let d2 = dist.map(|v| v * v);
    let row_means: Vec<f64> = (0..d)
        .map(|i| (0..d).map(|j| d2[(i, j)]).sum::<f64>() / nf)
        .collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    let b = DMatrix::from_fn(d, d, |i, j| -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand));

    let eigen = nalgebra::SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &c| eigen.eigenvalues[c].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&c)));
    let lambda_max = eigen.eigenvalues[order[0]].max(0.0);
    let cutoff = lambda_max * EIGEN_REL_TOLERANCE;

    let mut retained = 0usize;
    let mut coords = DMatrix::zeros(d, target);
    for (col, &idx) in order.iter().enumerate().take(target) {
        let lambda = eigen.eigenvalues[idx];
        if lambda <= cutoff {
            break; // remaining eigenvalues are zero or negative; pad with zeros
        }
        let scale = lambda.sqrt();
        for i in 0..d {
            coords[(i, col)] = eigen.eigenvectors[(i, idx)] * scale;
        }
        retained += 1;
    }

    let mut result = if intermediate_dims > 0 {
        MapCoordinates {
            coords: pca_project(&coords, out_dims),
            stress: 0.0,
            dims_retained: retained,
        }
    } else {
        MapCoordinates {
            coords,
            stress: 0.0,
            dims_retained: retained,
        }
    };
    apply_sign_convention(&mut result.coords);
    result.stress = stress(dist, &result.coords);
    Ok(result)
}

/// Project centered coordinates onto their top principal components.
fn pca_project(coords: &DMatrix<f64>, out_dims: usize) -> DMatrix<f64> {
    let d = coords.nrows();
    let m = coords.ncols();
    let cov = coords.transpose() * coords; // m x m, coords already centered
    let eigen = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &c| eigen.eigenvalues[c].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&c)));
    let mut out = DMatrix::zeros(d, out_dims);
    for (col, &idx) in order.iter().enumerate().take(out_dims) {
        let axis = eigen.eigenvectors.column(idx);
        for i in 0..d {
            let mut v = 0.0;
            for j in 0..m {
                v += coords[(i, j)] * axis[j];
            }
            out[(i, col)] = v;
        }
    }
    out
}

/// Flip each column so its first entry of meaningful magnitude is positive.
fn apply_sign_convention(coords: &mut DMatrix<f64>) {
    for c in 0..coords.ncols() {
        let lead = (0..coords.nrows()).find(|&i| coords[(i, c)].abs() > 1e-12);
        if let Some(i) = lead {
            if coords[(i, c)] < 0.0 {
                for r in 0..coords.nrows() {
                    coords[(r, c)] = -coords[(r, c)];
                }
            }
        }
    }
}

/// Normalized Kruskal-style residual between input distances and embedded
/// Euclidean distances over i < j.
fn stress(dist: &DMatrix<f64>, coords: &DMatrix<f64>) -> f64 {
    let d = dist.nrows();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            let delta = dist[(i, j)];
            let mut e2 = 0.0;
            for c in 0..coords.ncols() {
                let diff = coords[(i, c)] - coords[(j, c)];
                e2 += diff * diff;
            }
            let e = e2.sqrt();
            num += (e - delta) * (e - delta);
            den += delta * delta;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Map a value in [0, 1] onto the diverging scale, anchored at white = 0.5.
pub fn diverging_color(value: f64) -> String {
    let (a, b, t) = if value <= 0.5 {
        (COLOR_LOW, COLOR_MID, value / 0.5)
    } else {
        (COLOR_MID, COLOR_HIGH, (value - 0.5) / 0.5)
    };
    let ch = |lo: u8, hi: u8| -> u8 { (lo as f64 + (hi as f64 - lo as f64) * t).round() as u8 };
    format!("#{:02x}{:02x}{:02x}", ch(a[0], b[0]), ch(a[1], b[1]), ch(a[2], b[2]))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const SVG_W: f64 = 860.0;
const SVG_H: f64 = 640.0;
const PLOT_X0: f64 = 50.0;
const PLOT_Y0: f64 = 50.0;
const PLOT_W: f64 = 630.0;
const PLOT_H: f64 = 550.0;
const LEGEND_X: f64 = 720.0;
const LEGEND_Y: f64 = 90.0;
const LEGEND_W: f64 = 22.0;
const LEGEND_STEPS: usize = 32;
const LEGEND_STEP_H: f64 = 10.0;

/// Render the map as an SVG string: one circle per example colored by its
/// value, anchors as outlined triangles, a vertical color legend, and a
/// title. Identical inputs produce identical bytes.
pub fn svg_map(
    coords: &MapCoordinates,
    colors: &[f64],
    anchors: Option<&AnchorSet>,
    title: &str,
) -> Result<String> {
    let d = coords.coords.nrows();
    if coords.coords.ncols() < 2 {
        return Err(Error::invalid("map rendering needs at least 2 coordinate columns".to_string()));
    }
    if colors.len() != d {
        return Err(Error::invalid(format!(
            "{} colors for {} examples",
            colors.len(),
            d
        )));
    }
    for (i, &c) in colors.iter().enumerate() {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::invalid(format!("color {c} at index {i} outside [0, 1]")));
        }
    }
    let mut is_anchor = vec![false; d];
    if let Some(aset) = anchors {
        for &m in &aset.medoids {
            if m >= d {
                return Err(Error::invalid(format!("anchor index {m} outside [0, {d})")));
            }
            is_anchor[m] = true;
        }
    }

    // Equal-scale mapping of data coordinates into the plot area, y flipped.
    let xs: Vec<f64> = (0..d).map(|i| coords.coords[(i, 0)]).collect();
    let ys: Vec<f64> = (0..d).map(|i| coords.coords[(i, 1)]).collect();
    let (xmin, xmax) = bounds(&xs);
    let (ymin, ymax) = bounds(&ys);
    let span_x = (xmax - xmin).max(1e-12);
    let span_y = (ymax - ymin).max(1e-12);
    let scale = ((PLOT_W - 20.0) / span_x).min((PLOT_H - 20.0) / span_y);
    let cx0 = PLOT_X0 + PLOT_W / 2.0;
    let cy0 = PLOT_Y0 + PLOT_H / 2.0;
    let midx = (xmin + xmax) / 2.0;
    let midy = (ymin + ymax) / 2.0;
    let px = |x: f64| cx0 + (x - midx) * scale;
    let py = |y: f64| cy0 - (y - midy) * scale;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"30\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        SVG_W / 2.0,
        xml_escape(title)
    ));

    for i in 0..d {
        if is_anchor[i] {
            continue;
        }
        svg.push_str(&format!(
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.85\"/>\n",
            px(xs[i]),
            py(ys[i]),
            diverging_color(colors[i])
        ));
    }
    for i in 0..d {
        if !is_anchor[i] {
            continue;
        }
        let x = px(xs[i]);
        let y = py(ys[i]);
        svg.push_str(&format!(
            "<polygon points=\"{:.3},{:.3} {:.3},{:.3} {:.3},{:.3}\" fill=\"{}\" stroke=\"#000000\" stroke-width=\"1\"/>\n",
            x,
            y - 6.0,
            x - 5.2,
            y + 4.0,
            x + 5.2,
            y + 4.0,
            diverging_color(colors[i])
        ));
    }

    // Legend: high values at the top.
    for step in 0..LEGEND_STEPS {
        let value = 1.0 - (step as f64 + 0.5) / LEGEND_STEPS as f64;
        svg.push_str(&format!(
            "<rect x=\"{LEGEND_X}\" y=\"{:.1}\" width=\"{LEGEND_W}\" height=\"{LEGEND_STEP_H}\" fill=\"{}\"/>\n",
            LEGEND_Y + step as f64 * LEGEND_STEP_H,
            diverging_color(value)
        ));
    }
    let legend_h = LEGEND_STEPS as f64 * LEGEND_STEP_H;
    for (frac, label) in [(0.0f64, "1.0"), (0.5, "0.5"), (1.0, "0.0")] {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{label}</text>\n",
            LEGEND_X + LEGEND_W + 6.0,
            LEGEND_Y + frac * legend_h + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Render and write the SVG map.
pub fn render_map(
    coords: &MapCoordinates,
    colors: &[f64],
    anchors: Option<&AnchorSet>,
    out_path: &Path,
    title: &str,
) -> Result<()> {
    let svg = svg_map(coords, colors, anchors, title)?;
    fs::write(out_path, svg).map_err(|e| Error::io(out_path, e))
}

/// Export coordinates as CSV (`example_id,x,y`).
pub fn save_coordinates(coords: &MapCoordinates, example_ids: &[String], path: &Path) -> Result<()> {
    let d = coords.coords.nrows();
    if example_ids.len() != d {
        return Err(Error::invalid(format!(
            "{} example ids for {} coordinate rows",
            example_ids.len(),
            d
        )));
    }
    if coords.coords.ncols() < 2 {
        return Err(Error::invalid("coordinate export needs at least 2 columns".to_string()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e.to_string()))?;
    w.write_record(["example_id", "x", "y"])
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    for i in 0..d {
        w.write_record([
            example_ids[i].as_str(),
            &coords.coords[(i, 0)].to_string(),
            &coords.coords[(i, 1)].to_string(),
        ])
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
