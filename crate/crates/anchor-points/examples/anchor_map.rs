//! Render an anchor point map: classical MDS of the correlation distances,
//! colored by a held-out model's estimated confidences, anchors drawn as
//! triangles.
//!
//!     cargo run --example anchor_map

use anchor_points::anchors::select_anchors;
use anchor_points::corr::{correlation_matrix, DEFAULT_EPS};
use anchor_points::estimator::{fit_predictor, predict_all};
use anchor_points::mapviz::{mds_coordinates, render_map, save_coordinates};
use anchor_points::synth::{generate_population, SynthSpec};
use anchor_points::tensor::ConfidenceMatrix;
use nalgebra::DMatrix;

fn main() -> anchor_points::Result<()> {
    let mut spec = SynthSpec::default_population(30, 150, 31);
    spec.n_profiles = Some(6);
    let (tensor, _) = generate_population(&spec)?;
    let conf = tensor.correct_class_matrix();
    let d = tensor.n_examples();

    // Map geometry comes from the first 25 models; the held-out model only
    // contributes its anchor evaluations.
    let source = ConfidenceMatrix {
        values: DMatrix::from_fn(25, d, |r, c| conf.values[(r, c)]),
        model_ids: conf.model_ids[..25].to_vec(),
        example_ids: conf.example_ids.clone(),
    };
    let cm = correlation_matrix(&source, DEFAULT_EPS)?;
    let coords = mds_coordinates(&cm, 2, 0)?;
    println!("mds stress: {:.4} ({} dims retained)", coords.stress, coords.dims_retained);

    let anchors = select_anchors(&cm, 6, 1)?;
    let predictor = fit_predictor(&source, &anchors)?;
    let held = 29;
    let measured: Vec<f64> = anchors.medoids.iter().map(|&a| conf.values[(held, a)]).collect();
    let estimates = predict_all(&predictor, &measured)?;

    let dir = std::env::temp_dir().join("anchor_points_map");
    std::fs::create_dir_all(&dir).map_err(|e| anchor_points::Error::io(&dir, e))?;
    let svg = dir.join("map.svg");
    render_map(
        &coords,
        &estimates.values,
        Some(&anchors),
        &svg,
        "estimated confidences of a held-out model",
    )?;
    save_coordinates(&coords, tensor.example_ids(), &dir.join("coords.csv"))?;
    println!("wrote {}", svg.display());
    println!("red regions mark where the held-out model is estimated to be weak");
    Ok(())
}
