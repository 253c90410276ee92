//! Rank held-out models from a handful of anchor evaluations: the weighted
//! anchor score (cluster-size-weighted mean confidence) against each model's
//! true full-set accuracy.
//!
//!     cargo run --example score_models

use anchor_points::anchors::select_anchors;
use anchor_points::corr::{correlation_matrix, DEFAULT_EPS};
use anchor_points::estimator::apw_score;
use anchor_points::eval::{kendall_tau, split_models, true_performance};
use anchor_points::synth::{generate_population, SynthSpec};
use anchor_points::tensor::ConfidenceMatrix;
use nalgebra::DMatrix;

fn main() -> anchor_points::Result<()> {
    let (tensor, _) = generate_population(&SynthSpec::default_population(40, 300, 23))?;
    let (source_ids, target_ids) = split_models(&tensor, 10, 4)?;
    let conf = tensor.correct_class_matrix();

    // Anchors come from source models only.
    let src: Vec<usize> = source_ids.iter().map(|id| tensor.model_index(id).unwrap()).collect();
    let source = ConfidenceMatrix {
        values: DMatrix::from_fn(src.len(), conf.values.ncols(), |r, c| conf.values[(src[r], c)]),
        model_ids: source_ids.clone(),
        example_ids: conf.example_ids.clone(),
    };
    let cm = correlation_matrix(&source, DEFAULT_EPS)?;
    let anchors = select_anchors(&cm, 10, 1)?;
    println!("selected {} anchors from {} source models", anchors.k(), src.len());

    // Each target is evaluated on the 10 anchors only.
    let mut scores = Vec::new();
    let mut truths = Vec::new();
    println!("{:<12} {:>10} {:>10}", "target", "apw", "accuracy");
    for id in target_ids.iter().take(8) {
        let m = tensor.model_index(id).unwrap();
        let measured: Vec<f64> = anchors.medoids.iter().map(|&a| conf.values[(m, a)]).collect();
        let apw = apw_score(&anchors, &measured)?;
        let acc = true_performance(&tensor, id)?;
        println!("{id:<12} {apw:>10.4} {acc:>10.4}");
        scores.push(apw);
        truths.push(acc);
    }
    for id in target_ids.iter().skip(8) {
        let m = tensor.model_index(id).unwrap();
        let measured: Vec<f64> = anchors.medoids.iter().map(|&a| conf.values[(m, a)]).collect();
        scores.push(apw_score(&anchors, &measured)?);
        truths.push(true_performance(&tensor, id)?);
    }
    println!(
        "kendall tau over all {} targets: {:.3}",
        scores.len(),
        kendall_tau(&scores, &truths)?
    );
    Ok(())
}
