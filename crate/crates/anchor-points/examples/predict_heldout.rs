//! Estimate a held-out model's per-example predictions from its anchor
//! evaluations alone: per-anchor linear trends fitted on source models, each
//! test example served by its nearest anchor.
//!
//!     cargo run --example predict_heldout

use anchor_points::anchors::select_anchors;
use anchor_points::corr::{correlation_matrix, DEFAULT_EPS};
use anchor_points::estimator::{agreement, fit_predictor, mae, predict_all, predict_classes};
use anchor_points::synth::{generate_population, SynthSpec};
use anchor_points::tensor::ConfidenceMatrix;
use nalgebra::DMatrix;

fn main() -> anchor_points::Result<()> {
    let mut spec = SynthSpec::default_population(30, 250, 29);
    spec.noise_sigma = 0.3;
    let (tensor, _) = generate_population(&spec)?;
    let conf = tensor.correct_class_matrix();
    let d = tensor.n_examples();

    // Source = first 25 models; hold out the rest.
    let src: Vec<usize> = (0..25).collect();
    let source = ConfidenceMatrix {
        values: DMatrix::from_fn(25, d, |r, c| conf.values[(src[r], c)]),
        model_ids: conf.model_ids[..25].to_vec(),
        example_ids: conf.example_ids.clone(),
    };
    let cm = correlation_matrix(&source, DEFAULT_EPS)?;
    let anchors = select_anchors(&cm, 15, 2)?;
    let predictor = fit_predictor(&source, &anchors)?;
    let per_class: Vec<_> = (0..tensor.class_count())
        .map(|y| {
            let slice = tensor.class_slice(y).unwrap();
            let sv = DMatrix::from_fn(25, d, |r, c| slice.values[(src[r], c)]);
            fit_predictor(
                &ConfidenceMatrix {
                    values: sv,
                    model_ids: source.model_ids.clone(),
                    example_ids: source.example_ids.clone(),
                },
                &anchors,
            )
            .unwrap()
        })
        .collect();

    for held in 25..30 {
        // 15 anchor evaluations stand in for all 250 examples.
        let measured: Vec<f64> = anchors.medoids.iter().map(|&a| conf.values[(held, a)]).collect();
        let est = predict_all(&predictor, &measured)?;
        let actual: Vec<f64> = (0..d).map(|x| conf.values[(held, x)]).collect();
        let err = mae(&est.values, &actual)?;

        let target = DMatrix::from_fn(anchors.k(), tensor.class_count(), |p, y| {
            tensor.prob(held, anchors.medoids[p], y)
        });
        let (_, est_labels) = predict_classes(&per_class, &target)?;
        let actual_labels: Vec<usize> = (0..d).map(|x| tensor.predicted_class(held, x)).collect();
        let agr = agreement(&est_labels, &actual_labels)?;
        println!(
            "{}: confidence mae {:.3}, predicted-class agreement {:.3}",
            tensor.model_ids()[held],
            err,
            agr
        );
    }
    Ok(())
}
