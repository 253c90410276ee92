//! Select anchor points: correlate logit confidences across models, turn the
//! correlations into distances, and solve the facility-location objective
//! with K-medoids.
//!
//!     cargo run --example select_anchors

use anchor_points::anchors::{objective_value, select_anchors};
use anchor_points::corr::{correlation_matrix, DEFAULT_EPS};
use anchor_points::synth::{generate_population, SynthSpec};

fn main() -> anchor_points::Result<()> {
    let mut spec = SynthSpec::default_population(25, 150, 11);
    spec.n_profiles = Some(8);
    let (tensor, truth) = generate_population(&spec)?;

    let conf = tensor.correct_class_matrix();
    let cm = correlation_matrix(&conf, DEFAULT_EPS)?;
    println!(
        "correlation matrix over {} examples from {} models",
        cm.n_examples(),
        cm.n_models
    );

    let anchors = select_anchors(&cm, 8, 1)?;
    println!("objective: {:.4}", anchors.objective);
    for (cluster, &m) in anchors.medoids.iter().enumerate() {
        println!(
            "anchor {cluster}: {} (profile {}, represents {} examples)",
            tensor.example_ids()[m],
            truth.profile[m],
            anchors.weights[cluster]
        );
    }

    // The anchors land one per latent profile, so the objective is near the
    // attainable floor.
    let naive: Vec<usize> = (0..8).collect();
    println!(
        "first-8-examples objective for comparison: {:.4}",
        objective_value(&cm, &naive)?
    );
    Ok(())
}
