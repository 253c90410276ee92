//! Generate a synthetic model population and write it out as a standard
//! prediction bundle (manifest + per-class CSV matrices + labels) alongside
//! its latent ground truth.
//!
//!     cargo run --example synthesize

use anchor_points::synth::{generate_population, save_ground_truth, SynthSpec};
use anchor_points::tensor::save_prediction_tensor;

fn main() -> anchor_points::Result<()> {
    let spec = SynthSpec {
        n_models: 30,
        n_examples: 200,
        class_count: 3,
        latent_rank: 2,
        noise_sigma: 0.4,
        trend_mix: 0.1,
        family_offsets: None,
        seed: 17,
        n_profiles: Some(12),
        skill_decay: None,
    };
    let (tensor, truth) = generate_population(&spec)?;

    let dir = std::env::temp_dir().join("anchor_points_synthesize");
    let manifest = save_prediction_tensor(&tensor, &dir)?;
    save_ground_truth(&truth, &dir.join("ground_truth.json"))?;

    println!(
        "population: {} models x {} examples x {} classes",
        tensor.n_models(),
        tensor.n_examples(),
        tensor.class_count()
    );
    let negated = truth.trend_negated.iter().filter(|&&n| n).count();
    println!(
        "latent rank {}, {} loading profiles, {} negated examples",
        spec.latent_rank,
        spec.profiles(),
        negated
    );

    // The latent record reproduces every noiseless confidence.
    let conf = tensor.correct_class_matrix();
    let expected = truth.expected_confidence(0, 0);
    println!(
        "model_000 on ex_0000: confidence {:.4} (noiseless expectation {:.4})",
        conf.values[(0, 0)],
        expected
    );
    println!("bundle written to {}", manifest.display());
    Ok(())
}
