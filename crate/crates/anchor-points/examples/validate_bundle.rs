//! Load a prediction bundle, run full validation, and show how violations
//! are reported.
//!
//!     cargo run --example validate_bundle

use nalgebra::DMatrix;

use anchor_points::synth::{generate_population, SynthSpec};
use anchor_points::tensor::{load_prediction_tensor, save_prediction_tensor, PredictionTensor};

fn main() -> anchor_points::Result<()> {
    // A clean bundle round-trips without complaints.
    let (tensor, _) = generate_population(&SynthSpec::default_population(8, 40, 3))?;
    let dir = std::env::temp_dir().join("anchor_points_validate");
    let manifest = save_prediction_tensor(&tensor, &dir)?;
    let (loaded, warnings) = load_prediction_tensor(&manifest)?;
    println!(
        "loaded {} models x {} examples: {} warnings",
        loaded.n_models(),
        loaded.n_examples(),
        warnings.len()
    );
    assert_eq!(loaded, tensor);

    // A broken tensor reports every violated invariant instead of failing on
    // the first one.
    let class0 = DMatrix::from_row_slice(2, 2, &[0.4, 0.5, 1.4, 0.5]);
    let class1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.5005, -0.4, 0.5]);
    let broken = PredictionTensor::new_unchecked(
        vec!["m0".into(), "m0".into()],
        vec!["e0".into(), "e1".into()],
        2,
        vec![class0, class1],
        vec![0, 2],
    );
    let report = broken.validate();
    println!("broken tensor: ok = {}", report.ok);
    for issue in &report.errors {
        println!("  error   {issue}");
    }
    for issue in &report.warnings {
        println!("  warning {issue}");
    }
    Ok(())
}
