//! Run the ranking evaluation protocol: randomized source/target splits,
//! tau curves over evaluation sizes, and the area under the curve, for
//! anchor methods against uniform-sampling baselines.
//!
//!     cargo run --example rank_methods

use anchor_points::eval::{run_ranking_experiments, ExperimentConfig, Method};
use anchor_points::synth::{generate_population, SynthSpec};

fn main() -> anchor_points::Result<()> {
    let (tensor, _) = generate_population(&SynthSpec::default_population(40, 300, 51))?;
    let config = ExperimentConfig {
        method: Method::AnchorWeighted,
        n_source: 10,
        budget_max: 10,
        n_runs: 25,
        seed: 3,
        eval_sizes: vec![],
    };
    let methods = [
        Method::AnchorWeighted,
        Method::AnchorPredictor,
        Method::RandomExact,
        Method::RandomMean,
    ];
    let report = run_ranking_experiments(&tensor, &methods, &config, None)?;

    println!(
        "{} runs, {} source models, {} targets, sizes 1..={}",
        config.n_runs,
        config.n_source,
        tensor.n_models() - config.n_source,
        config.budget_max
    );
    println!("{:<18} {:>8} {:>8}   tau at sizes 1, 5, 10", "method", "aucc", "se");
    for mr in &report.methods {
        let aucc = mr.aucc.as_ref().unwrap();
        let tau_at = |s: usize| mr.curve.iter().find(|p| p.size == s).unwrap().mean_tau;
        println!(
            "{:<18} {:>8.4} {:>8.4}   {:.3} / {:.3} / {:.3}",
            mr.method.name(),
            aucc.mean,
            aucc.se,
            tau_at(1),
            tau_at(5),
            tau_at(10)
        );
    }
    Ok(())
}
