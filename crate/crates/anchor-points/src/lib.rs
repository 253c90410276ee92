//! Anchor points: tiny representative evaluation subsets for classification
//! benchmarks.
//!
//! Model confidences on many example pairs are strongly correlated across
//! models. This crate exploits that structure to pick a handful of "anchor"
//! examples that stand in for a whole evaluation set: evaluating a new model
//! on just the anchors is enough to rank it against other models and to
//! estimate its per-example predictions everywhere else.
//!
//! The pipeline, end to end:
//!
//! 1. [`tensor`] - load a prediction bundle (N models x D examples x Y class
//!    probabilities plus gold labels) and derive confidence matrices.
//! 2. [`corr`] - correlate logit-transformed correct-class confidences across
//!    models, giving a D x D example-distance matrix (`1 - correlation`).
//! 3. [`anchors`] - solve the facility-location objective over that matrix
//!    with K-medoids, yielding anchor examples, cluster assignments, and
//!    cluster weights.
//! 4. [`estimator`] - score models from anchor evaluations (cluster-weighted
//!    score) or estimate their per-example confidences (per-anchor linear
//!    trends).
//! 5. [`eval`] - benchmark all of the above against baselines with
//!    randomized source/target splits, Kendall-tau curves, and AUCC.
//! 6. [`mapviz`] - embed the distance matrix with classical MDS and render
//!    colored SVG maps of model strengths and weaknesses.
//! 7. [`synth`] - generate synthetic model populations with known latent
//!    structure, used as oracles throughout the test suite.
//!
//! Each major capability has a runnable demo under `examples/`; the
//! `anchor-points` binary wires the same operations into a CLI.

pub mod anchors;
pub mod cli;
pub mod corr;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod mapviz;
pub mod synth;
pub mod tensor;

pub mod util;

pub use error::{Error, Result};
