//! Synthetic model populations with controllable latent structure.
//!
//! Correct-class logits follow a rank-r factor model: examples come in
//! loading profiles (several examples share one loading vector), models carry
//! skill vectors, and the logit is their inner product plus Gaussian logit
//! noise. Example intercepts are tied to the loadings through a single
//! population-level vector, so the noiseless logit matrix has rank exactly r.
//! With zero noise, examples sharing a profile have identical confidence
//! columns (negated profiles give the complementary column), which makes
//! noiseless populations exact oracles for anchor selection and prediction.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corr::logistic;
use crate::error::{Error, Result};
use crate::tensor::PredictionTensor;
use crate::util::{derive_seed, rng};

/// Default per-dimension decay of skill scales: dimension j is drawn at
/// scale decay^j, so higher latent dimensions carry progressively weaker
/// structure (matching how real prediction matrices concentrate their
/// spectrum in a few directions). 1.0 gives isotropic skills.
const DEFAULT_SKILL_DECAY: f64 = 0.5;

// Seed stream tags.
const STREAM_GAMMA: u64 = 0;
const STREAM_SKILL: u64 = 1;
const STREAM_PROFILE_LOADING: u64 = 2;
const STREAM_PROFILE_ASSIGN: u64 = 3;
const STREAM_TREND: u64 = 4;
const STREAM_LABEL: u64 = 5;
const STREAM_NOISE: u64 = 6;

/// Recipe for a synthetic population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_models: usize,
    pub n_examples: usize,
    pub class_count: usize,
    /// Rank of the noiseless logit matrix.
    pub latent_rank: usize,
    /// Logit-space noise scale.
    pub noise_sigma: f64,
    /// Fraction of examples whose loadings are negated (negative cross-model
    /// trends).
    pub trend_mix: f64,
    /// Optional per-family skill shifts; model n belongs to family
    /// n % len(family_offsets).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_offsets: Option<Vec<Vec<f64>>>,
    pub seed: u64,
    /// Number of distinct loading profiles examples are drawn from.
    /// Defaults to n_examples / 16, clamped into [2, n_examples].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_profiles: Option<usize>,
    /// Geometric decay of per-dimension skill scales (1.0 = isotropic).
    /// Defaults to 0.5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_decay: Option<f64>,
}

impl SynthSpec {
    /// Population with default latent structure (binary task, rank 3,
    /// logit noise 0.5, 10% negated trends).
    pub fn default_population(n_models: usize, n_examples: usize, seed: u64) -> Self {
        SynthSpec {
            n_models,
            n_examples,
            class_count: 2,
            latent_rank: 3,
            noise_sigma: 0.5,
            trend_mix: 0.1,
            family_offsets: None,
            seed,
            n_profiles: None,
            skill_decay: None,
        }
    }

    pub fn profiles(&self) -> usize {
        self.n_profiles
            .unwrap_or(self.n_examples / 16)
            .clamp(2, self.n_examples)
    }
}

/// Latent record behind a generated population: enough to recompute every
/// expected (noiseless) confidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Per-model skill vectors (family offsets already applied), N x r.
    pub skills: Vec<Vec<f64>>,
    /// Per-example loading vectors (negation already applied), D x r.
    pub loadings: Vec<Vec<f64>>,
    /// Per-example intercepts (gamma . loading).
    pub intercepts: Vec<f64>,
    /// Population-level intercept direction.
    pub gamma: Vec<f64>,
    /// Which examples carry negated loadings.
    pub trend_negated: Vec<bool>,
    /// Loading profile id per example.
    pub profile: Vec<usize>,
}

impl GroundTruth {
    /// Noiseless correct-class confidence of model `n` on example `x`.
    pub fn expected_confidence(&self, n: usize, x: usize) -> f64 {
        let dot: f64 = self.skills[n]
            .iter()
            .zip(&self.loadings[x])
            .map(|(a, b)| a * b)
            .sum();
        logistic(dot + self.intercepts[x])
    }
}

fn normal(r: &mut impl Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Generate a population. Deterministic in the spec's seed; models draw from
/// per-model derived seed streams so generation order never matters.
pub fn generate_population(spec: &SynthSpec) -> Result<(PredictionTensor, GroundTruth)> {
    if spec.latent_rank == 0 {
        return Err(Error::invalid("latent_rank must be at least 1".to_string()));
    }
    if spec.noise_sigma < 0.0 {
        return Err(Error::invalid("noise_sigma must be nonnegative".to_string()));
    }
    if !(0.0..=1.0).contains(&spec.trend_mix) {
        return Err(Error::invalid("trend_mix must lie in [0, 1]".to_string()));
    }
    if spec.n_models < 2 || spec.n_examples < 2 || spec.class_count < 2 {
        return Err(Error::invalid(
            "population needs at least 2 models, 2 examples, and 2 classes".to_string(),
        ));
    }
    if let Some(offsets) = &spec.family_offsets {
        if offsets.is_empty() || offsets.iter().any(|o| o.len() != spec.latent_rank) {
            return Err(Error::invalid(format!(
                "family_offsets must be non-empty vectors of length {}",
                spec.latent_rank
            )));
        }
    }
    let n = spec.n_models;
    let d = spec.n_examples;
    let y_count = spec.class_count;
    let r = spec.latent_rank;
    let g = spec.profiles();

    let decay = spec.skill_decay.unwrap_or(DEFAULT_SKILL_DECAY);
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::invalid("skill_decay must lie in (0, 1]".to_string()));
    }
    let scale: Vec<f64> = (0..r).map(|j| decay.powi(j as i32)).collect();
    let mut gamma_rng = rng(derive_seed(spec.seed, &[STREAM_GAMMA]));
    let gamma: Vec<f64> = scale.iter().map(|s| s * normal(&mut gamma_rng)).collect();

    let mut skills = Vec::with_capacity(n);
    for m in 0..n {
        let mut sr = rng(derive_seed(spec.seed, &[STREAM_SKILL, m as u64]));
        let mut a: Vec<f64> = scale.iter().map(|s| s * normal(&mut sr)).collect();
        if let Some(offsets) = &spec.family_offsets {
            let fam = &offsets[m % offsets.len()];
            for (ai, oi) in a.iter_mut().zip(fam) {
                *ai += oi;
            }
        }
        skills.push(a);
    }

    let profile_loadings: Vec<Vec<f64>> = (0..g)
        .map(|p| {
            let mut pr = rng(derive_seed(spec.seed, &[STREAM_PROFILE_LOADING, p as u64]));
            (0..r).map(|_| normal(&mut pr)).collect()
        })
        .collect();

    let mut loadings = Vec::with_capacity(d);
    let mut intercepts = Vec::with_capacity(d);
    let mut trend_negated = Vec::with_capacity(d);
    let mut profile = Vec::with_capacity(d);
    let mut labels = Vec::with_capacity(d);
    for x in 0..d {
        let mut ar = rng(derive_seed(spec.seed, &[STREAM_PROFILE_ASSIGN, x as u64]));
        let p = ar.gen_range(0..g);
        let mut tr = rng(derive_seed(spec.seed, &[STREAM_TREND, x as u64]));
        let negated = tr.gen::<f64>() < spec.trend_mix;
        let mut b = profile_loadings[p].clone();
        if negated {
            for v in b.iter_mut() {
                *v = -*v;
            }
        }
        let c: f64 = gamma.iter().zip(&b).map(|(gi, bi)| gi * bi).sum();
        loadings.push(b);
        intercepts.push(c);
        trend_negated.push(negated);
        profile.push(p);
        let mut lr = rng(derive_seed(spec.seed, &[STREAM_LABEL, x as u64]));
        labels.push(lr.gen_range(0..y_count));
    }

    let truth = GroundTruth {
        skills,
        loadings,
        intercepts,
        gamma,
        trend_negated,
        profile,
    };

    let mut probs: Vec<DMatrix<f64>> = (0..y_count).map(|_| DMatrix::zeros(n, d)).collect();
    for m in 0..n {
        let mut noise_rng = rng(derive_seed(spec.seed, &[STREAM_NOISE, m as u64]));
        for x in 0..d {
            let eps: f64 = if spec.noise_sigma > 0.0 {
                spec.noise_sigma * normal(&mut noise_rng)
            } else {
                0.0
            };
            let dot: f64 = truth.skills[m]
                .iter()
                .zip(&truth.loadings[x])
                .map(|(a, b)| a * b)
                .sum();
            let p = logistic(dot + truth.intercepts[x] + eps);
            let wrong = (1.0 - p) / (y_count - 1) as f64;
            for (y, matrix) in probs.iter_mut().enumerate() {
                matrix[(m, x)] = if y == labels[x] { p } else { wrong };
            }
        }
    }

    let model_ids = (0..n).map(|m| format!("model_{m:03}")).collect();
    let example_ids = (0..d).map(|x| format!("ex_{x:04}")).collect();
    let (tensor, _warnings) =
        PredictionTensor::new(model_ids, example_ids, y_count, probs, labels)?;
    Ok((tensor, truth))
}

pub fn save_ground_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(truth).map_err(|e| Error::malformed(path, e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_synth_spec(path: &Path) -> Result<SynthSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(path, format!("bad synth spec JSON: {e}")))
}
