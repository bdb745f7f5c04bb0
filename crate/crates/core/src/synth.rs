//! Synthetic multiple-choice datasets for the simulator backend.
//!
//! Every sample carries its ground-truth knowledge probability in meta
//! `knowledge`, which [`crate::probe::SimulatorSpec`] reads by default.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{Dataset, QASample, MAX_OPTIONS, MIN_OPTIONS};
use crate::error::{Error, Result};
use crate::seed;

const NOUNS: [&str; 12] = [
    "enzyme", "nerve", "artery", "hormone", "receptor", "vitamin", "antigen", "ligament", "gland", "cell", "protein",
    "membrane",
];

const ANSWERS: [&str; 16] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu", "nu", "xi",
    "omicron", "pi",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub option_count: usize,
    /// Written to meta `domain` when set.
    pub domain: Option<String>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_samples: 1000,
            option_count: 4,
            domain: None,
            seed: 0,
        }
    }
}

/// Builds a dataset with uniform knowledge `p_i` in [0, 1] and uniformly
/// placed gold answers.
pub fn synthetic_dataset(spec: &SynthSpec) -> Result<Dataset> {
    if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&spec.option_count) {
        return Err(Error::Config(format!(
            "option_count must lie in {MIN_OPTIONS}..={MAX_OPTIONS}, got {}",
            spec.option_count
        )));
    }
    let mut rng = seed::rng(seed::derive(spec.seed, "synthetic-dataset"));
    let width = spec.n_samples.saturating_sub(1).to_string().len().max(4);
    let samples = (0..spec.n_samples)
        .map(|i| {
            let noun = NOUNS[i % NOUNS.len()];
            let question = format!("Which label belongs to {noun} #{i}?");
            let mut words: Vec<&str> = ANSWERS.to_vec();
            words.shuffle(&mut rng);
            let options: Vec<String> = (0..spec.option_count)
                .map(|j| match words.get(j) {
                    Some(w) => format!("{w}-{i}"),
                    None => format!("label {j}-{i}"),
                })
                .collect();
            let answer = rng.gen_range(0..spec.option_count);
            let p: f64 = rng.gen();
            let mut s = QASample::new(format!("q{i:0width$}"), question, options, answer)
                .with_meta("knowledge", format!("{p:.4}"));
            if let Some(d) = &spec.domain {
                s = s.with_meta("domain", d.clone());
            }
            s
        })
        .collect();
    Dataset::from_samples(samples, "<synthetic>")
}
