//! Deterministic stand-in for a model with known per-question knowledge.
//!
//! For each query the answer slot is drawn as follows: with probability
//! `positional_bias` the letter at `biased_slot`; otherwise the gold slot
//! with probability `p_i`, else a uniformly chosen non-gold slot. At
//! temperature 0 the simulator answers the argmax of that distribution
//! (lowest slot on ties).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{BackendError, GenerateRequest, ModelBackend};
use crate::dataset::Dataset;
use crate::diversify::letter;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorSpec {
    #[serde(default)]
    pub positional_bias: f64,
    #[serde(default)]
    pub biased_slot: usize,
    #[serde(default)]
    pub seed: u64,
    /// Used when a sample has neither an explicit entry nor a meta value.
    #[serde(default)]
    pub default_knowledge: Option<f64>,
    /// Sample meta key holding `p_i` as a decimal string.
    #[serde(default = "default_meta_key")]
    pub knowledge_meta_key: String,
    /// Explicit `p_i` by sample id; takes precedence over meta.
    #[serde(default)]
    pub knowledge: BTreeMap<String, f64>,
}

fn default_meta_key() -> String {
    "knowledge".to_string()
}

impl Default for SimulatorSpec {
    fn default() -> Self {
        SimulatorSpec {
            positional_bias: 0.0,
            biased_slot: 0,
            seed: 0,
            default_knowledge: None,
            knowledge_meta_key: default_meta_key(),
            knowledge: BTreeMap::new(),
        }
    }
}

impl SimulatorSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SimulatorSpec = toml::from_str(text).map_err(|e| Error::Config(format!("simulator spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.positional_bias) {
            return Err(Error::Config("positional_bias must lie in [0, 1]".into()));
        }
        if let Some(d) = self.default_knowledge {
            if !in_unit(d) {
                return Err(Error::Config("default_knowledge must lie in [0, 1]".into()));
            }
        }
        if let Some((id, p)) = self.knowledge.iter().find(|(_, p)| !in_unit(**p)) {
            return Err(Error::Config(format!("knowledge for {id:?} = {p} is outside [0, 1]")));
        }
        Ok(())
    }

    /// Resolved `p_i` for every sample, in dataset order.
    pub fn knowledge_for(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        dataset
            .samples
            .iter()
            .map(|s| {
                if let Some(&p) = self.knowledge.get(&s.id) {
                    return Ok(p);
                }
                if let Some(v) = s.meta_value(&self.knowledge_meta_key) {
                    let p: f64 = v
                        .parse()
                        .map_err(|_| Error::Config(format!("sample {:?}: knowledge {v:?} is not a number", s.id)))?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::Config(format!(
                            "sample {:?}: knowledge {p} outside [0, 1]",
                            s.id
                        )));
                    }
                    return Ok(p);
                }
                self.default_knowledge
                    .ok_or_else(|| Error::Config(format!("no knowledge probability for sample {:?}", s.id)))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Entry {
    knowledge: f64,
    gold_text: String,
}

pub struct SimulatorBackend {
    spec: SimulatorSpec,
    by_question: HashMap<String, Entry>,
    fingerprint: String,
}

/// Lookup key: question text plus its option set, independent of order.
fn question_key(question: &str, options: &[&str]) -> String {
    let mut sorted: Vec<&str> = options.to_vec();
    sorted.sort_unstable();
    let mut key = String::from(question);
    for o in sorted {
        key.push('\u{1f}');
        key.push_str(o);
    }
    key
}

/// The target block of a rendered prompt: the text after the last `Question:`.
pub fn parse_target(prompt: &str) -> Option<(&str, Vec<&str>)> {
    let q_start = prompt.rfind("Question: ")? + "Question: ".len();
    let rest = &prompt[q_start..];
    let opt_pos = rest.find("\nOptions:\n")?;
    let question = &rest[..opt_pos];
    let body = &rest[opt_pos + "\nOptions:\n".len()..];
    let ans_pos = body.rfind("Answer:")?;
    let mut options = Vec::new();
    for (slot, line) in body[..ans_pos].lines().enumerate() {
        let prefix = format!("{}. ", letter(slot));
        options.push(line.strip_prefix(prefix.as_str())?);
    }
    Some((question, options))
}

impl SimulatorBackend {
    pub fn new(spec: SimulatorSpec, dataset: &Dataset) -> Result<Self> {
        spec.validate()?;
        let knowledge = spec.knowledge_for(dataset)?;
        let mut by_question = HashMap::with_capacity(dataset.len());
        for (s, p) in dataset.samples.iter().zip(knowledge) {
            let opts: Vec<&str> = s.options.iter().map(String::as_str).collect();
            by_question.insert(
                question_key(&s.question, &opts),
                Entry {
                    knowledge: p,
                    gold_text: s.gold_option().to_string(),
                },
            );
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&spec).expect("spec serializes"));
        h.update(dataset.content_hash());
        let fingerprint = hex::encode(&h.finalize()[..8]);
        Ok(SimulatorBackend {
            spec,
            by_question,
            fingerprint,
        })
    }

    pub fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    /// Answer distribution over slots for one rendered query.
    pub fn slot_distribution(&self, option_count: usize, gold_slot: usize, knowledge: f64) -> Vec<f64> {
        let b = if self.spec.biased_slot < option_count {
            self.spec.positional_bias
        } else {
            0.0
        };
        let wrong = (1.0 - knowledge) / (option_count - 1) as f64;
        (0..option_count)
            .map(|slot| {
                let base = if slot == gold_slot { knowledge } else { wrong };
                let bias = if slot == self.spec.biased_slot { b } else { 0.0 };
                bias + (1.0 - b) * base
            })
            .collect()
    }

    fn lookup(&self, prompt: &str) -> Result<(usize, usize, f64), BackendError> {
        let (question, options) =
            parse_target(prompt).ok_or_else(|| BackendError::fatal("simulator: cannot parse prompt"))?;
        let entry = self
            .by_question
            .get(&question_key(question, &options))
            .ok_or_else(|| BackendError::fatal("simulator: question not in dataset"))?;
        let gold_slot = options
            .iter()
            .position(|o| *o == entry.gold_text)
            .ok_or_else(|| BackendError::fatal("simulator: gold option missing from prompt"))?;
        Ok((options.len(), gold_slot, entry.knowledge))
    }
}

fn render(slot: usize, style: u32) -> String {
    match style {
        0 => letter(slot).to_string(),
        1 => format!("{}.", letter(slot)),
        _ => format!("The answer is {}", letter(slot)),
    }
}

impl ModelBackend for SimulatorBackend {
    fn identity(&self) -> String {
        format!("simulator:{}", self.fingerprint)
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<Vec<String>, BackendError> {
        let (n_opts, gold_slot, knowledge) = self.lookup(req.prompt)?;
        let dist = self.slot_distribution(n_opts, gold_slot, knowledge);

        if req.temperature == 0.0 {
            let best = dist
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc },
                )
                .0;
            return Ok(vec![render(best, 0); req.n]);
        }

        let mut h = Sha256::new();
        h.update(req.prompt.as_bytes());
        let prompt_hash = hex::encode(&h.finalize()[..8]);
        let stream = seed::derive_many(self.spec.seed, &[&prompt_hash, &req.seed.to_string()]);
        let mut rng = seed::rng(stream);
        Ok((0..req.n)
            .map(|_| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut slot = n_opts - 1;
                for (i, p) in dist.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        slot = i;
                        break;
                    }
                }
                render(slot, rng.gen_range(0..3))
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::QASample;
    use crate::diversify::{render_prompt, QueryView, DEFAULT_STYLE};
    use crate::probe::extract_answer;

    fn ds(p: f64) -> Dataset {
        let s = QASample::new("a", "Which?", vec!["w".into(), "x".into(), "y".into(), "z".into()], 2)
            .with_meta("knowledge", p.to_string());
        Dataset::from_samples(vec![s], "mem").unwrap()
    }

    #[test]
    fn parses_target_block_after_few_shot() {
        let d = ds(0.5);
        let shot = QASample::new("b", "Other?", vec!["1".into(), "2".into()], 1);
        let p = render_prompt(&QueryView::original(&d.samples[0]), &[shot], DEFAULT_STYLE).unwrap();
        let (q, opts) = parse_target(&p).unwrap();
        assert_eq!(q, "Which?");
        assert_eq!(opts, vec!["w", "x", "y", "z"]);
    }

    #[test]
    fn distribution_sums_to_one() {
        let spec = SimulatorSpec {
            positional_bias: 0.3,
            biased_slot: 1,
            ..Default::default()
        };
        let sim = SimulatorBackend::new(spec, &ds(0.4)).unwrap();
        for gold in 0..4 {
            let d = sim.slot_distribution(4, gold, 0.4);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let d = sim.slot_distribution(4, 2, 0.4);
        assert!((d[2] - 0.7 * 0.4).abs() < 1e-12);
        assert!((d[1] - (0.3 + 0.7 * 0.2)).abs() < 1e-12);
    }

    #[test]
    fn greedy_perfect_and_zero_knowledge() {
        let d1 = ds(1.0);
        let sim = SimulatorBackend::new(SimulatorSpec::default(), &d1).unwrap();
        let p = render_prompt(&QueryView::original(&d1.samples[0]), &[], DEFAULT_STYLE).unwrap();
        let req = GenerateRequest {
            prompt: &p,
            temperature: 0.0,
            n: 1,
            max_tokens: 4,
            seed: 1,
        };
        let out = sim.generate(&req).unwrap();
        assert_eq!(extract_answer(&out[0], 4), Some(2));

        let d0 = ds(0.0);
        let sim = SimulatorBackend::new(SimulatorSpec::default(), &d0).unwrap();
        let out = sim.generate(&req).unwrap();
        assert_ne!(extract_answer(&out[0], 4), Some(2));
    }

    #[test]
    fn sampled_output_is_deterministic_per_seed() {
        let d = ds(0.5);
        let sim = SimulatorBackend::new(SimulatorSpec::default(), &d).unwrap();
        let p = render_prompt(&QueryView::original(&d.samples[0]), &[], DEFAULT_STYLE).unwrap();
        let req = GenerateRequest {
            prompt: &p,
            temperature: 0.7,
            n: 20,
            max_tokens: 4,
            seed: 9,
        };
        assert_eq!(sim.generate(&req).unwrap(), sim.generate(&req).unwrap());
        let other = GenerateRequest {
            seed: 10,
            ..req.clone()
        };
        assert_ne!(sim.generate(&req).unwrap(), sim.generate(&other).unwrap());
    }

    #[test]
    fn unknown_question_is_fatal() {
        let sim = SimulatorBackend::new(SimulatorSpec::default(), &ds(0.5)).unwrap();
        let req = GenerateRequest {
            prompt: "Question: ?\nOptions:\nA. q\nB. r\nAnswer:",
            temperature: 0.7,
            n: 1,
            max_tokens: 4,
            seed: 0,
        };
        assert!(!sim.generate(&req).unwrap_err().retryable);
    }

    #[test]
    fn spec_from_toml() {
        let spec = SimulatorSpec::from_toml_str(
            "positional_bias = 0.3\nbiased_slot = 0\nseed = 4\ndefault_knowledge = 0.5\n[knowledge]\nq1 = 0.9\n",
        )
        .unwrap();
        assert_eq!(spec.knowledge["q1"], 0.9);
        assert!(SimulatorSpec::from_toml_str("positional_bias = 1.5").is_err());
        assert!(SimulatorSpec::from_toml_str("bogus = 1").is_err());
    }
}
