//! Per-sample rewards and baseline training sets.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_jsonl, write_jsonl, Dataset, QASample};
use crate::diversify::{letter, render_prompt, QueryView, DEFAULT_STYLE};
use crate::error::{Error, Result};
use crate::probe::ProbeResult;
use crate::scoring::{ConflictScore, PartitionedDataset};
use crate::seed;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 0.5;
pub const DEFAULT_AUTO_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardPolicy {
    /// `alpha` on `wrong`, `beta` on `might-wrong`, 1 on the upper half.
    Kaft {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    /// The conflict score itself, floored so nothing drops out entirely.
    AutoAdapt {
        #[serde(default = "default_floor")]
        floor: f64,
    },
    /// One reward per subset, ascending subset order.
    KSubsets { rewards: Vec<f64> },
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn one() -> f64 {
    1.0
}
fn default_floor() -> f64 {
    DEFAULT_AUTO_FLOOR
}

impl Default for RewardPolicy {
    fn default() -> Self {
        RewardPolicy::kaft()
    }
}

fn check_reward(name: &str, r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1], got {r}")))
    }
}

impl RewardPolicy {
    pub fn kaft() -> Self {
        RewardPolicy::Kaft {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RewardPolicy::Kaft { alpha, beta } => {
                check_reward("alpha", *alpha)?;
                check_reward("beta", *beta)
            }
            RewardPolicy::Constant { value } => check_reward("value", *value),
            RewardPolicy::AutoAdapt { floor } => check_reward("floor", *floor),
            RewardPolicy::KSubsets { rewards } => {
                if rewards.is_empty() {
                    return Err(Error::Config("k_subsets needs at least one reward".into()));
                }
                rewards.iter().try_for_each(|r| check_reward("subset reward", *r))
            }
        }
    }

    /// Reward table indexed by subset, for policies that depend only on subset.
    pub fn subset_rewards(&self, k: usize) -> Result<Option<Vec<f64>>> {
        match self {
            RewardPolicy::Kaft { alpha, beta } => {
                if k != 4 {
                    return Err(Error::invalid(format!(
                        "kaft rewards need a 4-way partition, got k = {k}"
                    )));
                }
                Ok(Some(vec![*alpha, *beta, 1.0, 1.0]))
            }
            RewardPolicy::Constant { value } => Ok(Some(vec![*value; k])),
            RewardPolicy::KSubsets { rewards } => {
                if rewards.len() != k {
                    return Err(Error::invalid(format!(
                        "k_subsets has {} rewards for a {k}-way partition",
                        rewards.len()
                    )));
                }
                Ok(Some(rewards.clone()))
            }
            RewardPolicy::AutoAdapt { .. } => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardedSample {
    #[serde(flatten)]
    pub sample: QASample,
    pub subset: usize,
    pub reward: f64,
}

pub fn assign_rewards(
    dataset: &Dataset,
    partition: &PartitionedDataset,
    scores: &[ConflictScore],
    policy: &RewardPolicy,
) -> Result<Vec<RewardedSample>> {
    policy.validate()?;
    let table = policy.subset_rewards(partition.k)?;
    let by_id: HashMap<&str, f64> = scores.iter().map(|s| (s.id.as_str(), s.score)).collect();
    dataset
        .samples
        .iter()
        .map(|s| {
            let subset = partition
                .subset_of(&s.id)
                .ok_or_else(|| Error::invalid(format!("sample {:?} missing from partition", s.id)))?;
            let reward = match (&table, policy) {
                (Some(t), _) => t[subset],
                (None, RewardPolicy::AutoAdapt { floor }) => {
                    let score = by_id
                        .get(s.id.as_str())
                        .ok_or_else(|| Error::invalid(format!("no conflict score for sample {:?}", s.id)))?;
                    score.max(*floor)
                }
                (None, _) => unreachable!("only auto_adapt lacks a subset table"),
            };
            Ok(RewardedSample {
                sample: s.clone(),
                subset,
                reward,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Vanilla,
    NoConflict,
    SelfAligning,
    /// Reward-weighted full set under a [`RewardPolicy`].
    Kaft,
    /// Upper subsets plus a fraction `lambda` of `wrong`.
    WrongMix,
}

impl std::str::FromStr for Baseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "vanilla" => Ok(Baseline::Vanilla),
            "no_conflict" => Ok(Baseline::NoConflict),
            "self_aligning" => Ok(Baseline::SelfAligning),
            "kaft" => Ok(Baseline::Kaft),
            "wrong_mix" => Ok(Baseline::WrongMix),
            other => Err(Error::Config(format!("unknown baseline {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub baseline: Baseline,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
}

impl CurationConfig {
    pub fn new(baseline: Baseline) -> Self {
        CurationConfig {
            baseline,
            lambda: 0.0,
            seed: 0,
        }
    }
}

/// Greedy answers by sample id: `Some(None)` means the probe ran but its
/// answer was unparseable.
pub fn greedy_answers(results: &[ProbeResult]) -> HashMap<String, Option<usize>> {
    results
        .iter()
        .filter_map(|r| r.greedy.as_ref().map(|g| (r.sample_id.clone(), g.extracted_index)))
        .collect()
}

const WRONG: usize = 0;

pub fn build_baseline(
    dataset: &Dataset,
    partition: &PartitionedDataset,
    scores: &[ConflictScore],
    greedy: &HashMap<String, Option<usize>>,
    config: &CurationConfig,
    policy: &RewardPolicy,
) -> Result<Vec<RewardedSample>> {
    let unit = RewardPolicy::Constant { value: 1.0 };
    let all = |p: &RewardPolicy| assign_rewards(dataset, partition, scores, p);
    match config.baseline {
        Baseline::Vanilla => all(&unit),
        Baseline::Kaft => all(policy),
        Baseline::NoConflict => Ok(all(&unit)?.into_iter().filter(|r| r.subset != WRONG).collect()),
        Baseline::SelfAligning => {
            let mut out = all(&unit)?;
            let missing: Vec<&str> = out
                .iter()
                .filter(|r| r.subset == WRONG && !greedy.contains_key(&r.sample.id))
                .map(|r| r.sample.id.as_str())
                .collect();
            if !missing.is_empty() {
                return Err(Error::invalid(format!(
                    "missing greedy probe for wrong-subset samples: {}",
                    missing.join(", ")
                )));
            }
            for r in out.iter_mut().filter(|r| r.subset == WRONG) {
                if let Some(Some(idx)) = greedy.get(&r.sample.id) {
                    if *idx < r.sample.options.len() {
                        r.sample.answer_index = *idx;
                    }
                }
            }
            Ok(out)
        }
        Baseline::WrongMix => {
            if partition.k != 4 {
                return Err(Error::invalid(format!(
                    "wrong_mix needs a 4-way partition, got k = {}",
                    partition.k
                )));
            }
            if !(0.0..=1.0).contains(&config.lambda) {
                return Err(Error::Config(format!(
                    "lambda must lie in [0, 1], got {}",
                    config.lambda
                )));
            }
            let out = all(&unit)?;
            let wrong: Vec<usize> = (0..out.len()).filter(|&i| out[i].subset == WRONG).collect();
            let keep_n = (config.lambda * wrong.len() as f64).round() as usize;
            let mut rng = seed::rng(seed::derive(config.seed, "wrong-mix"));
            let kept: HashSet<usize> = index::sample(&mut rng, wrong.len(), keep_n)
                .into_iter()
                .map(|j| wrong[j])
                .collect();
            Ok(out
                .into_iter()
                .enumerate()
                .filter(|(i, r)| r.subset != WRONG || kept.contains(i))
                .map(|(_, r)| r)
                .collect())
        }
    }
}

pub const WEIGHTED_JSONL: &str = "weighted-jsonl-v1";
pub const PROMPT_COMPLETION: &str = "prompt-completion-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PromptCompletion {
    prompt: String,
    completion: String,
    reward: f64,
}

pub fn export_weighted(samples: &[RewardedSample], path: impl AsRef<Path>, format: &str) -> Result<()> {
    match format {
        WEIGHTED_JSONL => write_jsonl(path, samples),
        PROMPT_COMPLETION => {
            let rows = samples
                .iter()
                .map(|r| {
                    Ok(PromptCompletion {
                        prompt: render_prompt(&QueryView::original(&r.sample), &[], DEFAULT_STYLE)?,
                        completion: format!(" {}", letter(r.sample.answer_index)),
                        reward: r.reward,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_jsonl(path, &rows)
        }
        other => Err(Error::Config(format!("unknown export format {other:?}"))),
    }
}

pub fn load_weighted(path: impl AsRef<Path>) -> Result<Vec<RewardedSample>> {
    read_jsonl(path)
}
