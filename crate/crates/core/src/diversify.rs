//! Option-order diversification and ICL probe prompt rendering.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, QASample, MAX_OPTIONS};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_STYLE: &str = "icl-mc-v1";

/// `mapping[slot]` is the source option index shown at `slot`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Permutation {
    pub mapping: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            mapping: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.mapping.len()];
        self.mapping
            .iter()
            .all(|&m| m < seen.len() && !std::mem::replace(&mut seen[m], true))
    }

    /// Slot holding source index `source`.
    pub fn slot_of(&self, source: usize) -> Option<usize> {
        self.mapping.iter().position(|&m| m == source)
    }

    pub fn apply<'a, T>(&self, items: &'a [T]) -> Vec<&'a T> {
        self.mapping.iter().map(|&m| &items[m]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub n_orders: usize,
    pub n_responses: usize,
    pub temperature: f64,
    pub few_shot_k: usize,
    pub seed: u64,
    pub max_tokens: u32,
    pub prompt_style: String,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            n_orders: 10,
            n_responses: 10,
            temperature: 0.7,
            few_shot_k: 3,
            seed: 0,
            max_tokens: 16,
            prompt_style: DEFAULT_STYLE.to_string(),
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_orders == 0 || self.n_responses == 0 {
            return Err(Error::Config("n_orders and n_responses must be >= 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        prompt_style(&self.prompt_style)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversifiedQuery {
    pub sample_id: String,
    pub variant_index: usize,
    pub permutation: Permutation,
    pub remapped_answer_index: usize,
    pub prompt: String,
}

fn factorial_capped(n: usize, cap: usize) -> usize {
    let mut acc: usize = 1;
    for i in 2..=n {
        acc = acc.saturating_mul(i);
        if acc >= cap {
            return cap;
        }
    }
    acc
}

// Lexicographic enumeration is used while n! stays small enough to list.
const ENUMERATE_LIMIT: usize = 7;

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Identity first, then up to `n_orders - 1` distinct non-identity orders
/// drawn uniformly without replacement.
pub fn make_permutations(option_count: usize, n_orders: usize, seed: u64) -> Result<Vec<Permutation>> {
    if option_count < 2 {
        return Err(Error::invalid(format!(
            "cannot permute {option_count} option(s); need at least 2"
        )));
    }
    if n_orders == 0 {
        return Err(Error::invalid("n_orders must be >= 1"));
    }
    let total = factorial_capped(option_count, usize::MAX);
    let count = n_orders.min(total);
    let mut rng = seed::rng(seed);
    let mut out = vec![Permutation::identity(option_count)];

    if option_count <= ENUMERATE_LIMIT {
        // index 0 of the lexicographic listing is the identity
        let listing = all_permutations(option_count);
        let picks = index::sample(&mut rng, listing.len() - 1, count - 1);
        out.extend(picks.into_iter().map(|i| Permutation {
            mapping: listing[i + 1].clone(),
        }));
    } else {
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        seen.insert(out[0].mapping.clone());
        while out.len() < count {
            let mut m: Vec<usize> = (0..option_count).collect();
            m.shuffle(&mut rng);
            if seen.insert(m.clone()) {
                out.push(Permutation { mapping: m });
            }
        }
    }
    Ok(out)
}

pub fn letter(slot: usize) -> char {
    debug_assert!(slot < MAX_OPTIONS);
    (b'A' + slot as u8) as char
}

/// What a prompt template sees of one question.
#[derive(Debug, Clone)]
pub struct QueryView<'a> {
    pub question: &'a str,
    pub options: Vec<&'a str>,
    pub domain: Option<&'a str>,
}

impl<'a> QueryView<'a> {
    pub fn original(sample: &'a QASample) -> Self {
        QueryView {
            question: &sample.question,
            options: sample.options.iter().map(String::as_str).collect(),
            domain: sample.meta_value("domain"),
        }
    }

    pub fn permuted(sample: &'a QASample, perm: &Permutation) -> Self {
        QueryView {
            question: &sample.question,
            options: perm.apply(&sample.options).into_iter().map(String::as_str).collect(),
            domain: sample.meta_value("domain"),
        }
    }
}

/// A registered prompt layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptStyle {
    pub id: &'static str,
    instruction: bool,
}

const STYLES: &[PromptStyle] = &[
    // Instruction line, Question, Options, Answer cue.
    PromptStyle {
        id: "icl-mc-v1",
        instruction: true,
    },
    // Same blocks without the instruction line.
    PromptStyle {
        id: "bare-mc-v1",
        instruction: false,
    },
];

pub fn prompt_style(id: &str) -> Result<PromptStyle> {
    STYLES
        .iter()
        .copied()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::Config(format!("unknown prompt style {id:?}")))
}

pub fn registered_styles() -> impl Iterator<Item = &'static str> {
    STYLES.iter().map(|s| s.id)
}

impl PromptStyle {
    fn render_block(&self, out: &mut String, view: &QueryView<'_>, answer: Option<usize>) {
        let last = letter(view.options.len() - 1);
        if self.instruction {
            match view.domain {
                Some(d) if !d.is_empty() => out.push_str(&format!("For the following {d} question")),
                _ => out.push_str("For the following question"),
            }
            out.push_str(&format!(", select one correct answer from A to {last}.\n"));
        }
        out.push_str("Question: ");
        out.push_str(view.question);
        out.push_str("\nOptions:\n");
        for (slot, opt) in view.options.iter().enumerate() {
            out.push(letter(slot));
            out.push_str(". ");
            out.push_str(opt);
            out.push('\n');
        }
        out.push_str("Answer:");
        if let Some(a) = answer {
            out.push(' ');
            out.push(letter(a));
        }
    }
}

/// Few-shot examples are rendered in their original order with their gold
/// letter, followed by the target block ending in a bare `Answer:` cue.
pub fn render_prompt(target: &QueryView<'_>, few_shot: &[QASample], style: &str) -> Result<String> {
    let style = prompt_style(style)?;
    let mut out = String::new();
    for ex in few_shot {
        style.render_block(&mut out, &QueryView::original(ex), Some(ex.answer_index));
        out.push_str("\n\n");
    }
    style.render_block(&mut out, target, None);
    Ok(out)
}

pub fn diversify_sample(
    sample: &QASample,
    config: &ProbeConfig,
    few_shot: &[QASample],
) -> Result<Vec<DiversifiedQuery>> {
    if few_shot.iter().any(|f| f.id == sample.id) {
        return Err(Error::invalid(format!(
            "few-shot examples contain the target sample {:?}",
            sample.id
        )));
    }
    let perm_seed = seed::derive_many(config.seed, &["permutations", &sample.id]);
    let perms = make_permutations(sample.options.len(), config.n_orders, perm_seed)?;
    perms
        .into_iter()
        .enumerate()
        .map(|(variant_index, permutation)| {
            let remapped_answer_index = permutation
                .slot_of(sample.answer_index)
                .expect("permutation is a bijection");
            let prompt = render_prompt(
                &QueryView::permuted(sample, &permutation),
                few_shot,
                &config.prompt_style,
            )?;
            Ok(DiversifiedQuery {
                sample_id: sample.id.clone(),
                variant_index,
                permutation,
                remapped_answer_index,
                prompt,
            })
        })
        .collect()
}

/// A fixed, seeded draw of few-shot candidates shared by every target in a run.
#[derive(Debug, Clone)]
pub struct FewShotPool {
    k: usize,
    candidates: Vec<QASample>,
}

impl FewShotPool {
    pub fn new(dataset: &Dataset, k: usize, seed: u64) -> Self {
        let n = dataset.len();
        let take = (k + 1).min(n);
        let mut rng = seed::rng(seed::derive(seed, "few-shot"));
        let candidates = index::sample(&mut rng, n, take)
            .into_iter()
            .map(|i| dataset.samples[i].clone())
            .collect();
        FewShotPool { k, candidates }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn for_target(&self, exclude_id: &str) -> Result<Vec<QASample>> {
        let picked: Vec<QASample> = self
            .candidates
            .iter()
            .filter(|s| s.id != exclude_id)
            .take(self.k)
            .cloned()
            .collect();
        if picked.len() < self.k {
            return Err(Error::invalid(format!(
                "need {} few-shot examples excluding {exclude_id:?}, dataset has only {}",
                self.k,
                picked.len()
            )));
        }
        Ok(picked)
    }
}

pub fn pick_few_shot(dataset: &Dataset, k: usize, seed: u64, exclude_id: &str) -> Result<Vec<QASample>> {
    FewShotPool::new(dataset, k, seed).for_target(exclude_id)
}
