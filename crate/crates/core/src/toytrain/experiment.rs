//! Synthetic knowledge-conflict experiment.
//!
//! A ground-truth linear labeler generates clean data. `model0` is
//! pretrained on a small clean sample and plays the part of the model's
//! prior knowledge. Conflict enters the fine-tuning set two ways: a fraction
//! of labels is corrupted, and a half-space of the feature space (unseen in
//! pretraining) follows a second labeling rule that a single linear model
//! cannot reconcile with the first. Each training example is scored by probing `model0` under permuted class
//! orders with temperature sampling, the set is split into four conflict
//! subsets, and one model per curation policy is fine-tuned from `model0`.
//! Held-out accuracy is reported overall and on four test slices grouped the
//! same way by `model0`'s conflict with the true labels.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{argmax, train, ToyExample, ToyModel, TrainConfig};
use crate::diversify::make_permutations;
use crate::error::{Error, Result};
use crate::pool::run_ordered;
use crate::scoring::{partition, ConflictScore};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyPolicy {
    WrongOnly,
    Vanilla,
    NoConflict,
    Kaft,
    AutoAdapt,
    SelfAligning,
}

impl ToyPolicy {
    pub fn name(self) -> &'static str {
        match self {
            ToyPolicy::WrongOnly => "wrong-only",
            ToyPolicy::Vanilla => "vanilla",
            ToyPolicy::NoConflict => "no-conflict",
            ToyPolicy::Kaft => "kaft",
            ToyPolicy::AutoAdapt => "auto-adapt",
            ToyPolicy::SelfAligning => "self-aligning",
        }
    }
}

impl FromStr for ToyPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('_', "-").as_str() {
            "wrong-only" => Ok(ToyPolicy::WrongOnly),
            "vanilla" => Ok(ToyPolicy::Vanilla),
            "no-conflict" => Ok(ToyPolicy::NoConflict),
            "kaft" => Ok(ToyPolicy::Kaft),
            "auto-adapt" => Ok(ToyPolicy::AutoAdapt),
            "self-aligning" => Ok(ToyPolicy::SelfAligning),
            other => Err(Error::Config(format!("unknown toy policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// A uniformly chosen wrong label.
    Uniform,
    /// Label `c` becomes `(c + 1) mod class_count`.
    Shift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub feature_dim: usize,
    pub class_count: usize,
    pub pretrain_size: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub conflict_fraction: f64,
    pub corruption: Corruption,
    pub n_orders: usize,
    pub n_responses: usize,
    pub probe_temperature: f64,
    /// Std-dev of the perturbation between the true labeler and the one
    /// that labels `model0`'s pretraining data.
    pub prior_noise: f64,
    /// Fraction of feature space (a half-space) whose true labels follow a
    /// second linear rule; no single linear model fits both rules.
    pub novel_fraction: f64,
    pub alpha: f64,
    pub beta: f64,
    pub auto_floor: f64,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub policies: Vec<ToyPolicy>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            feature_dim: 10,
            class_count: 4,
            pretrain_size: 200,
            train_size: 2000,
            test_size: 4000,
            conflict_fraction: 0.25,
            corruption: Corruption::Shift,
            n_orders: 10,
            n_responses: 10,
            probe_temperature: 1.0,
            prior_noise: 0.0,
            novel_fraction: 0.3,
            alpha: 0.1,
            beta: 0.5,
            auto_floor: 0.01,
            pretrain: TrainConfig {
                learning_rate: 0.5,
                epochs: 5,
                batch_size: 16,
                seed: 0,
                l2: 0.0,
            },
            finetune: TrainConfig {
                learning_rate: 0.5,
                epochs: 5,
                batch_size: 16,
                seed: 0,
                l2: 0.0,
            },
            policies: vec![
                ToyPolicy::WrongOnly,
                ToyPolicy::Vanilla,
                ToyPolicy::NoConflict,
                ToyPolicy::Kaft,
            ],
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Config(format!("experiment spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("infeasible experiment: {m}")));
        if !(0.0..1.0).contains(&self.novel_fraction) {
            return bad("novel_fraction must lie in [0, 1)");
        }
        if self.prior_noise.is_nan() || self.prior_noise < 0.0 {
            return bad("prior_noise must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.conflict_fraction) {
            return bad("conflict_fraction must lie in [0, 1]");
        }
        if self.feature_dim == 0 || self.class_count < 2 {
            return bad("need feature_dim >= 1 and class_count >= 2");
        }
        if self.pretrain_size == 0 || self.train_size < 4 || self.test_size < 4 {
            return bad("need pretrain_size >= 1, train_size >= 4 and test_size >= 4");
        }
        if self.n_orders == 0
            || self.n_responses == 0
            || self.probe_temperature.is_nan()
            || self.probe_temperature < 0.0
        {
            return bad("probe needs n_orders >= 1, n_responses >= 1, temperature >= 0");
        }
        for r in [self.alpha, self.beta, self.auto_floor] {
            if !(r > 0.0 && r <= 1.0) {
                return bad("rewards must lie in (0, 1]");
            }
        }
        if self.policies.is_empty() {
            return bad("no policies selected");
        }
        self.pretrain.validate()?;
        self.finetune.validate()
    }
}

/// Probes `model` on each example under `n_orders` class orders, drawing
/// `n_responses` answers per order from the temperature softmax (argmax at
/// temperature 0); the score is the fraction that hit the example's label.
pub fn toy_conflict_scores(
    model: &ToyModel,
    data: &[ToyExample],
    n_orders: usize,
    n_responses: usize,
    temperature: f64,
    seed_value: u64,
) -> Result<Vec<f64>> {
    data.iter()
        .enumerate()
        .map(|(i, e)| {
            let item_seed = seed::derive_many(seed_value, &["toy-probe", &i.to_string()]);
            let perms = make_permutations(model.class_count, n_orders, item_seed)?;
            let mut rng = seed::rng(seed::derive(item_seed, "responses"));
            let logits = model.logits(&e.features);
            let (mut hits, mut total) = (0usize, 0usize);
            for p in &perms {
                let slot_logits: Vec<f64> = p.mapping.iter().map(|&c| logits[c]).collect();
                if temperature == 0.0 {
                    let class = p.mapping[argmax(&slot_logits)];
                    hits += n_responses * usize::from(class == e.label);
                    total += n_responses;
                    continue;
                }
                let m = slot_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = slot_logits.iter().map(|z| ((z - m) / temperature).exp()).collect();
                let sum: f64 = w.iter().sum();
                for _ in 0..n_responses {
                    let mut u = rng.gen::<f64>() * sum;
                    let mut slot = w.len() - 1;
                    for (s, ws) in w.iter().enumerate() {
                        if u < *ws {
                            slot = s;
                            break;
                        }
                        u -= ws;
                    }
                    hits += usize::from(p.mapping[slot] == e.label);
                    total += 1;
                }
            }
            Ok(hits as f64 / total as f64)
        })
        .collect()
}

fn quartiles(scores: &[f64]) -> Result<Vec<usize>> {
    let cs: Vec<ConflictScore> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| ConflictScore {
            id: i.to_string(),
            n_correct: 0,
            n_total: 0,
            score: s,
        })
        .collect();
    let p = partition(&cs, 4)?;
    Ok(p.entries.iter().map(|(_, s)| *s).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub policy: ToyPolicy,
    pub seed: u64,
    pub heldout_acc: f64,
    /// Accuracy on test slices `wrong`, `might-wrong`, `might-right`, `right`.
    pub slice_acc: [f64; 4],
}

pub const REPORT_HEADER: &str =
    "policy,seed,heldout_acc,acc_wrong_slice,acc_mightwrong_slice,acc_mightright_slice,acc_right_slice";

impl ExperimentRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.policy.name(),
            self.seed,
            self.heldout_acc,
            self.slice_acc[0],
            self.slice_acc[1],
            self.slice_acc[2],
            self.slice_acc[3]
        )
    }

    pub fn to_csv(rows: &[ExperimentRow]) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in rows {
            let _ = writeln!(out, "{}", r.csv_line());
        }
        out
    }
}

fn gaussian_point(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Linear labeler, optionally overridden by a second rule on a half-space.
struct Labeler {
    base: ToyModel,
    novel: Option<(ToyModel, Vec<f64>, f64)>,
}

impl Labeler {
    fn label(&self, x: &[f64]) -> usize {
        match &self.novel {
            Some((rule, dir, threshold)) if dot(x, dir) > *threshold => rule.predict(x),
            _ => self.base.predict(x),
        }
    }

    fn apply(&self, xs: Vec<Vec<f64>>) -> Vec<ToyExample> {
        xs.into_iter()
            .map(|x| {
                let y = self.label(&x);
                ToyExample::new(x, y, 1.0)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Everything shared by the policies of one seed.
struct Setup {
    model0: ToyModel,
    train: Vec<ToyExample>,
    train_scores: Vec<f64>,
    train_subsets: Vec<usize>,
    test: Vec<ToyExample>,
    test_subsets: Vec<usize>,
}

fn setup(spec: &ExperimentSpec, seed_value: u64) -> Result<Setup> {
    let d = spec.feature_dim;
    let c = spec.class_count;
    let base = ToyModel::random(d, c, 1.0, seed::derive(seed_value, "truth"));
    let mut rng = seed::rng(seed::derive(seed_value, "data"));
    let gen = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n).map(|_| gaussian_point(rng, d)).collect()
    };
    let pre_x = gen(spec.pretrain_size, &mut rng);
    let train_x = gen(spec.train_size, &mut rng);
    let test_x = gen(spec.test_size, &mut rng);

    let novel = (spec.novel_fraction > 0.0).then(|| {
        let rule = ToyModel::random(d, c, 1.0, seed::derive(seed_value, "novel-rule"));
        let mut dir = gaussian_point(&mut seed::rng(seed::derive(seed_value, "novel-dir")), d);
        let norm = dot(&dir, &dir).sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        // empirical quantile of the projections over every generated point
        let mut proj: Vec<f64> = pre_x
            .iter()
            .chain(&train_x)
            .chain(&test_x)
            .map(|x| dot(x, &dir))
            .collect();
        proj.sort_by(f64::total_cmp);
        let cut = ((1.0 - spec.novel_fraction) * proj.len() as f64) as usize;
        let threshold = proj[cut.min(proj.len() - 1)];
        (rule, dir, threshold)
    });
    let truth = Labeler {
        base: base.clone(),
        novel,
    };

    let mut prior_base = base;
    if spec.prior_noise > 0.0 {
        let noise = ToyModel::random(d, c, spec.prior_noise, seed::derive(seed_value, "prior"));
        for (p, n) in prior_base.params_mut().zip(noise.params()) {
            *p += n;
        }
    }
    let prior = Labeler {
        base: prior_base,
        novel: None,
    };
    let pretrain = prior.apply(pre_x);
    let mut train_set = truth.apply(train_x);
    let test = truth.apply(test_x);

    let n_conflict = (spec.conflict_fraction * spec.train_size as f64).round() as usize;
    let corrupt = rand::seq::index::sample(&mut rng, spec.train_size, n_conflict);
    for i in corrupt {
        let y = train_set[i].label;
        train_set[i].label = match spec.corruption {
            Corruption::Shift => (y + 1) % c,
            Corruption::Uniform => (y + rng.gen_range(1..c)) % c,
        };
    }

    let pre_cfg = TrainConfig {
        seed: seed::derive(seed_value, "pretrain"),
        ..spec.pretrain.clone()
    };
    let model0 = train(&ToyModel::zeros(d, c), &pretrain, &pre_cfg)?;

    let probe_seed = seed::derive(seed_value, "probe");
    let train_scores = toy_conflict_scores(
        &model0,
        &train_set,
        spec.n_orders,
        spec.n_responses,
        spec.probe_temperature,
        probe_seed,
    )?;
    let test_scores = toy_conflict_scores(
        &model0,
        &test,
        spec.n_orders,
        spec.n_responses,
        spec.probe_temperature,
        seed::derive(probe_seed, "test"),
    )?;
    Ok(Setup {
        train_subsets: quartiles(&train_scores)?,
        test_subsets: quartiles(&test_scores)?,
        model0,
        train: train_set,
        train_scores,
        test,
    })
}

fn policy_data(spec: &ExperimentSpec, s: &Setup, policy: ToyPolicy) -> Vec<ToyExample> {
    let with = |e: &ToyExample, reward: f64| ToyExample { reward, ..e.clone() };
    let items = s.train.iter().zip(&s.train_subsets).zip(&s.train_scores);
    match policy {
        ToyPolicy::Vanilla => s.train.clone(),
        ToyPolicy::WrongOnly => items
            .filter(|((_, &k), _)| k == 0)
            .map(|((e, _), _)| e.clone())
            .collect(),
        ToyPolicy::NoConflict => items
            .filter(|((_, &k), _)| k != 0)
            .map(|((e, _), _)| e.clone())
            .collect(),
        ToyPolicy::Kaft => {
            let table = [spec.alpha, spec.beta, 1.0, 1.0];
            items.map(|((e, &k), _)| with(e, table[k])).collect()
        }
        ToyPolicy::AutoAdapt => items.map(|((e, _), &sc)| with(e, sc.max(spec.auto_floor))).collect(),
        ToyPolicy::SelfAligning => items
            .map(|((e, &k), _)| {
                let mut e = e.clone();
                if k == 0 {
                    e.label = s.model0.predict(&e.features);
                }
                e
            })
            .collect(),
    }
}

fn slice_accuracy(model: &ToyModel, s: &Setup) -> [f64; 4] {
    let mut hits = [0usize; 4];
    let mut n = [0usize; 4];
    for (e, &k) in s.test.iter().zip(&s.test_subsets) {
        n[k] += 1;
        hits[k] += usize::from(model.predict(&e.features) == e.label);
    }
    std::array::from_fn(|k| if n[k] == 0 { 0.0 } else { hits[k] as f64 / n[k] as f64 })
}

/// One seed of the experiment; rows follow `spec.policies` order.
pub fn run_experiment(spec: &ExperimentSpec, seed_value: u64) -> Result<Vec<ExperimentRow>> {
    spec.validate()?;
    let s = setup(spec, seed_value)?;
    let ft = TrainConfig {
        seed: seed::derive(seed_value, "finetune"),
        ..spec.finetune.clone()
    };
    spec.policies
        .iter()
        .map(|&policy| {
            let data = policy_data(spec, &s, policy);
            let model = train(&s.model0, &data, &ft)?;
            Ok(ExperimentRow {
                policy,
                seed: seed_value,
                heldout_acc: model.accuracy(&s.test),
                slice_acc: slice_accuracy(&model, &s),
            })
        })
        .collect()
}

/// Runs seeds in parallel; rows come back in seed order.
pub fn run_experiment_seeds(spec: &ExperimentSpec, seeds: &[u64], workers: usize) -> Result<Vec<ExperimentRow>> {
    let mut rows = Vec::new();
    let mut first_err = None;
    run_ordered(
        seeds.len(),
        workers,
        |i| run_experiment(spec, seeds[i]),
        |_, r| match r {
            Ok(mut v) => rows.append(&mut v),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        },
    );
    match first_err {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySummary {
    pub policy: ToyPolicy,
    pub runs: usize,
    pub heldout_acc: f64,
    pub slice_acc: [f64; 4],
}

/// Mean accuracies per policy, in first-appearance order.
pub fn summarize(rows: &[ExperimentRow]) -> Vec<PolicySummary> {
    let mut out: Vec<PolicySummary> = Vec::new();
    for r in rows {
        let entry = match out.iter_mut().position(|p| p.policy == r.policy) {
            Some(i) => &mut out[i],
            None => {
                out.push(PolicySummary {
                    policy: r.policy,
                    runs: 0,
                    heldout_acc: 0.0,
                    slice_acc: [0.0; 4],
                });
                out.last_mut().unwrap()
            }
        };
        entry.runs += 1;
        entry.heldout_acc += r.heldout_acc;
        for k in 0..4 {
            entry.slice_acc[k] += r.slice_acc[k];
        }
    }
    for p in &mut out {
        let n = p.runs as f64;
        p.heldout_acc /= n;
        p.slice_acc.iter_mut().for_each(|a| *a /= n);
    }
    out
}
