//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so the table always prints:
//! `cargo test --test acceptance`.

use std::collections::HashSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kaft::curation::{assign_rewards, build_baseline, Baseline, CurationConfig, RewardPolicy};
use kaft::diversify::{make_permutations, ProbeConfig};
use kaft::probe::{
    knowledge_correlation, CountingBackend, DetectionVariant, ProbeCache, ProbeResult, ProbedResponse, Prober,
    SimulatorBackend, SimulatorSpec, VariantResponses,
};
use kaft::scoring::{compute_scores, partition, ConflictScore, QUARTILE_LABELS};
use kaft::synth::{synthetic_dataset, SynthSpec};
use kaft::toytrain::{
    grad, run_experiment_seeds, summarize, train, weighted_loss, ExperimentSpec, ToyExample, ToyModel, ToyPolicy,
    TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> Outcome;

fn main() {
    let checks: [(&str, Duration, Check); 10] = [
        (
            "1 score formula vs brute-force recount",
            Duration::from_secs(1),
            score_formula,
        ),
        (
            "2 rank partition properties",
            Duration::from_secs(5),
            partition_properties,
        ),
        ("3 reward mapping", Duration::from_secs(5), reward_mapping),
        (
            "4 gradient vs finite differences",
            Duration::from_secs(10),
            gradient_check,
        ),
        ("5 zero-weight deletion", Duration::from_secs(30), zero_weight_deletion),
        ("6 detection ablation", Duration::from_secs(120), detection_ablation),
        ("7 toy findings ordering", Duration::from_secs(300), toy_findings),
        ("8 wrong_mix endpoints", Duration::from_secs(5), wrong_mix_endpoints),
        ("9 pipeline determinism", Duration::from_secs(120), pipeline_determinism),
        ("10 cache idempotence", Duration::from_secs(30), cache_idempotence),
    ];
    let mut failed = 0;
    for (name, budget, check) in checks {
        let t = Instant::now();
        let o = check();
        let took = t.elapsed();
        let within = took <= budget;
        let pass = o.pass && within;
        if !pass {
            failed += 1;
        }
        let time_note = if within {
            String::new()
        } else {
            format!(" (over budget {budget:?})")
        };
        println!(
            "[{}] {name}: {} [{:.2?}{time_note}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took
        );
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn score_formula() -> Outcome {
    let mut r = rng(1);
    for case in 0..200 {
        let n_opts = r.gen_range(2..=7);
        let gold = r.gen_range(0..n_opts);
        let n_orders = r.gen_range(1..=10);
        let n_resp = r.gen_range(1..=10);
        let perms = make_permutations(n_opts, n_orders, r.gen()).unwrap();
        let mut expected_hits = 0usize;
        let mut variants = Vec::new();
        for (v, perm) in perms.iter().enumerate() {
            let gold_slot = perm.mapping.iter().position(|&src| src == gold).unwrap();
            let mut responses = Vec::new();
            for _ in 0..n_resp {
                // pick the intended slot (or none) first, then a surface form
                let intended = if r.gen_bool(0.15) {
                    None
                } else {
                    Some(r.gen_range(0..n_opts))
                };
                let raw = match intended {
                    None => ["I am not sure.", "", "none of these", "answer: maybe"][r.gen_range(0..4)].to_string(),
                    Some(s) => {
                        let l = (b'A' + s as u8) as char;
                        match r.gen_range(0..4) {
                            0 => l.to_string(),
                            1 => format!("{l}."),
                            2 => format!("The answer is {l}"),
                            _ => format!("Answer: {l}"),
                        }
                    }
                };
                if intended == Some(gold_slot) {
                    expected_hits += 1;
                }
                responses.push(ProbedResponse::parse(raw, n_opts, gold_slot));
            }
            variants.push(VariantResponses {
                variant_index: v,
                permutation: perm.clone(),
                remapped_answer_index: gold_slot,
                responses,
            });
        }
        let result = ProbeResult {
            sample_id: format!("s{case}"),
            option_count: n_opts,
            config_fingerprint: "fixture".into(),
            variants,
            greedy: None,
        };
        let s = &compute_scores(&[result]).unwrap()[0];
        let total = n_orders.min(perms.len()) * n_resp;
        let expected = expected_hits as f64 / total as f64;
        if s.n_correct != expected_hits || s.n_total != total || s.score != expected {
            return outcome(
                false,
                format!(
                    "case {case}: got {}/{} want {expected_hits}/{total}",
                    s.n_correct, s.n_total
                ),
            );
        }
    }
    outcome(true, "200 fixtures match exactly")
}

fn random_scores(r: &mut ChaCha8Rng, n: usize) -> Vec<ConflictScore> {
    (0..n)
        .map(|i| {
            let total = 100;
            // coarse grid so ties are common
            ConflictScore::new(format!("s{i}"), r.gen_range(0..=20) * 5, total)
        })
        .collect()
}

fn partition_properties() -> Outcome {
    let mut r = rng(2);
    for trial in 0..60 {
        let n = r.gen_range(10..=5000);
        let k = [2, 4, 8][trial % 3];
        let scores = random_scores(&mut r, n);
        let p = partition(&scores, k).unwrap();
        let sizes = p.sizes();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        if hi - lo > 1 || sizes.iter().sum::<usize>() != n {
            return outcome(false, format!("N={n} k={k}: sizes {sizes:?}"));
        }
        let by_id: std::collections::HashMap<&str, f64> = scores.iter().map(|s| (s.id.as_str(), s.score)).collect();
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); k];
        for (id, sub) in &p.entries {
            let v = by_id[id.as_str()];
            ranges[*sub].0 = ranges[*sub].0.min(v);
            ranges[*sub].1 = ranges[*sub].1.max(v);
        }
        if ranges.windows(2).any(|w| w[0].1 > w[1].0) {
            return outcome(false, format!("N={n} k={k}: subsets not monotone"));
        }
        if k == 4 {
            let labels: Vec<String> = (0..4).map(|i| kaft::scoring::subset_label(4, i)).collect();
            if labels != QUARTILE_LABELS {
                return outcome(false, format!("labels {labels:?}"));
            }
            let lowest = scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
            if ranges[0].0 != lowest {
                return outcome(false, "wrong subset does not hold the lowest score");
            }
        }
    }
    outcome(true, "60 random (N, k) cases: balanced, monotone, wrong->right labels")
}

fn scored_dataset(n: usize, seed: u64) -> (kaft::dataset::Dataset, Vec<ConflictScore>) {
    let d = synthetic_dataset(&SynthSpec {
        n_samples: n,
        seed,
        ..Default::default()
    })
    .unwrap();
    let mut r = rng(seed);
    let scores = d
        .samples
        .iter()
        .map(|s| ConflictScore::new(s.id.clone(), r.gen_range(0..=100), 100))
        .collect();
    (d, scores)
}

fn reward_mapping() -> Outcome {
    let (d, scores) = scored_dataset(203, 3);
    let p = partition(&scores, 4).unwrap();
    let kaft = assign_rewards(&d, &p, &scores, &RewardPolicy::kaft()).unwrap();
    let table = [0.1, 0.5, 1.0, 1.0];
    if let Some(bad) = kaft.iter().find(|r| r.reward != table[r.subset]) {
        return outcome(false, format!("kaft gave {} to subset {}", bad.reward, bad.subset));
    }
    let constant = assign_rewards(&d, &p, &scores, &RewardPolicy::Constant { value: 1.0 }).unwrap();
    if constant.iter().any(|r| r.reward != 1.0) {
        return outcome(false, "constant policy is not 1.0 everywhere");
    }
    let auto = assign_rewards(&d, &p, &scores, &RewardPolicy::AutoAdapt { floor: 0.01 }).unwrap();
    for (r, s) in auto.iter().zip(&scores) {
        if r.reward != s.score.max(0.01) {
            return outcome(false, format!("auto_adapt gave {} for score {}", r.reward, s.score));
        }
    }
    outcome(
        true,
        "kaft {0.1,0.5,1,1}, constant 1, auto_adapt = score (floor 0.01) exactly",
    )
}

fn gradient_check() -> Outcome {
    let mut r = rng(4);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = r.gen_range(1..=6);
        let c = r.gen_range(2..=6);
        let mut m = ToyModel::random(d, c, 0.7, r.gen());
        let l2 = if r.gen_bool(0.5) { 0.0 } else { 0.1 };
        let batch: Vec<ToyExample> = (0..r.gen_range(1..=8))
            .map(|_| {
                ToyExample::new(
                    (0..d).map(|_| r.gen_range(-2.0..2.0)).collect(),
                    r.gen_range(0..c),
                    r.gen_range(0.05..1.0),
                )
            })
            .collect();
        let g = grad(&m, &batch, l2).unwrap();
        let analytic: Vec<f64> = g.params().copied().collect();
        for (i, a) in analytic.into_iter().enumerate() {
            let orig = *m.params().nth(i).unwrap();
            *m.params_mut().nth(i).unwrap() = orig + h;
            let up = weighted_loss(&m, &batch, l2).unwrap();
            *m.params_mut().nth(i).unwrap() = orig - h;
            let down = weighted_loss(&m, &batch, l2).unwrap();
            *m.params_mut().nth(i).unwrap() = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    outcome(
        worst <= 1e-5,
        format!("max relative error {worst:.2e} over 50 instances (tolerance 1e-5)"),
    )
}

fn zero_weight_deletion() -> Outcome {
    let mut r = rng(5);
    let (d, c) = (3, 3);
    // random labels: no linear separator, so the optimum is finite
    let keep: Vec<ToyExample> = (0..150)
        .map(|_| ToyExample::new((0..d).map(|_| r.gen_range(-1.0..1.0)).collect(), r.gen_range(0..c), 1.0))
        .collect();
    let designated: Vec<ToyExample> = (0..50)
        .map(|_| {
            ToyExample::new(
                (0..d).map(|_| r.gen_range(-1.0..1.0)).collect(),
                r.gen_range(0..c),
                1e-8,
            )
        })
        .collect();
    let all: Vec<ToyExample> = keep.iter().chain(&designated).cloned().collect();
    let cfg = |n: usize| TrainConfig {
        learning_rate: 2.0,
        epochs: 4_000,
        batch_size: n,
        seed: 11,
        l2: 0.0,
    };
    let m0 = ToyModel::zeros(d, c);
    let with_tiny = train(&m0, &all, &cfg(all.len())).unwrap();
    let removed = train(&m0, &keep, &cfg(keep.len())).unwrap();
    let dist = with_tiny.distance(&removed);
    outcome(dist <= 1e-4, format!("parameter distance {dist:.2e} (tolerance 1e-4)"))
}

fn detection_ablation() -> Outcome {
    let mut sums = [0.0; 4];
    let seeds = 5;
    for seed in 0..seeds {
        let dataset = synthetic_dataset(&SynthSpec {
            n_samples: 500,
            seed,
            ..Default::default()
        })
        .unwrap();
        let spec = SimulatorSpec {
            positional_bias: 0.3,
            seed,
            ..Default::default()
        };
        let truth = spec.knowledge_for(&dataset).unwrap();
        let sim = SimulatorBackend::new(spec, &dataset).unwrap();
        let base = ProbeConfig {
            seed,
            ..Default::default()
        };
        for (i, v) in DetectionVariant::ALL.iter().enumerate() {
            sums[i] += knowledge_correlation(&dataset, &sim, &v.apply(&base), &truth, 8).unwrap();
        }
    }
    let m: Vec<f64> = sums.iter().map(|s| s / seeds as f64).collect();
    let (d1, d2) = (m[0] - m[1], m[0] - m[3]);
    outcome(
        d1 >= 0.1 && d2 >= 0.2,
        format!(
            "spearman full {:.3}, w/o diverse query {:.3} (gap {d1:.3} >= 0.1), w/o sampling {:.3}, w/o both {:.3} (gap {d2:.3} >= 0.2)",
            m[0], m[1], m[2], m[3]
        ),
    )
}

fn toy_findings() -> Outcome {
    let spec = ExperimentSpec {
        policies: vec![ToyPolicy::WrongOnly, ToyPolicy::Vanilla, ToyPolicy::Kaft],
        ..ExperimentSpec::default()
    };
    if spec.conflict_fraction != 0.25 {
        return outcome(false, "default conflict fraction is not 0.25");
    }
    let rows = run_experiment_seeds(&spec, &[0, 1, 2, 3, 4], 4).unwrap();
    let s = summarize(&rows);
    let get = |p: ToyPolicy| s.iter().find(|x| x.policy == p).unwrap();
    let (w, v, k) = (get(ToyPolicy::WrongOnly), get(ToyPolicy::Vanilla), get(ToyPolicy::Kaft));
    let ordering = k.heldout_acc >= v.heldout_acc + 0.02 && v.heldout_acc >= w.heldout_acc + 0.02;
    let diagonal = w.slice_acc[0] > v.slice_acc[0] && w.slice_acc[3] < v.slice_acc[3];
    outcome(
        ordering && diagonal,
        format!(
            "held-out kaft {:.3} / vanilla {:.3} / wrong-only {:.3}; wrong slice wrong-only {:.3} vs vanilla {:.3}; right slice {:.3} vs {:.3}",
            k.heldout_acc, v.heldout_acc, w.heldout_acc, w.slice_acc[0], v.slice_acc[0], w.slice_acc[3], v.slice_acc[3]
        ),
    )
}

fn wrong_mix_endpoints() -> Outcome {
    let (d, scores) = scored_dataset(1001, 8);
    let p = partition(&scores, 4).unwrap();
    let none = Default::default();
    let policy = RewardPolicy::kaft();
    let ids = |baseline: Baseline, lambda: f64| -> HashSet<String> {
        let cfg = CurationConfig {
            baseline,
            lambda,
            seed: 42,
        };
        build_baseline(&d, &p, &scores, &none, &cfg, &policy)
            .unwrap()
            .into_iter()
            .map(|r| r.sample.id)
            .collect()
    };
    let n = d.len();
    let wrong = p.sizes()[0];
    let at0 = ids(Baseline::WrongMix, 0.0) == ids(Baseline::NoConflict, 0.0);
    let at1 = ids(Baseline::WrongMix, 1.0) == ids(Baseline::Vanilla, 0.0);
    let mid = ids(Baseline::WrongMix, 0.25).len();
    let want = n - wrong + (0.25 * wrong as f64).round() as usize;
    outcome(
        at0 && at1 && mid == want,
        format!("lambda 0 == no_conflict: {at0}, lambda 1 == vanilla: {at1}, lambda 0.25 size {mid} (want {want})"),
    )
}

fn kaft(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_kaft"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("kaft {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn full_run(dir: &Path) -> Result<(), String> {
    std::fs::write(dir.join("sim.toml"), "positional_bias = 0.3\nseed = 3\n").unwrap();
    let sim = ["--backend", "sim", "--sim-spec", "sim.toml"];
    let with = |base: &[&'static str]| -> Vec<&'static str> { base.iter().copied().chain(sim).collect() };
    kaft(dir, &["--seed", "17", "synth", "--n", "1000", "--out", "data.jsonl"])?;
    kaft(dir, &with(&["--seed", "17", "--dataset", "data.jsonl", "probe"]))?;
    kaft(dir, &with(&["--seed", "17", "--dataset", "data.jsonl", "score"]))?;
    kaft(dir, &["--seed", "17", "partition"])?;
    kaft(dir, &["--seed", "17", "report"])?;
    kaft(
        dir,
        &["--seed", "17", "--dataset", "data.jsonl", "build", "--policy", "kaft"],
    )?;
    kaft(
        dir,
        &[
            "--seed",
            "17",
            "--dataset",
            "data.jsonl",
            "build",
            "--baseline",
            "wrong_mix",
            "--lambda",
            "0.25",
            "--out",
            "mix.jsonl",
        ],
    )
}

fn pipeline_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        if let Err(e) = full_run(dir) {
            return outcome(false, e);
        }
    }
    let files = [
        "data.jsonl",
        "probe-cache.jsonl",
        "scores.jsonl",
        "partition.jsonl",
        "report.csv",
        "weighted.jsonl",
        "mix.jsonl",
    ];
    for f in files {
        let (x, y) = (
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
        );
        if x != y || x.is_empty() {
            return outcome(false, format!("{f} differs between runs"));
        }
    }
    outcome(
        true,
        format!("two 1000-sample simulator runs byte-identical: {}", files.join(", ")),
    )
}

fn cache_idempotence() -> Outcome {
    let dataset = synthetic_dataset(&SynthSpec {
        n_samples: 200,
        seed: 10,
        ..Default::default()
    })
    .unwrap();
    let sim = SimulatorBackend::new(
        SimulatorSpec {
            positional_bias: 0.2,
            ..Default::default()
        },
        &dataset,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let config = ProbeConfig::default();

    let cold = CountingBackend::new(&sim);
    let mut cache = ProbeCache::open(&path).unwrap();
    let first = Prober::new(&cold, config.clone())
        .with_max_in_flight(4)
        .run(&dataset, &mut cache, |_, _| {})
        .unwrap();
    drop(cache);

    let warm = CountingBackend::new(&sim);
    let mut cache = ProbeCache::open(&path).unwrap();
    let second = Prober::new(&warm, config)
        .with_max_in_flight(4)
        .run(&dataset, &mut cache, |_, _| {})
        .unwrap();
    let same = first.results == second.results;
    outcome(
        warm.calls() == 0 && same && second.cache_hits == dataset.len() && cold.calls() > 0,
        format!(
            "cold run {} calls, warm run {} calls, {} cache hits, results identical: {same}",
            cold.calls(),
            warm.calls(),
            second.cache_hits
        ),
    )
}
