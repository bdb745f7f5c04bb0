//! Every curation baseline built from one probe run, with subset sizes and
//! rewards, plus the wrong_mix sweep over lambda.
//!
//! ```text
//! cargo run --release --example build_baselines -- [out_dir]
//! ```

use std::collections::BTreeMap;

use kaft::curation::{
    build_baseline, export_weighted, greedy_answers, Baseline, CurationConfig, RewardPolicy, WEIGHTED_JSONL,
};
use kaft::diversify::ProbeConfig;
use kaft::probe::{ProbeCache, Prober, SimulatorBackend, SimulatorSpec};
use kaft::scoring::{compute_scores, partition};
use kaft::synth::{synthetic_dataset, SynthSpec};

fn main() -> kaft::Result<()> {
    let out_dir = std::env::args().nth(1);
    let dataset = synthetic_dataset(&SynthSpec {
        n_samples: 400,
        ..Default::default()
    })?;
    let sim = SimulatorBackend::new(
        SimulatorSpec {
            positional_bias: 0.2,
            ..Default::default()
        },
        &dataset,
    )?;
    let mut cache = ProbeCache::in_memory();
    let summary =
        Prober::new(&sim, ProbeConfig::default())
            .with_max_in_flight(8)
            .run(&dataset, &mut cache, |_, _| {})?;
    let scores = compute_scores(&summary.results)?;
    let part = partition(&scores, 4)?;
    let greedy = greedy_answers(&summary.results);

    let runs = [
        ("vanilla", Baseline::Vanilla, RewardPolicy::kaft()),
        ("no_conflict", Baseline::NoConflict, RewardPolicy::kaft()),
        ("self_aligning", Baseline::SelfAligning, RewardPolicy::kaft()),
        ("kaft", Baseline::Kaft, RewardPolicy::kaft()),
        ("auto_adapt", Baseline::Kaft, RewardPolicy::AutoAdapt { floor: 0.01 }),
    ];
    for (name, baseline, policy) in runs {
        let samples = build_baseline(
            &dataset,
            &part,
            &scores,
            &greedy,
            &CurationConfig::new(baseline),
            &policy,
        )?;
        let mut rewards: BTreeMap<String, usize> = BTreeMap::new();
        for s in &samples {
            *rewards.entry(format!("{:.1}", s.reward)).or_default() += 1;
        }
        let relabelled = samples
            .iter()
            .zip(&dataset.samples)
            .filter(|(s, orig)| s.sample.id == orig.id && s.sample.answer_index != orig.answer_index)
            .count();
        println!(
            "{name:<14} {:>4} samples, rewards {rewards:?}, relabelled {relabelled}",
            samples.len()
        );
        if let Some(dir) = &out_dir {
            export_weighted(&samples, format!("{dir}/{name}.jsonl"), WEIGHTED_JSONL)?;
        }
    }

    println!("\nwrong_mix sweep ({} samples in `wrong`)", part.sizes()[0]);
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let cfg = CurationConfig {
            baseline: Baseline::WrongMix,
            lambda,
            seed: 1,
        };
        let n = build_baseline(&dataset, &part, &scores, &greedy, &cfg, &RewardPolicy::kaft())?.len();
        println!("  lambda {lambda:.2}: {n} samples");
    }
    Ok(())
}
