//! Probes a synthetic dataset against the simulated model through an
//! on-disk cache, twice, to show the second pass is served from the cache.
//!
//! ```text
//! cargo run --release --example probe_simulator -- [n_samples] [positional_bias]
//! ```

use kaft::diversify::ProbeConfig;
use kaft::probe::{CountingBackend, ProbeCache, Prober, SimulatorBackend, SimulatorSpec};
use kaft::scoring::compute_scores;
use kaft::synth::{synthetic_dataset, SynthSpec};

fn main() -> kaft::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let bias = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.3);

    let dataset = synthetic_dataset(&SynthSpec {
        n_samples: n,
        ..Default::default()
    })?;
    let sim = SimulatorBackend::new(
        SimulatorSpec {
            positional_bias: bias,
            ..Default::default()
        },
        &dataset,
    )?;
    let dir = std::env::temp_dir().join(format!("kaft-probe-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| kaft::Error::io(&dir, e))?;
    let cache_path = dir.join("cache.jsonl");

    for pass in 1..=2 {
        let counting = CountingBackend::new(&sim);
        let mut cache = ProbeCache::open(&cache_path)?;
        let summary = Prober::new(&counting, ProbeConfig::default())
            .with_max_in_flight(8)
            .run(&dataset, &mut cache, |_, _| {})?;
        println!(
            "pass {pass}: {} backend calls, {} cache hits",
            counting.calls(),
            summary.cache_hits
        );
        if pass == 2 {
            let scores = compute_scores(&summary.results)?;
            for (s, sample) in scores.iter().zip(&dataset.samples).take(5) {
                println!(
                    "  {} score {:.2} ({}/{}), true p = {}",
                    s.id,
                    s.score,
                    s.n_correct,
                    s.n_total,
                    sample.meta_value("knowledge").unwrap()
                );
            }
            let r = &summary.results[0];
            println!(
                "  {} variant 1 order {:?}: {:?}",
                r.sample_id,
                r.variants[1].permutation.mapping,
                r.variants[1]
                    .responses
                    .iter()
                    .map(|x| x.raw.as_str())
                    .collect::<Vec<_>>()
            );
        }
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
