//! Conflict scores, the four rank subsets and the score distribution report
//! for a simulated model.
//!
//! ```text
//! cargo run --release --example score_and_partition -- [report.csv]
//! ```

use kaft::diversify::ProbeConfig;
use kaft::probe::{ProbeCache, Prober, SimulatorBackend, SimulatorSpec};
use kaft::scoring::{compute_scores, partition, score_report, subset_label};
use kaft::synth::{synthetic_dataset, SynthSpec};

fn main() -> kaft::Result<()> {
    let out = std::env::args().nth(1);
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
    println!("{:<12} {:>5} {:>10} {:>10}", "subset", "size", "min score", "max score");
    for k in 0..part.k {
        let members: Vec<f64> = scores
            .iter()
            .filter(|s| part.subset_of(&s.id) == Some(k))
            .map(|s| s.score)
            .collect();
        let lo = members.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = members.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{:<12} {:>5} {lo:>10.2} {hi:>10.2}",
            subset_label(part.k, k),
            members.len()
        );
    }

    let report = score_report(&scores, 10)?;
    println!(
        "\nhistogram (bandwidth {:.3}, density mass {:.3})",
        report.bandwidth,
        report.kde_mass()
    );
    for b in &report.histogram {
        println!("[{:.1}, {:.1}) {:>4} {}", b.lo, b.hi, b.count, "#".repeat(b.count / 4));
    }
    if let Some(path) = out {
        report.write_csv(&path)?;
        println!("report -> {path}");
    }
    Ok(())
}
