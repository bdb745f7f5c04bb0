//! How much each half of the probe contributes to detecting what the model
//! knows, measured against a simulator whose true knowledge is known.
//!
//! ```text
//! cargo run --release --example detection_ablation -- [bias] [n_samples] [n_seeds]
//! ```

use kaft::diversify::ProbeConfig;
use kaft::probe::{knowledge_correlation, DetectionVariant, SimulatorBackend, SimulatorSpec};
use kaft::synth::{synthetic_dataset, SynthSpec};

fn main() -> kaft::Result<()> {
    let mut args = std::env::args().skip(1);
    let bias: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let n_seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);

    let mut sums = [0.0; 4];
    for seed in 0..n_seeds {
        let dataset = synthetic_dataset(&SynthSpec {
            n_samples: n,
            seed,
            ..Default::default()
        })?;
        let spec = SimulatorSpec {
            positional_bias: bias,
            seed,
            ..Default::default()
        };
        let truth = spec.knowledge_for(&dataset)?;
        let sim = SimulatorBackend::new(spec, &dataset)?;
        let base = ProbeConfig {
            seed,
            ..Default::default()
        };
        for (i, v) in DetectionVariant::ALL.iter().enumerate() {
            let rho = knowledge_correlation(&dataset, &sim, &v.apply(&base), &truth, 8)?;
            println!("seed {seed} {:<22} spearman {rho:.4}", v.name());
            sums[i] += rho;
        }
    }
    println!("\nmean over {n_seeds} seeds (positional bias {bias}, {n} samples)");
    for (i, v) in DetectionVariant::ALL.iter().enumerate() {
        println!("{:<22} {:.4}", v.name(), sums[i] / n_seeds as f64);
    }
    Ok(())
}
