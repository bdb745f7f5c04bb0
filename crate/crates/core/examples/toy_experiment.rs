//! Synthetic conflict experiment over several seeds.
//!
//! ```text
//! cargo run --release --example toy_experiment -- [spec.toml] [n_seeds]
//! ```

use kaft::toytrain::{run_experiment_seeds, summarize, ExperimentRow, ExperimentSpec};

fn main() -> kaft::Result<()> {
    let mut args = std::env::args().skip(1);
    let spec = match args.next() {
        Some(path) => ExperimentSpec::from_file(path)?,
        None => ExperimentSpec::default(),
    };
    let n_seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let rows = run_experiment_seeds(&spec, &seeds, 4)?;
    print!("{}", ExperimentRow::to_csv(&rows));

    println!("\nmean over {n_seeds} seeds");
    println!(
        "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "policy", "heldout", "wrong", "m-wrong", "m-right", "right"
    );
    for s in summarize(&rows) {
        println!(
            "{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            s.policy.name(),
            s.heldout_acc,
            s.slice_acc[0],
            s.slice_acc[1],
            s.slice_acc[2],
            s.slice_acc[3]
        );
    }
    Ok(())
}
