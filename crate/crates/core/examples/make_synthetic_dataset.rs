//! Writes a synthetic multiple-choice dataset whose samples carry a known
//! knowledge probability in meta `knowledge`, then reads it back.
//!
//! ```text
//! cargo run --example make_synthetic_dataset -- out.jsonl [n] [options]
//! ```

use kaft::dataset::{load_dataset, write_dataset};
use kaft::synth::{synthetic_dataset, SynthSpec};

fn main() -> kaft::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synthetic.jsonl".into());
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let option_count = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let spec = SynthSpec {
        n_samples: n,
        option_count,
        domain: Some("medical".into()),
        seed: 0,
    };
    let dataset = synthetic_dataset(&spec)?;
    write_dataset(&dataset, &out)?;

    let back = load_dataset(&out)?;
    assert_eq!(back.samples, dataset.samples);
    println!("{} samples -> {out} (sha256 {})", back.len(), back.content_hash());
    let s = &back.samples[0];
    println!(
        "first: {} | {} | gold {:?} | p = {}",
        s.id,
        s.question,
        s.gold_option(),
        s.meta_value("knowledge").unwrap()
    );
    Ok(())
}
