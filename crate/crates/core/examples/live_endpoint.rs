//! Probes a few samples against a real OpenAI-compatible endpoint.
//!
//! ```text
//! OPENAI_API_KEY=... cargo run --example live_endpoint -- https://api.openai.com gpt-4o-mini [dataset.jsonl]
//! ```
//!
//! Without a dataset argument three built-in questions are used. Results are
//! cached in `live-probe-cache.jsonl`, so a second run costs nothing.

use kaft::dataset::{load_dataset, Dataset, QASample};
use kaft::diversify::ProbeConfig;
use kaft::probe::{EndpointConfig, HttpBackend, ProbeCache, Prober};
use kaft::scoring::compute_scores;

fn builtin() -> kaft::Result<Dataset> {
    let q = |id: &str, question: &str, opts: [&str; 4], gold| {
        QASample::new(id, question, opts.iter().map(|s| s.to_string()).collect(), gold).with_meta("domain", "medical")
    };
    Dataset::from_samples(
        vec![
            q(
                "ins",
                "Which organ produces insulin?",
                ["Liver", "Pancreas", "Spleen", "Kidney"],
                1,
            ),
            q(
                "scurvy",
                "Deficiency of which vitamin causes scurvy?",
                ["Vitamin A", "Vitamin B12", "Vitamin C", "Vitamin D"],
                2,
            ),
            q(
                "femur",
                "Which is the longest bone in the human body?",
                ["Femur", "Tibia", "Humerus", "Fibula"],
                0,
            ),
            q(
                "heart",
                "How many chambers does the human heart have?",
                ["Two", "Three", "Four", "Five"],
                2,
            ),
        ],
        "builtin",
    )
}

fn main() -> kaft::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let (Some(base), Some(model)) = (args.next(), args.next()) else {
        eprintln!("usage: live_endpoint BASE_URL MODEL [dataset.jsonl]");
        std::process::exit(2);
    };
    let dataset = match args.next() {
        Some(p) => load_dataset(p)?,
        None => builtin()?,
    };
    let endpoint = EndpointConfig::new(base, model);
    let in_flight = endpoint.max_in_flight;
    let backend = HttpBackend::new(endpoint)?;
    let config = ProbeConfig {
        n_orders: 4,
        n_responses: 3,
        few_shot_k: 2,
        ..Default::default()
    };
    let mut cache = ProbeCache::open("live-probe-cache.jsonl")?;
    let summary =
        Prober::new(&backend, config)
            .with_max_in_flight(in_flight)
            .run(&dataset, &mut cache, |done, total| eprintln!("{done}/{total}"))?;
    for (id, err) in &summary.failures {
        eprintln!("failed {id}: {err}");
    }
    for s in compute_scores(&summary.results)? {
        println!(
            "{:<10} conflict score {:.2} ({}/{})",
            s.id, s.score, s.n_correct, s.n_total
        );
    }
    Ok(())
}
