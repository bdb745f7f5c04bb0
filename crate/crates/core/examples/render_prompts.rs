//! Shows the option-order variants and few-shot prompt built for one sample.
//!
//! ```text
//! cargo run --example render_prompts
//! ```

use kaft::dataset::{Dataset, QASample};
use kaft::diversify::{diversify_sample, FewShotPool, ProbeConfig};

fn main() -> kaft::Result<()> {
    let samples = vec![
        QASample::new(
            "q1",
            "Which organ produces insulin?",
            vec!["Liver".into(), "Pancreas".into(), "Spleen".into(), "Kidney".into()],
            1,
        )
        .with_meta("domain", "medical"),
        QASample::new(
            "q2",
            "Which vitamin deficiency causes scurvy?",
            vec![
                "Vitamin A".into(),
                "Vitamin B12".into(),
                "Vitamin C".into(),
                "Vitamin D".into(),
            ],
            2,
        )
        .with_meta("domain", "medical"),
        QASample::new(
            "q3",
            "Which bone is the longest in the body?",
            vec!["Femur".into(), "Tibia".into(), "Humerus".into(), "Radius".into()],
            0,
        )
        .with_meta("domain", "medical"),
    ];
    let dataset = Dataset::from_samples(samples, "inline")?;
    let config = ProbeConfig {
        n_orders: 4,
        few_shot_k: 1,
        ..Default::default()
    };
    let pool = FewShotPool::new(&dataset, config.few_shot_k, 7);

    let target = &dataset.samples[0];
    let few_shot = pool.for_target(&target.id)?;
    for q in diversify_sample(target, &config, &few_shot)? {
        println!(
            "--- variant {} order {:?}, gold in slot {}",
            q.variant_index, q.permutation.mapping, q.remapped_answer_index
        );
        println!("{}\n", q.prompt);
    }
    Ok(())
}
