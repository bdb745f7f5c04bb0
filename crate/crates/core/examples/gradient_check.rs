//! Checks the analytic gradient of the reward-weighted loss against central
//! finite differences, and shows that a reward near zero removes a sample.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use kaft::toytrain::{grad, train, weighted_loss, ToyExample, ToyModel, TrainConfig};
use rand::{Rng, SeedableRng};

fn main() -> kaft::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = ToyModel::random(4, 3, 0.5, 1);
    let batch: Vec<ToyExample> = (0..6)
        .map(|_| {
            ToyExample::new(
                (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                rng.gen_range(0..3),
                rng.gen_range(0.1..1.0),
            )
        })
        .collect();
    let l2 = 0.05;
    let g = grad(&model, &batch, l2)?;
    let analytic: Vec<f64> = g.params().copied().collect();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let orig = *model.params().nth(i).unwrap();
        *model.params_mut().nth(i).unwrap() = orig + h;
        let up = weighted_loss(&model, &batch, l2)?;
        *model.params_mut().nth(i).unwrap() = orig - h;
        let down = weighted_loss(&model, &batch, l2)?;
        *model.params_mut().nth(i).unwrap() = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4));
    }
    println!("{} parameters, max relative gradient error {worst:.2e}", analytic.len());

    // A tiny reward on extra samples ends up where dropping them does. The
    // data term is a mean, so this needs l2 = 0 (otherwise the sample count
    // shifts the balance against the penalty) and non-separable data.
    let noisy = |n: usize, reward: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<ToyExample> {
        (0..n)
            .map(|_| {
                ToyExample::new(
                    (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    rng.gen_range(0..3),
                    reward,
                )
            })
            .collect()
    };
    let keep = noisy(120, 1.0, &mut rng);
    let all: Vec<ToyExample> = keep.iter().cloned().chain(noisy(40, 1e-8, &mut rng)).collect();
    let cfg = |n| TrainConfig {
        learning_rate: 2.0,
        epochs: 4000,
        batch_size: n,
        seed: 0,
        l2: 0.0,
    };
    let zero = ToyModel::zeros(2, 3);
    let a = train(&zero, &all, &cfg(all.len()))?;
    let b = train(&zero, &keep, &cfg(keep.len()))?;
    println!(
        "distance between reward-1e-8 run and deletion run: {:.2e}",
        a.distance(&b)
    );
    Ok(())
}
