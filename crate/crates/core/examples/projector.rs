//! Weakly supervised city projector: train the x-vector network on clustered
//! vectors and print the 5-way city posterior of a new point.

use ddm::corpus::City;
use ddm::projector::{build_fc, train_projector, FcSpec, InitSpec, Sample, Tensor, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = 512;
    let centres: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut pool = Vec::new();
    for _ in 0..30 {
        for (label, c) in centres.iter().enumerate() {
            let x = c.iter().map(|v| v + rng.gen_range(-1.5..1.5)).collect();
            pool.push(Sample {
                input: Tensor::new(1, dim, x),
                label,
            });
        }
    }
    let init = build_fc(
        &FcSpec::default(),
        InitSpec {
            seed: 2,
            scale: 1.0,
        },
    );
    println!("FC projector with {} parameters", init.n_parameters());
    let cfg = TrainConfig {
        epochs: 10,
        seed: 2,
        ..Default::default()
    };
    let (model, history) = train_projector(&init, &pool, &cfg)?;
    for e in &history.epochs {
        println!(
            "epoch {:2}: loss {:.4} train acc {:.3} valid acc {:.3}",
            e.epoch,
            e.train_loss,
            e.train_accuracy,
            e.valid_accuracy.unwrap_or(f64::NAN)
        );
    }
    let probe = Tensor::new(1, dim, centres[2].clone());
    let p = model.project(&probe)?;
    for (city, v) in City::ALL.iter().zip(p) {
        println!("  {city}: {v:.3}");
    }
    Ok(())
}
