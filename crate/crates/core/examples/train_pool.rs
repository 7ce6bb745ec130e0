//! Evolves a small pool on synthetic papers and prints per-epoch metrics.
//!
//! `cargo run --release --example train_pool -- [epochs] [seed]`

use replimarket::agents::AgentPool;
use replimarket::dataset::{fit_normalization, generate_synthetic, normalize_all, FeatureSchema};
use replimarket::evolution::{train_market_with_progress, TrainingConfig};
use replimarket::rng::rng_from_seed;

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("numeric argument"));
    let epochs = args.next().unwrap_or(10) as usize;
    let seed = args.next().unwrap_or(0);

    let records = generate_synthetic(300, 0.1, &mut rng_from_seed(seed));
    let schema = fit_normalization(&records, &FeatureSchema::default_schema()).unwrap();
    let train = normalize_all(&records, &schema).unwrap();
    let cfg = TrainingConfig {
        epochs,
        population_size: 100,
        rng_seed: seed,
        ..TrainingConfig::default()
    };
    let run = train_market_with_progress(&train, &schema, &cfg, |m| {
        println!(
            "epoch {:>3}  training AE {:.4}  survivors {:>6.1}  mean wealth {:.3}",
            m.epoch, m.mean_training_ae, m.survivors, m.mean_wealth
        )
    })
    .unwrap();
    let pool = AgentPool::new(&schema, run.pool);
    let active = pool.genomes.iter().filter(|g| g.mask.iter().any(|m| *m)).count();
    println!("{} agents, {active} with a non-empty feature mask", pool.genomes.len());
}
