//! Trains a pool, then runs each test paper as an agent-only market and as a
//! market with two scripted humans, and compares the two.

use replimarket::agents::AgentPool;
use replimarket::dataset::{fit_normalization, generate_synthetic, normalize_all, FeatureSchema};
use replimarket::eval::{self, MarketRun, ScriptedHumanTrader};
use replimarket::evolution::{train_market, TrainingConfig};
use replimarket::rng::rng_from_seed;
use replimarket::runner::MarketParams;

fn main() {
    let seed = 3;
    let records = generate_synthetic(224, 0.1, &mut rng_from_seed(seed));
    let schema = fit_normalization(&records[..200], &FeatureSchema::default_schema()).unwrap();
    let train = normalize_all(&records[..200], &schema).unwrap();
    let test = normalize_all(&records[200..], &schema).unwrap();

    let cfg = TrainingConfig {
        epochs: 8,
        population_size: 100,
        rng_seed: seed,
        ..TrainingConfig::default()
    };
    let pool = AgentPool::new(&schema, train_market(&train, &schema, &cfg).unwrap().pool);
    let params = MarketParams {
        max_iterations: 2000,
        ..MarketParams::default()
    };

    let crowd = vec![
        ScriptedHumanTrader::value_trader("optimist", 0.75, 2.0, 0.05),
        ScriptedHumanTrader::value_trader("skeptic", 0.35, 2.0, 0.05),
        ScriptedHumanTrader::momentum("chaser", 0.5),
    ];
    let results = |runs: Vec<MarketRun>| runs.iter().filter_map(MarketRun::result).collect::<Vec<_>>();
    let artificial = results(eval::run_batch(&test, &pool, &schema, params, 25.0, seed, |_| Vec::new()).unwrap());
    let hybrid = results(eval::run_batch(&test, &pool, &schema, params, 25.0, seed, |_| crowd.clone()).unwrap());

    let summary = eval::summarize(&hybrid, &artificial).unwrap();
    summary.write_table(std::io::stdout().lock(), "hybrid", "artificial").unwrap();
    println!("mean AE hybrid {:.4}, artificial {:.4}", summary.mean_ae_a, summary.mean_ae_b);
    match summary.wilcoxon() {
        Ok(w) => println!("Wilcoxon z = {:.3}, p = {:.3}", w.z, w.p_two_sided),
        Err(e) => println!("Wilcoxon: {e}"),
    }
}
