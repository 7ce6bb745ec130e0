//! Runs a two-market event in-process: participants trade while the clock
//! ticks, then the event is closed and paid out.
//!
//! For the HTTP interface, see `replimarket serve`.

use std::collections::BTreeMap;

use replimarket::agents::AgentPool;
use replimarket::dataset::{fit_normalization, generate_synthetic, normalize_all, FeatureSchema};
use replimarket::evolution::{train_market, TrainingConfig};
use replimarket::market::{AssetSide, Direction, Outcome};
use replimarket::rng::rng_from_seed;
use replimarket::service::{CloseRequest, Event, EventConfig, MarketConfig, PaperInfo};

fn main() {
    let records = generate_synthetic(202, 0.1, &mut rng_from_seed(1));
    let schema = fit_normalization(&records[..200], &FeatureSchema::default_schema()).unwrap();
    let train = normalize_all(&records[..200], &schema).unwrap();
    let papers = normalize_all(&records[200..], &schema).unwrap();
    let cfg = TrainingConfig {
        epochs: 3,
        population_size: 100,
        ..TrainingConfig::default()
    };
    let pool = AgentPool::new(&schema, train_market(&train, &schema, &cfg).unwrap().pool);

    let config = EventConfig {
        event_id: "demo".into(),
        markets: papers
            .iter()
            .enumerate()
            .map(|(i, p)| MarketConfig {
                market_id: format!("M{i}"),
                paper: PaperInfo {
                    claim_id: p.claim_id.clone(),
                    features: p.features.clone(),
                    meta: BTreeMap::new(),
                },
                b: 10.0,
                max_iterations: 50,
            })
            .collect(),
        iteration_period_ms: 0,
        participant_endowment: 25.0,
        agent_pool_ref: None,
        sampling_rate: 0.05,
        minimal_activity_requirement: 1,
        allow_agent_sell: false,
        seed: 7,
    };
    let event = Event::create(config, &pool).unwrap();
    let ann = event.register("ann").unwrap().token;
    let bo = event.register("bo").unwrap().token;
    event.start().unwrap();

    let mut tick = 0;
    while event.tick().unwrap() {
        tick += 1;
        if tick % 10 == 0 {
            event.submit(&ann, "M0", AssetSide::WillReplicate, Direction::Buy).unwrap();
            event.submit(&bo, "M1", AssetSide::WillNotReplicate, Direction::Buy).unwrap();
        }
    }
    for m in ["M0", "M1"] {
        let q = event.quote(m).unwrap();
        println!("{m}: P(yes) = {:.4} after {} iterations", q.price_yes, q.iteration);
    }

    let report = event
        .close(&CloseRequest {
            outcomes: BTreeMap::from([("M0".to_string(), Outcome::Replicated), ("M1".to_string(), Outcome::NotReplicated)]),
            payout_seed: 99,
        })
        .unwrap();
    println!("paying out on {}", report.selected_market);
    for p in &report.payouts {
        println!("{:>4}: {:.4}", p.participant_id, p.payout);
    }
}
