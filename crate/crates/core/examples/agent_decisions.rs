//! Shows how one agent gates on similarity and decides against a range of prices.

use replimarket::agents::{decide, AgentGenome};
use replimarket::dataset::FeatureSchema;
use replimarket::market::Holdings;

fn main() {
    let dim = FeatureSchema::default_schema().dim();
    let exemplar: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.5).sin()).collect();
    let mut weights = vec![0.0; dim];
    weights[0] = 1.5;
    let agent = AgentGenome {
        agent_id: 0,
        weights,
        mask: vec![true; dim],
        bias: 0.3,
        exemplars: vec![exemplar.clone()],
        similarity_threshold: 0.6,
        margin: 0.05,
        endowment: 25.0,
    };

    let near: Vec<f64> = exemplar.iter().map(|x| x + 0.05).collect();
    let far: Vec<f64> = exemplar.iter().map(|x| -x).collect();
    for (name, paper) in [("similar paper", &near), ("dissimilar paper", &far)] {
        println!(
            "{name}: similarity {:.3}, participates {}",
            agent.similarity(paper).unwrap(),
            agent.should_participate(paper).unwrap()
        );
    }

    let estimate = agent.estimate_probability(&near).unwrap();
    println!("estimate on the similar paper: {estimate:.3}");
    for price in [0.2, 0.4, 0.5, 0.6, 0.8] {
        let buy_only = decide(estimate, price, agent.margin, Holdings::default(), false);
        let holder = decide(estimate, price, agent.margin, Holdings { yes: 2, no: 2 }, true);
        println!("P(yes) = {price:.1}: {buy_only:?} / holder with selling {holder:?}");
    }
}
