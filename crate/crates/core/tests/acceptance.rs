//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use replimarket::agents::{AgentGenome, AgentPool};
use replimarket::dataset::{fit_normalization, generate_synthetic, normalize_all, FeatureSchema, PaperRecord};
use replimarket::eval::wilcoxon::normal_tail_error_bound;
use replimarket::eval::{
    self, absolute_error, classify, run_artificial_market, run_scripted_hybrid, summarize, wilcoxon_signed_rank,
    MarketResult, Prediction, ScriptedHumanTrader,
};
use replimarket::evolution::{init_population, train_market, TrainingConfig};
use replimarket::lmsr;
use replimarket::market::{
    write_trade_log, AssetSide, Direction, Ledger, MarketState, Order, Outcome, TradeRecord, TraderKind,
};
use replimarket::rng::{child_rng, rng_from_seed};
use replimarket::runner::MarketParams;
use replimarket::service::http::{serve, Service};
use replimarket::service::{Event, EventConfig, MarketConfig, PaperInfo, Portfolio};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, name: &str, limit: Duration, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > limit => Err(format!("{d}; exceeded time limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.2} s]", elapsed.as_secs_f64()),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL  {name}: {detail} [{:.2} s]", elapsed.as_secs_f64())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Reference comparison of twelve markets: outcome, hybrid price, hybrid label, hybrid AE,
// artificial price, artificial label, artificial AE. A `None` artificial label
// marks markets where no agent traded.

use Outcome::{NotReplicated as NR, Replicated as R};
use Prediction::{Correct as C, NoPrediction as NONE, NotCorrect as NC};

#[allow(clippy::type_complexity)]
const TABLE: [(&str, Outcome, f64, Prediction, f64, f64, Prediction, f64); 12] = [
    ("E1M1", R, 0.66, C, 0.34, 0.41, NC, 0.59),
    ("E1M2", R, 0.36, NC, 0.64, 0.50, NONE, 0.50),
    ("E1M3", R, 0.64, C, 0.36, 0.52, C, 0.48),
    ("E1M4", NR, 0.72, NC, 0.72, 0.50, NONE, 0.50),
    ("E2M1", R, 0.38, NC, 0.62, 0.41, NC, 0.59),
    ("E2M2", R, 0.58, C, 0.42, 0.50, NONE, 0.50),
    ("E2M3", R, 0.80, C, 0.20, 0.52, C, 0.48),
    ("E2M4", NR, 0.47, C, 0.47, 0.50, NONE, 0.50),
    ("E3M1", R, 0.61, C, 0.39, 0.50, NONE, 0.50),
    ("E3M2", R, 0.47, NC, 0.53, 0.46, NC, 0.54),
    ("E3M3", NR, 0.76, NC, 0.76, 0.86, NC, 0.86),
    ("E3M4", R, 0.49, NC, 0.51, 0.42, NC, 0.58),
];

fn table_results() -> (Vec<MarketResult>, Vec<MarketResult>) {
    let mut hybrid = Vec::new();
    let mut artificial = Vec::new();
    for (id, outcome, hp, _, _, ap, alabel, _) in TABLE {
        // every hybrid market had human trades; "--" rows had no trades at all
        hybrid.push(MarketResult::score(id, hp, outcome, 1, 1));
        let agent_trades = u64::from(alabel != NONE);
        artificial.push(MarketResult::score(id, ap, outcome, agent_trades, 0));
    }
    (hybrid, artificial)
}

fn table_arithmetic() -> Check {
    let mut cells = 0;
    for (id, outcome, hp, hl, hae, ap, al, aae) in TABLE {
        let ht = 1;
        let at = u64::from(al != NONE);
        for (price, label, ae, trades, col) in [(hp, hl, hae, ht, "hybrid"), (ap, al, aae, at, "artificial")] {
            let got = classify(price, outcome, trades);
            ensure(got == label, || format!("{id} {col}: label {got:?}, table {label:?}"))?;
            let e = absolute_error(price, outcome);
            ensure((e - ae).abs() < 1e-9, || format!("{id} {col}: AE {e}, table {ae}"))?;
            cells += 2;
        }
    }
    let (_, artificial) = table_results();
    let none: Vec<_> = artificial.iter().filter(|r| r.prediction == NONE).collect();
    ensure(none.len() == 5 && none.iter().all(|r| r.absolute_error == 0.5), || {
        format!("{} no-prediction rows", none.len())
    })?;
    Ok(format!("{cells} label/AE cells match, 5 no-agent rows give NoPrediction with AE 0.5"))
}

fn summary_statistics() -> Check {
    let (hybrid, artificial) = table_results();
    let s = summarize(&hybrid, &artificial).map_err(|e| e.to_string())?;
    ensure((s.mean_ae_a - 0.497).abs() <= 0.0005, || format!("hybrid mean AE {}", s.mean_ae_a))?;
    ensure((s.mean_ae_b - 0.552).abs() <= 0.0005, || format!("artificial mean AE {}", s.mean_ae_b))?;
    ensure(s.count_a_lower == 9, || format!("hybrid lower in {} rows", s.count_a_lower))?;
    Ok(format!(
        "mean AE hybrid {:.5}, artificial {:.5}; hybrid lower in {}/12",
        s.mean_ae_a, s.mean_ae_b, s.count_a_lower
    ))
}

/// Exact `P(W+ >= w)` over all sign assignments of ranks 1..=n.
fn exact_upper_tail(n: usize, w: f64) -> f64 {
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let s: usize = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).sum();
        if s as f64 >= w - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

fn wilcoxon_reproduction() -> Check {
    let hybrid: Vec<f64> = TABLE.iter().map(|r| r.4).collect();
    let artificial: Vec<f64> = TABLE.iter().map(|r| r.7).collect();
    let w = wilcoxon_signed_rank(&hybrid, &artificial).map_err(|e| e.to_string())?;
    ensure((w.z - (-1.373)).abs() <= 0.005, || format!("z = {}", w.z))?;
    // hand-ranked: W+ = 21.5 over n = 12 nonzero differences
    ensure(w.n == 12 && w.w_plus == 21.5, || format!("n = {}, W+ = {}", w.n, w.w_plus))?;
    ensure((w.z - -1.3728129459672882).abs() < 1e-9, || format!("z = {}", w.z))?;

    let bound = normal_tail_error_bound(6);
    let mut rng = rng_from_seed(20_240_601);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let r = wilcoxon_signed_rank(&a, &b).map_err(|e| e.to_string())?;
        let gap = (r.p_upper() - exact_upper_tail(6, r.w_plus)).abs();
        worst = worst.max(gap);
        ensure(gap <= bound, || format!("tail gap {gap} exceeds bound {bound} at W+ = {}", r.w_plus))?;
    }
    Ok(format!(
        "z = {:.4} (W+ = {}, p = {:.4}); 100 random n=6 tails within {:.4} of exact (bound {:.4})",
        w.z, w.w_plus, w.p_two_sided, worst, bound
    ))
}

fn lmsr_properties() -> Check {
    let mut rng = rng_from_seed(7);
    let traders = ["t0", "t1", "t2"];
    let mut trades = 0u64;
    let mut rejections = 0u64;
    for seq in 0..100_000u64 {
        let b = rng.random_range(0.5..50.0);
        let mut m = MarketState::new("m", b, 1).map_err(|e| e.to_string())?;
        m.begin_iteration().map_err(|e| e.to_string())?;
        let mut ledger = Ledger::new();
        for t in traders {
            ledger.open_account(t, rng.random_range(0.0..6.0));
        }
        let c0 = m.cost();
        let mut collected = 0.0;
        let mut accepted_buys = Vec::new();
        for k in 0..rng.random_range(1..25) {
            let order = Order {
                trader_id: traders[rng.random_range(0..3)].to_string(),
                trader_kind: TraderKind::Human,
                side: if rng.random_bool(0.5) { AssetSide::WillReplicate } else { AssetSide::WillNotReplicate },
                direction: if rng.random_bool(0.7) { Direction::Buy } else { Direction::Sell },
                sequence: k,
            };
            let (m_before, l_before) = (m.clone(), ledger.clone());
            let rec = m.execute(&mut ledger, order.clone());
            if rec.accepted {
                trades += 1;
                collected -= rec.cash_delta;
                if order.direction == Direction::Buy {
                    accepted_buys.push(order.side);
                }
            } else {
                rejections += 1;
                ensure(m == m_before && ledger == l_before, || format!("sequence {seq}: rejection changed state"))?;
            }
            let sum = m.price_yes() + m.price(AssetSide::WillNotReplicate);
            ensure((sum - 1.0).abs() <= 1e-12, || format!("sequence {seq}: prices sum to {sum}"))?;
            ensure(ledger.conservation_gap().abs() <= 1e-9, || format!("sequence {seq}: conservation gap {}", ledger.conservation_gap()))?;
            for o in [Outcome::Replicated, Outcome::NotReplicated] {
                let pnl = ledger.market_maker_collected("m") - m.liability(o);
                ensure(pnl >= -b * std::f64::consts::LN_2 - 1e-9, || format!("sequence {seq}: market maker P&L {pnl}"))?;
            }
        }
        // path independence: receipts equal the cost difference, whatever the order
        let dc = m.cost() - c0;
        ensure((collected - dc).abs() <= 1e-9, || format!("sequence {seq}: collected {collected} vs cost change {dc}"))?;
        let direct = lmsr::cost(m.q_yes(), m.q_no(), b) - lmsr::cost(0.0, 0.0, b);
        ensure((direct - dc).abs() <= 1e-9, || format!("sequence {seq}: cost path mismatch"))?;
        if !accepted_buys.is_empty() {
            accepted_buys.shuffle(&mut rng);
            let mut alt = MarketState::new("alt", b, 1).map_err(|e| e.to_string())?;
            alt.begin_iteration().map_err(|e| e.to_string())?;
            let mut rich = Ledger::new();
            rich.open_account("x", 1e6);
            let mut paid = 0.0;
            for (k, side) in accepted_buys.iter().enumerate() {
                let o = Order {
                    trader_id: "x".into(),
                    trader_kind: TraderKind::Human,
                    side: *side,
                    direction: Direction::Buy,
                    sequence: k as u64,
                };
                paid -= alt.execute(&mut rich, o).cash_delta;
            }
            let expect = lmsr::cost(alt.q_yes(), alt.q_no(), b) - lmsr::cost(0.0, 0.0, b);
            ensure((paid - expect).abs() <= 1e-9, || format!("sequence {seq}: reordered buys paid {paid} vs {expect}"))?;
        }
        // buy then sell returns the cash
        let mut rt = Ledger::new();
        rt.open_account("rt", 1e6);
        let side = if rng.random_bool(0.5) { AssetSide::WillReplicate } else { AssetSide::WillNotReplicate };
        let mk = |d, s| Order {
            trader_id: "rt".into(),
            trader_kind: TraderKind::Human,
            side,
            direction: d,
            sequence: s,
        };
        let buy = m.execute(&mut rt, mk(Direction::Buy, 100));
        let sell = m.execute(&mut rt, mk(Direction::Sell, 101));
        ensure(buy.accepted && sell.accepted, || format!("sequence {seq}: round trip rejected"))?;
        let back = rt.cash("rt").unwrap() - 1e6;
        ensure(back.abs() <= 1e-9, || format!("sequence {seq}: round trip left {back}"))?;
    }
    Ok(format!("100000 sequences, {trades} accepted trades, {rejections} rejections"))
}

// ---------------------------------------------------------------------------

fn split(records: Vec<PaperRecord>, n_train: usize) -> (FeatureSchema, Vec<PaperRecord>, Vec<PaperRecord>) {
    let schema = FeatureSchema::default_schema();
    let fitted = fit_normalization(&records[..n_train], &schema).unwrap();
    let train = normalize_all(&records[..n_train], &fitted).unwrap();
    let test = normalize_all(&records[n_train..], &fitted).unwrap();
    (fitted, train, test)
}

struct Artifacts {
    pool: Vec<u8>,
    results: Vec<u8>,
    trade_logs: Vec<u8>,
}

fn end_to_end(seed: u64) -> (Artifacts, AgentPool) {
    let (schema, train, test) = split(generate_synthetic(212, 0.1, &mut child_rng(seed, &[1])), 200);
    let cfg = TrainingConfig {
        epochs: 5,
        rng_seed: seed,
        ..TrainingConfig::default()
    };
    let run = train_market(&train, &schema, &cfg).unwrap();
    let pool = AgentPool::new(&schema, run.pool);
    let mut pool_bytes = Vec::new();
    pool.write(&mut pool_bytes).unwrap();
    let crowd = vec![
        ScriptedHumanTrader::value_trader("v", 0.65, 2.0, 0.05),
        ScriptedHumanTrader::momentum("m", 1.0),
    ];
    let mut results = Vec::new();
    let mut trade_logs = Vec::new();
    for humans in [Vec::new(), crowd] {
        let runs = eval::run_batch(&test, &pool, &schema, MarketParams::default(), 25.0, seed, |_| humans.clone()).unwrap();
        let rows: Vec<_> = runs.iter().filter_map(|r| r.result()).collect();
        eval::write_results(&mut results, &rows).unwrap();
        for r in &runs {
            write_trade_log(&mut trade_logs, &r.trade_log).unwrap();
        }
    }
    (
        Artifacts {
            pool: pool_bytes,
            results,
            trade_logs,
        },
        pool,
    )
}

fn event_config(id: &str, markets: Vec<(String, Vec<f64>)>, max_iterations: u32, seed: u64) -> EventConfig {
    EventConfig {
        event_id: id.into(),
        markets: markets
            .into_iter()
            .map(|(m, features)| MarketConfig {
                market_id: m.clone(),
                paper: PaperInfo {
                    claim_id: format!("claim-{m}"),
                    features,
                    meta: BTreeMap::new(),
                },
                b: 10.0,
                max_iterations,
            })
            .collect(),
        iteration_period_ms: 0,
        participant_endowment: 25.0,
        agent_pool_ref: None,
        sampling_rate: 0.05,
        minimal_activity_requirement: 1,
        allow_agent_sell: false,
        seed,
    }
}

fn determinism_and_replay() -> Check {
    let seed = 42;
    let (a, pool) = end_to_end(seed);
    let (b, _) = end_to_end(seed);
    ensure(a.pool == b.pool, || "pool files differ".into())?;
    ensure(a.results == b.results, || "result CSVs differ".into())?;
    ensure(a.trade_logs == b.trade_logs, || "trade logs differ".into())?;
    ensure(!a.trade_logs.is_empty(), || "no trades were logged".into())?;

    // live event: the clock runs on one thread while orders arrive from another
    let test = generate_synthetic(3, 0.1, &mut child_rng(seed, &[2]));
    let markets = test.iter().enumerate().map(|(i, p)| (format!("M{i}"), p.features.clone())).collect();
    let cfg = event_config("replay", markets, 3000, seed);
    let event = Arc::new(Event::create(cfg.clone(), &pool).map_err(|e| e.to_string())?);
    let tokens: Vec<String> = ["ann", "bo"].iter().map(|p| event.register(p).unwrap().token).collect();
    event.start().map_err(|e| e.to_string())?;
    let clock = {
        let event = event.clone();
        std::thread::spawn(move || {
            while event.tick().unwrap() {
                std::thread::yield_now();
            }
        })
    };
    let mut rng = rng_from_seed(5);
    let mut sent = 0;
    for _ in 0..400 {
        let side = if rng.random_bool(0.5) { AssetSide::WillReplicate } else { AssetSide::WillNotReplicate };
        let m = format!("M{}", rng.random_range(0..3));
        if event.submit(&tokens[rng.random_range(0..2)], &m, side, Direction::Buy).is_ok() {
            sent += 1;
        }
        std::thread::sleep(Duration::from_micros(200));
    }
    clock.join().map_err(|_| "clock thread panicked".to_string())?;
    let log = event.arrival_log();
    let replayed = Event::replay(cfg, &pool, &log).map_err(|e| e.to_string())?;
    let mut prices = Vec::new();
    for i in 0..3 {
        let m = format!("M{i}");
        let (live, again) = (event.history(&m).unwrap(), replayed.history(&m).unwrap());
        let (pl, pr) = (live.last().unwrap().price_yes, again.last().unwrap().price_yes);
        ensure(pl.to_bits() == pr.to_bits(), || format!("{m}: live {pl} vs replay {pr}"))?;
        ensure(event.trade_log(&m).unwrap() == replayed.trade_log(&m).unwrap(), || format!("{m}: trade logs differ"))?;
        prices.push(pl);
    }
    Ok(format!(
        "pool {} B, results {} B, trade logs {} B identical across runs; {} live orders replayed to identical prices {:?}",
        a.pool.len(),
        a.results.len(),
        a.trade_logs.len(),
        sent,
        prices
    ))
}

fn learning_signal() -> Check {
    let mut passing = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let (schema, train, test) = split(generate_synthetic(450, 0.1, &mut child_rng(seed, &[1000])), 400);
        let cfg = TrainingConfig {
            rng_seed: seed,
            ..TrainingConfig::default()
        };
        let untrained = AgentPool::new(&schema, init_population(&cfg, &schema, &train, &mut child_rng(seed, &[1])).unwrap());
        let trained = AgentPool::new(&schema, train_market(&train, &schema, &cfg).unwrap().pool);
        let mean_ae = |pool: &AgentPool| {
            let total: f64 = test
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let run = run_artificial_market(p, pool, MarketParams::default(), eval::batch_market_seed(seed, i)).unwrap();
                    run.result().unwrap().absolute_error
                })
                .sum();
            total / test.len() as f64
        };
        let (u, t) = (mean_ae(&untrained), mean_ae(&trained));
        let ok = t < 0.40 && (u - 0.5).abs() <= 0.05;
        passing += usize::from(ok);
        lines.push(format!("{seed}:{t:.3}/{u:.3}"));
    }
    ensure(passing >= 9, || format!("{passing}/10 seeds pass (trained/untrained {})", lines.join(" ")))?;
    Ok(format!("{passing}/10 seeds pass (seed: trained/untrained test AE {})", lines.join(" ")))
}

fn genome(id: u64, dim: usize, bias: f64, threshold: f64, margin: f64, exemplar: Vec<f64>) -> AgentGenome {
    AgentGenome {
        agent_id: id,
        weights: vec![0.0; dim],
        mask: vec![true; dim],
        bias,
        exemplars: vec![exemplar],
        similarity_threshold: threshold,
        margin,
        endowment: 25.0,
    }
}

fn no_trade_default() -> Check {
    let schema = FeatureSchema::default_schema();
    let dim = schema.dim();
    let features: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.37).sin()).collect();
    let opposite: Vec<f64> = features.iter().map(|x| -x).collect();
    let mut genomes = Vec::new();
    for id in 0..100 {
        // half are gated out, half pass the gate but see no edge at 0.5
        genomes.push(if id % 2 == 0 {
            genome(id, dim, 2.0, 0.9, 0.05, opposite.clone())
        } else {
            genome(id, dim, 0.0, 0.5, 0.1, features.clone())
        });
    }
    let pool = AgentPool::new(&schema, genomes);
    let paper = PaperRecord::new("quiet", features.clone(), Some(Outcome::Replicated));
    let run = run_artificial_market(&paper, &pool, MarketParams::default(), 3).map_err(|e| e.to_string())?;
    let r = run.result().unwrap();
    ensure(r.final_price_yes == 0.5, || format!("closed at {}", r.final_price_yes))?;
    ensure(r.prediction == Prediction::NoPrediction && r.absolute_error == 0.5 && r.agent_trades == 0, || {
        format!("{r:?}")
    })?;
    let event = Event::create(event_config("quiet", vec![("Q".into(), features)], 7200, 3), &pool).map_err(|e| e.to_string())?;
    event.start().map_err(|e| e.to_string())?;
    event.run_to_completion().map_err(|e| e.to_string())?;
    let q = event.quote("Q").map_err(|e| e.to_string())?;
    ensure(q.price_yes == 0.5 && q.iteration == 7200, || format!("service market closed at {} after {}", q.price_yes, q.iteration))?;
    Ok("batch market and service market both close at exactly 0.5 after 7200 iterations; NoPrediction, AE 0.5".into())
}

fn agent_waking() -> Check {
    let schema = FeatureSchema::default_schema();
    let dim = schema.dim();
    let features: Vec<f64> = (0..dim).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
    let estimate_bias = (0.7f64 / 0.3).ln();
    let margin = 0.22;
    // quote oracle: the opening price gives no edge, one NO share does
    let after_one_no = 1.0 / (1.0 + (1.0f64 / 10.0).exp());
    ensure(0.7 - 0.5 <= margin && 0.7 - after_one_no > margin, || "scenario constants inconsistent".into())?;
    let genomes = (0..100).map(|id| genome(id, dim, estimate_bias, 0.5, margin, features.clone())).collect();
    let pool = AgentPool::new(&schema, genomes);
    let est = pool.genomes[0].estimate_probability(&features).unwrap();
    ensure((est - 0.7).abs() < 1e-12, || format!("estimate {est}"))?;
    let paper = PaperRecord::new("wake", features, Some(Outcome::Replicated));
    let seed = 11;
    let artificial = run_artificial_market(&paper, &pool, MarketParams::default(), seed).map_err(|e| e.to_string())?;
    let humans = [ScriptedHumanTrader::value_trader("skeptic", 0.3, 5.0, 0.0)];
    let hybrid = run_scripted_hybrid(&paper, &pool, &humans, MarketParams::default(), 25.0, seed).map_err(|e| e.to_string())?;
    ensure(artificial.agent_trades == 0 && artificial.final_price_yes == 0.5, || {
        format!("artificial run: {} agent trades, price {}", artificial.agent_trades, artificial.final_price_yes)
    })?;
    ensure(hybrid.agent_trades >= 1 && hybrid.human_trades >= 1, || {
        format!("hybrid run: {} agent trades, {} human trades", hybrid.agent_trades, hybrid.human_trades)
    })?;
    let first_human = hybrid.trade_log.iter().position(|t| t.order.trader_kind == TraderKind::Human && t.accepted);
    let first_agent = hybrid.trade_log.iter().position(|t| t.order.trader_kind == TraderKind::Agent && t.accepted);
    ensure(first_human < first_agent, || "agents traded before any human".into())?;
    Ok(format!(
        "agent trades 0 -> {} (human trades {}), final price 0.5 -> {:.4}",
        hybrid.agent_trades, hybrid.human_trades, hybrid.final_price_yes
    ))
}

// ---------------------------------------------------------------------------

async fn service_driver() -> Check {
    let schema = FeatureSchema::default_schema();
    let dim = schema.dim();
    let features: Vec<Vec<f64>> = (0..4).map(|m| (0..dim).map(|i| ((i + m * 3) as f64 * 0.9).cos()).collect()).collect();
    // agents lean YES on M0/M2 and NO on M1/M3
    let mut genomes = Vec::new();
    for id in 0..80u64 {
        let m = (id % 4) as usize;
        let bias = if m % 2 == 0 { 1.2 } else { -1.2 };
        genomes.push(genome(id, dim, bias, 0.95, 0.03, features[m].clone()));
    }
    let svc = Service::new(Some(AgentPool::new(&schema, genomes)));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let base = format!("http://{}", listener.local_addr().unwrap());
    let server = tokio::spawn(serve(listener, svc));
    let http = reqwest::Client::new();
    let err = |e: reqwest::Error| e.to_string();

    let markets = features.iter().enumerate().map(|(i, f)| (format!("M{i}"), f.clone())).collect();
    let cfg = event_config("live", markets, 400, 9);
    let resp = http.post(format!("{base}/events")).json(&cfg).send().await.map_err(err)?;
    ensure(resp.status() == 201, || format!("create-event returned {}", resp.status()))?;
    let dup = http.post(format!("{base}/events")).json(&cfg).send().await.map_err(err)?;
    ensure(dup.status() == 409, || format!("duplicate event returned {}", dup.status()))?;

    let mut tokens = BTreeMap::new();
    for p in ["p1", "p2", "p3"] {
        let s: serde_json::Value = http
            .post(format!("{base}/events/live/sessions"))
            .json(&serde_json::json!({ "participantId": p }))
            .send()
            .await
            .map_err(err)?
            .json()
            .await
            .map_err(err)?;
        tokens.insert(p, s["token"].as_str().unwrap().to_string());
    }
    let order = |p: &str, m: &str, side: &str, dir: &str| {
        http.post(format!("{base}/events/live/markets/{m}/orders"))
            .header("x-session-token", tokens[p].clone())
            .json(&serde_json::json!({ "side": side, "direction": dir }))
            .send()
    };
    // submitted before the clock starts: all execute in iteration 1, after agents
    let script = [
        ("p1", "M0", "WillReplicate", "Buy"),
        ("p2", "M0", "WillNotReplicate", "Buy"),
        ("p3", "M0", "WillReplicate", "Buy"),
        ("p3", "M0", "WillNotReplicate", "Sell"),
        ("p1", "M1", "WillNotReplicate", "Buy"),
        ("p2", "M2", "WillReplicate", "Buy"),
        ("p3", "M3", "WillReplicate", "Buy"),
        ("p1", "M0", "WillReplicate", "Sell"),
    ];
    let mut acks = Vec::new();
    for (p, m, s, d) in script {
        let r = order(p, m, s, d).send_check().await?;
        acks.push(r["sequence"].as_u64().unwrap());
        ensure(r["queuedAtIteration"] == 1, || format!("pre-open order stamped {}", r["queuedAtIteration"]))?;
    }
    let bad = http
        .post(format!("{base}/events/live/markets/M0/orders"))
        .header("x-session-token", "forged")
        .json(&serde_json::json!({ "side": "WillReplicate", "direction": "Buy" }))
        .send()
        .await
        .map_err(err)?;
    ensure(bad.status() == 401, || format!("forged token returned {}", bad.status()))?;

    let q0: serde_json::Value = http.get(format!("{base}/events/live/markets/M0/quote")).send().await.map_err(err)?.json().await.map_err(err)?;
    ensure(q0["priceYes"] == 0.5 && q0["iteration"] == 0, || format!("fresh quote {q0}"))?;
    let open = http.post(format!("{base}/events/live/open")).send().await.map_err(err)?;
    ensure(open.status() == 200, || format!("open returned {}", open.status()))?;
    let again = http.post(format!("{base}/events/live/open")).send().await.map_err(err)?;
    ensure(again.status() == 409, || format!("second open returned {}", again.status()))?;
    // orders while the clock runs; late ones may meet a closed market
    for k in 0..30 {
        let p = ["p1", "p2", "p3"][k % 3];
        let m = format!("M{}", k % 4);
        let _ = order(p, &m, if k % 2 == 0 { "WillReplicate" } else { "WillNotReplicate" }, "Buy").await;
    }

    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let s: serde_json::Value = http.get(format!("{base}/events/live")).send().await.map_err(err)?.json().await.map_err(err)?;
        if s["status"] == "Closed" {
            break;
        }
        ensure(Instant::now() < deadline, || "markets did not close".into())?;
        tokio::time::sleep(Duration::from_millis(20)).await;
    }

    let mut logs: BTreeMap<String, Vec<TradeRecord>> = BTreeMap::new();
    for i in 0..4 {
        let m = format!("M{i}");
        let q: serde_json::Value = http.get(format!("{base}/events/live/markets/{m}/quote")).send().await.map_err(err)?.json().await.map_err(err)?;
        let sum = q["priceYes"].as_f64().unwrap() + q["priceNo"].as_f64().unwrap();
        ensure((sum - 1.0).abs() < 1e-12 && q["status"] == "Closed", || format!("{m} quote {q}"))?;
        let log: Vec<TradeRecord> = http.get(format!("{base}/events/live/markets/{m}/trades")).send().await.map_err(err)?.json().await.map_err(err)?;
        for w in log.windows(2) {
            let (x, y) = (&w[0], &w[1]);
            ensure(x.executed_at_iteration <= y.executed_at_iteration, || format!("{m}: iterations out of order"))?;
            if x.executed_at_iteration == y.executed_at_iteration {
                ensure(!(x.order.trader_kind == TraderKind::Human && y.order.trader_kind == TraderKind::Agent), || {
                    format!("{m}: agent order after human order in iteration {}", x.executed_at_iteration)
                })?;
                if x.order.trader_kind == TraderKind::Human && y.order.trader_kind == TraderKind::Human {
                    ensure(x.order.sequence < y.order.sequence, || format!("{m}: human orders out of FIFO order"))?;
                }
            }
        }
        logs.insert(m, log);
    }
    let first: Vec<u64> = logs["M0"]
        .iter()
        .filter(|t| t.executed_at_iteration == 1 && t.order.trader_kind == TraderKind::Human)
        .map(|t| t.order.sequence)
        .collect();
    let expected_first = vec![acks[0], acks[1], acks[2], acks[3], acks[7]];
    ensure(first == expected_first, || format!("M0 iteration-1 humans {first:?}, expected {expected_first:?}"))?;
    let agents_m0 = logs["M0"].iter().filter(|t| t.order.trader_kind == TraderKind::Agent && t.accepted).count();
    ensure(agents_m0 > 0, || "no agent trades in M0".into())?;

    let outcomes = serde_json::json!({ "M0": "Replicated", "M1": "NotReplicated", "M2": "Replicated", "M3": "NotReplicated" });
    let report: serde_json::Value = http
        .post(format!("{base}/events/live/close"))
        .json(&serde_json::json!({ "outcomes": outcomes, "payoutSeed": 2024 }))
        .send()
        .await
        .map_err(err)?
        .json()
        .await
        .map_err(err)?;
    let selected = report["selectedMarket"].as_str().unwrap().to_string();
    let winning = if outcomes[&selected] == "Replicated" { AssetSide::WillReplicate } else { AssetSide::WillNotReplicate };
    let mut worst: f64 = 0.0;
    for p in report["payouts"].as_array().unwrap() {
        let pid = p["participantId"].as_str().unwrap();
        // independent reconstruction from the trade logs
        let mut cash = 25.0;
        let mut winning_shares = 0i64;
        let mut accepted = 0;
        for (m, log) in &logs {
            for t in log.iter().filter(|t| t.accepted && t.order.trader_id == pid) {
                cash += t.cash_delta;
                accepted += 1;
                if *m == selected && t.order.side == winning {
                    winning_shares += if t.order.direction == Direction::Buy { 1 } else { -1 };
                }
            }
        }
        let expected = cash + if accepted >= 1 { winning_shares as f64 } else { 0.0 };
        let paid = p["payout"].as_f64().unwrap();
        worst = worst.max((paid - expected).abs());
        ensure((paid - expected).abs() <= 1e-6, || format!("{pid}: paid {paid}, expected {expected}"))?;
        let pf: Portfolio = http
            .get(format!("{base}/events/live/portfolio"))
            .header("x-session-token", tokens[pid].clone())
            .send()
            .await
            .map_err(err)?
            .json()
            .await
            .map_err(err)?;
        let held = pf.holdings[&selected].get(winning) as f64;
        ensure((paid - (pf.cash + held)).abs() <= 1e-6, || format!("{pid}: payout disagrees with portfolio"))?;
    }
    ensure(report["reconciliationGap"].as_f64().unwrap().abs() <= 1e-6, || format!("gap {}", report["reconciliationGap"]))?;
    let csv = http.get(format!("{base}/events/live/stats/payouts.csv")).send().await.map_err(err)?.text().await.map_err(err)?;
    ensure(csv.lines().count() == 4, || format!("payout CSV has {} lines", csv.lines().count()))?;
    server.abort();
    Ok(format!(
        "3 participants, selected market {selected}, payouts match trade-log reconstruction within {worst:.1e}; agents-first and FIFO hold in all 4 logs"
    ))
}

trait SendCheck {
    async fn send_check(self) -> Result<serde_json::Value, String>;
}

impl<F> SendCheck for F
where
    F: std::future::Future<Output = reqwest::Result<reqwest::Response>>,
{
    async fn send_check(self) -> Result<serde_json::Value, String> {
        let r = self.await.map_err(|e| e.to_string())?;
        if r.status() != 202 {
            return Err(format!("order returned {}", r.status()));
        }
        r.json().await.map_err(|e| e.to_string())
    }
}

fn service_conformance() -> Check {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap()
        .block_on(service_driver())
}

fn main() {
    let mut suite = Suite { failed: 0 };
    let s = Duration::from_secs;
    suite.run("Comparison table arithmetic", s(1), table_arithmetic);
    suite.run("Summary statistics", s(1), summary_statistics);
    suite.run("Wilcoxon reproduction", s(10), wilcoxon_reproduction);
    suite.run("LMSR property suite", s(60), lmsr_properties);
    suite.run("No-trade default", s(60), no_trade_default);
    suite.run("Agent-waking regression", s(60), agent_waking);
    suite.run("Service protocol conformance", s(120), service_conformance);
    suite.run("Determinism/replay", s(300), determinism_and_replay);
    suite.run("Learning signal", s(600), learning_signal);
    if suite.failed > 0 {
        println!("{} acceptance criteria failed", suite.failed);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
