//! Walks a market through a few single-share trades and prints the quotes.

use replimarket::lmsr;
use replimarket::market::{AssetSide, Direction, Ledger, MarketState, Order, Outcome, TraderKind};

fn main() {
    let b = 10.0;
    let mut market = MarketState::new("demo", b, 10).unwrap();
    let mut ledger = Ledger::new();
    ledger.open_account("alice", 25.0);
    ledger.open_account("bob", 25.0);

    let script = [
        ("alice", AssetSide::WillReplicate, Direction::Buy),
        ("alice", AssetSide::WillReplicate, Direction::Buy),
        ("bob", AssetSide::WillNotReplicate, Direction::Buy),
        ("alice", AssetSide::WillReplicate, Direction::Sell),
        ("bob", AssetSide::WillReplicate, Direction::Sell),
    ];
    market.begin_iteration().unwrap();
    println!("open: P(yes) = {:.4}", market.price_yes());
    for (seq, (who, side, dir)) in script.into_iter().enumerate() {
        let rec = market.execute(
            &mut ledger,
            Order {
                trader_id: who.into(),
                trader_kind: TraderKind::Human,
                side,
                direction: dir,
                sequence: seq as u64,
            },
        );
        let status = if rec.accepted { "ok" } else { "rejected" };
        println!(
            "{who:>5} {dir:?} {side:?}: {status:<8} cash {:+.4}  P(yes) = {:.4}",
            rec.cash_delta,
            market.price_yes()
        );
    }
    println!("worst-case maker loss: {:.4}", lmsr::max_loss(b));
    market.close().unwrap();
    for (who, payout) in market.settle(&ledger, Outcome::Replicated).unwrap() {
        println!("{who} receives {payout:.4}");
    }
}
