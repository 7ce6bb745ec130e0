//! Scores a hand-entered comparison of twelve markets and runs the signed-rank test.

use replimarket::eval::{summarize, MarketResult};
use replimarket::market::Outcome::{self, NotReplicated as NR, Replicated as R};

const ROWS: [(&str, Outcome, f64, f64, bool); 12] = [
    // id, outcome, hybrid price, artificial price, agents traded
    ("E1M1", R, 0.66, 0.41, true),
    ("E1M2", R, 0.36, 0.50, false),
    ("E1M3", R, 0.64, 0.52, true),
    ("E1M4", NR, 0.72, 0.50, false),
    ("E2M1", R, 0.38, 0.41, true),
    ("E2M2", R, 0.58, 0.50, false),
    ("E2M3", R, 0.80, 0.52, true),
    ("E2M4", NR, 0.47, 0.50, false),
    ("E3M1", R, 0.61, 0.50, false),
    ("E3M2", R, 0.47, 0.46, true),
    ("E3M3", NR, 0.76, 0.86, true),
    ("E3M4", R, 0.49, 0.42, true),
];

fn main() {
    let hybrid: Vec<_> = ROWS.iter().map(|r| MarketResult::score(r.0, r.2, r.1, 1, 1)).collect();
    let artificial: Vec<_> = ROWS.iter().map(|r| MarketResult::score(r.0, r.3, r.1, u64::from(r.4), 0)).collect();
    let s = summarize(&hybrid, &artificial).unwrap();
    s.write_table(std::io::stdout().lock(), "hybrid", "artificial").unwrap();
    println!("mean AE: hybrid {:.3}, artificial {:.3}", s.mean_ae_a, s.mean_ae_b);
    println!("hybrid lower in {} of {}", s.count_a_lower, s.rows.len());
    let w = s.wilcoxon().unwrap();
    println!("W+ = {}, z = {:.3}, two-sided p = {:.3}", w.w_plus, w.z, w.p_two_sided);
}
