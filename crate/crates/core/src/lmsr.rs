//! Two-outcome logarithmic market scoring rule.
//!
//! Cost potential `C(q) = b ln(exp(q_yes / b) + exp(q_no / b))`, prices are
//! the softmax of the quantities. All functions are pure and total for
//! `b > 0`.

/// Numerically stable `b * ln(exp(q_yes/b) + exp(q_no/b))`.
pub fn cost(q_yes: f64, q_no: f64, b: f64) -> f64 {
    let (hi, lo) = if q_yes >= q_no { (q_yes, q_no) } else { (q_no, q_yes) };
    hi + b * ((lo - hi) / b).exp().ln_1p()
}

/// Instantaneous price of the yes side, `exp(q_yes/b) / (exp(q_yes/b) + exp(q_no/b))`.
pub fn price_yes(q_yes: f64, q_no: f64, b: f64) -> f64 {
    logistic((q_yes - q_no) / b)
}

pub fn price_no(q_yes: f64, q_no: f64, b: f64) -> f64 {
    logistic((q_no - q_yes) / b)
}

/// Change in the cost potential when `delta` shares are added to a side whose
/// current price is `price_side`.
///
/// `C(q + delta e_side) - C(q) = b ln(1 + p_side (exp(delta/b) - 1))`, which
/// avoids cancellation between two large potentials.
pub fn cost_delta(price_side: f64, delta: f64, b: f64) -> f64 {
    b * (price_side * (delta / b).exp_m1()).ln_1p()
}

/// Worst-case market-maker loss for a binary market.
pub fn max_loss(b: f64) -> f64 {
    b * std::f64::consts::LN_2
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
