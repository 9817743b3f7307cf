//! Sequential two-product pricing for a single request.
//!
//! The platform offers an exclusive and a shared ride against an outside
//! option under a logit choice model. Expected profit
//!
//! ```text
//! (e^{b p_e + u_e} (p_e - c_e) + e^{b p_s + u_s} (p_s - c_s)) / (e^{b p_e + u_e} + e^{b p_s + u_s} + e^{u_o})
//! ```
//!
//! has a single critical point, available in closed form through the Lambert W
//! function; both services then carry the same markup over their cost.

use serde::{Deserialize, Serialize};

use crate::choice::{choice_probabilities, ChoiceProbabilities};
use crate::error::{Error, Result};
pub use crate::lambert::{lambert_w, lambert_w_exp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdInstance {
    /// Non-price utility of the exclusive ride.
    pub u_e: f64,
    /// Non-price utility of the shared ride.
    pub u_s: f64,
    /// Full utility of the outside option (its price folded in).
    pub u_o: f64,
    /// Total cost (operational plus retrospective) of each service.
    pub c_e: f64,
    pub c_s: f64,
    /// Effective price coefficient, negative.
    pub beta_p: f64,
}

impl SpdInstance {
    pub fn validate(&self) -> Result<()> {
        let all = [self.u_e, self.u_s, self.u_o, self.c_e, self.c_s, self.beta_p];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("pricing instance has non-finite fields".into()));
        }
        if self.beta_p >= 0.0 {
            return Err(Error::Param("beta_p must be negative".into()));
        }
        Ok(())
    }

    /// Logit probabilities at the given prices; an infinite price removes the service.
    pub fn probabilities(&self, p_e: f64, p_s: f64) -> ChoiceProbabilities {
        choice_probabilities(self.beta_p * p_e + self.u_e, self.beta_p * p_s + self.u_s, self.u_o)
    }
}

/// A price menu. Services that are not offered carry an infinite price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceQuote {
    pub p_e: f64,
    pub p_s: f64,
    pub expected_profit: f64,
    pub probabilities: ChoiceProbabilities,
}

impl PriceQuote {
    pub fn no_sale() -> Self {
        Self {
            p_e: f64::INFINITY,
            p_s: f64::INFINITY,
            expected_profit: 0.0,
            probabilities: ChoiceProbabilities { p_e: 0.0, p_s: 0.0, p_o: 1.0 },
        }
    }

    pub fn offers_exclusive(&self) -> bool {
        self.p_e.is_finite()
    }

    pub fn offers_shared(&self) -> bool {
        self.p_s.is_finite()
    }
}

fn margin_term(price: f64, cost: f64) -> f64 {
    if price.is_infinite() { 0.0 } else { price - cost }
}

/// Expected profit of a menu, evaluated with shifted exponentials.
pub fn expected_profit_spd(inst: &SpdInstance, p_e: f64, p_s: f64) -> f64 {
    let a = inst.beta_p * p_e + inst.u_e;
    let b = inst.beta_p * p_s + inst.u_s;
    let c = inst.u_o;
    let m = a.max(b).max(c);
    let (wa, wb, wc) = ((a - m).exp(), (b - m).exp(), (c - m).exp());
    let num = if wa > 0.0 { wa * margin_term(p_e, inst.c_e) } else { 0.0 }
        + if wb > 0.0 { wb * margin_term(p_s, inst.c_s) } else { 0.0 };
    num / (wa + wb + wc)
}

fn quote_at(inst: &SpdInstance, p_e: f64, p_s: f64) -> PriceQuote {
    PriceQuote { p_e, p_s, expected_profit: expected_profit_spd(inst, p_e, p_s), probabilities: inst.probabilities(p_e, p_s) }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// The unique critical point of the two-product objective.
///
/// Evaluates `p_e = (log(D W(A e^{u_e + b c_e - 1} / D) / A) - u_e) / b` with
/// `A = 1 + e^{u_s - u_e + b c_s - b c_e}` and `D = e^{u_o}`, in log space, and
/// sets `p_s = p_e - (c_e - c_s)`. The no-sale limit (profit 0) is returned
/// instead if it is better.
pub fn spd_optimal_prices(inst: &SpdInstance) -> Result<PriceQuote> {
    inst.validate()?;
    let b = inst.beta_p;
    let shift = inst.u_s - inst.u_e + b * inst.c_s - b * inst.c_e;
    let log_a = log_add_exp(0.0, shift);
    let log_arg = log_a + inst.u_e + b * inst.c_e - 1.0 - inst.u_o;
    let (_, ln_w) = lambert_w_exp(log_arg);
    let p_e = (inst.u_o + ln_w - log_a - inst.u_e) / b;
    let p_s = p_e - (inst.c_e - inst.c_s);
    let quote = quote_at(inst, p_e, p_s);
    if quote.expected_profit >= 0.0 {
        Ok(quote)
    } else {
        Ok(PriceQuote::no_sale())
    }
}

/// Best price when only one service can be offered.
///
/// The first-order condition in the markup `m = p - c`,
/// `1 + b m (1 - P(m)) = 0`, has a single root on `m > 0`; it is bracketed by
/// doubling and refined by bisection.
pub fn spd_single_price(u: f64, u_o: f64, cost: f64, beta_p: f64) -> Result<(f64, f64)> {
    if beta_p >= 0.0 || ![u, u_o, cost, beta_p].iter().all(|v| v.is_finite()) {
        return Err(Error::Param("invalid single-product instance".into()));
    }
    let prob = |m: f64| {
        let a = u + beta_p * (cost + m);
        1.0 / (1.0 + (u_o - a).exp())
    };
    let foc = |m: f64| 1.0 + beta_p * m * (1.0 - prob(m));
    let mut hi = -1.0 / beta_p;
    while foc(hi) > 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Domain("single-product markup diverged".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if foc(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let m = 0.5 * (lo + hi);
    Ok((cost + m, m * prob(m)))
}

/// One candidate vehicle for a service, with its total cost and the
/// non-price utility of the ride it would provide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub vehicle: usize,
    pub cost: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuoteDecision {
    NoOffer,
    Offer { quote: PriceQuote, exclusive: Option<Candidate>, shared: Option<Candidate> },
}

/// Lowest cost, then lowest vehicle id.
pub fn cheapest(candidates: &[Candidate]) -> Option<Candidate> {
    candidates
        .iter()
        .copied()
        .min_by(|a, b| a.cost.total_cmp(&b.cost).then(a.vehicle.cmp(&b.vehicle)))
}

/// Picks the cheapest feasible vehicle of each type and prices the menu.
pub fn spd_handle_request(
    exclusive: &[Candidate],
    shared: &[Candidate],
    u_o: f64,
    beta_p: f64,
) -> Result<QuoteDecision> {
    let v_e = cheapest(exclusive);
    let v_s = cheapest(shared);
    let quote = match (v_e, v_s) {
        (None, None) => return Ok(QuoteDecision::NoOffer),
        (Some(e), Some(s)) => {
            let inst = SpdInstance { u_e: e.utility, u_s: s.utility, u_o, c_e: e.cost, c_s: s.cost, beta_p };
            spd_optimal_prices(&inst)?
        }
        (Some(e), None) => {
            let (p, _) = spd_single_price(e.utility, u_o, e.cost, beta_p)?;
            let inst = SpdInstance { u_e: e.utility, u_s: 0.0, u_o, c_e: e.cost, c_s: 0.0, beta_p };
            quote_at(&inst, p, f64::INFINITY)
        }
        (None, Some(s)) => {
            let (p, _) = spd_single_price(s.utility, u_o, s.cost, beta_p)?;
            let inst = SpdInstance { u_e: 0.0, u_s: s.utility, u_o, c_e: 0.0, c_s: s.cost, beta_p };
            quote_at(&inst, f64::INFINITY, p)
        }
    };
    Ok(QuoteDecision::Offer { quote, exclusive: v_e, shared: v_s })
}
