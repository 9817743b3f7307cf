//! Joint pricing of a two-request pooled matching.
//!
//! Each request `i` is offered an exclusive and a shared ride. With `C` the
//! cost saved when both choose shared and ride together, expected profit is
//!
//! ```text
//! sum_i sum_m P_im (p_im - c_im) + P_1s P_2s C
//! ```
//!
//! Prices map one-to-one onto interior choice probabilities, and in
//! probability space `beta * profit` becomes
//!
//! ```text
//! f(P) = sum_i sum_m P_im (ln(D_i P_im / phi_i) - u_im - beta c_im) + beta C P_1s P_2s,
//! phi_i = 1 - P_is - P_ie,  D_i = exp(u_io)
//! ```
//!
//! which is convex whenever `min(c_1e, c_2e) <= -1/beta` (given the pooled
//! route costs at least as much as either exclusive ride). Convex instances
//! are solved by damped Newton kept strictly inside the simplices; the rest
//! fall back to a grid over `P_1s`, for which the remaining three-variable
//! problem is always convex.

use nalgebra::{DMatrix, DVector, Matrix4};
use serde::{Deserialize, Serialize};

use crate::choice::choice_probabilities;
use crate::error::{Error, Result};
use crate::spd_pricing::{spd_optimal_prices, SpdInstance};

/// Lower clamp for probabilities and the outside share before taking logs.
pub const PROB_FLOOR: f64 = 1e-9;
/// Default grid step of the fallback search.
pub const DEFAULT_GRID_STEP: f64 = 0.01;
const GRAD_TOL: f64 = 1e-9;
const MAX_NEWTON: usize = 200;

/// Per-request data of a pooled matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestSide {
    /// Exclusive cost.
    pub c_e: f64,
    /// Expected cost of a shared ride if the two do not end up pooled.
    pub c_s: f64,
    /// Non-price utilities.
    pub u_e: f64,
    pub u_s: f64,
    /// Outside-option utility; `D = exp(u_o)`.
    pub u_o: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchPricingInstance {
    pub requests: [RequestSide; 2],
    /// Cost of serving both requests in one shared trip.
    pub c_ss: f64,
    /// Effective price coefficient, negative.
    pub beta_p: f64,
}

/// Probabilities ordered `(P_1s, P_1e, P_2s, P_2e)`.
pub type Probs = [f64; 4];
/// Prices ordered `(p_1s, p_1e, p_2s, p_2e)`.
pub type Prices = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchQuote {
    pub prices: Prices,
    pub probabilities: Probs,
    pub expected_profit: f64,
}

impl BatchQuote {
    pub fn no_sale() -> Self {
        Self { prices: [f64::INFINITY; 4], probabilities: [0.0; 4], expected_profit: 0.0 }
    }
}

impl BatchPricingInstance {
    /// `c_1s + c_2s - c_ss`.
    pub fn savings(&self) -> f64 {
        self.requests[0].c_s + self.requests[1].c_s - self.c_ss
    }

    pub fn outside_weight(&self, i: usize) -> f64 {
        self.requests[i].u_o.exp()
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.requests;
        let all = [
            r[0].c_e, r[0].c_s, r[0].u_e, r[0].u_s, r[0].u_o, r[1].c_e, r[1].c_s, r[1].u_e, r[1].u_s, r[1].u_o,
            self.c_ss, self.beta_p,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("batch instance has non-finite fields".into()));
        }
        if self.beta_p >= 0.0 {
            return Err(Error::Param("beta_p must be negative".into()));
        }
        if self.savings() < -1e-12 {
            return Err(Error::Param(format!("pooling savings {} are negative", self.savings())));
        }
        Ok(())
    }

    fn costs(&self) -> [f64; 4] {
        [self.requests[0].c_s, self.requests[0].c_e, self.requests[1].c_s, self.requests[1].c_e]
    }

    fn utilities(&self) -> [f64; 4] {
        [self.requests[0].u_s, self.requests[0].u_e, self.requests[1].u_s, self.requests[1].u_e]
    }

    /// The independent single-request instance of request `i`.
    pub fn spd_instance(&self, i: usize) -> SpdInstance {
        let r = &self.requests[i];
        SpdInstance { u_e: r.u_e, u_s: r.u_s, u_o: r.u_o, c_e: r.c_e, c_s: r.c_s, beta_p: self.beta_p }
    }
}

fn is_interior(p: &Probs) -> bool {
    p.iter().all(|&v| v > 0.0) && p[0] + p[1] < 1.0 && p[2] + p[3] < 1.0
}

/// Pulls a probability vector into the clamped interior.
pub fn interiorize(p: &Probs) -> Probs {
    let mut q = p.map(|v| v.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR));
    for i in 0..2 {
        let (s, e) = (q[2 * i], q[2 * i + 1]);
        let total = s + e;
        if total > 1.0 - PROB_FLOOR {
            let scale = (1.0 - PROB_FLOOR) / total;
            q[2 * i] = (s * scale).max(PROB_FLOOR);
            q[2 * i + 1] = (e * scale).max(PROB_FLOOR);
        }
    }
    q
}

/// Prices of request `i` that induce the interior probabilities `(P_is, P_ie)`.
pub fn prob_to_price(inst: &BatchPricingInstance, p_s: f64, p_e: f64, i: usize) -> Result<(f64, f64)> {
    let phi = 1.0 - p_s - p_e;
    if !(p_s > 0.0 && p_e > 0.0 && phi > 0.0) {
        return Err(Error::Domain(format!("probabilities ({p_s}, {p_e}) are not interior")));
    }
    let r = &inst.requests[i];
    let price = |p: f64, u: f64| (r.u_o + p.ln() - phi.ln() - u) / inst.beta_p;
    Ok((price(p_s, r.u_s), price(p_e, r.u_e)))
}

/// Logit probabilities induced by a full price vector.
pub fn price_to_prob(inst: &BatchPricingInstance, prices: &Prices) -> Probs {
    let mut out = [0.0; 4];
    for i in 0..2 {
        let r = &inst.requests[i];
        let cp = choice_probabilities(
            inst.beta_p * prices[2 * i + 1] + r.u_e,
            inst.beta_p * prices[2 * i] + r.u_s,
            r.u_o,
        );
        out[2 * i] = cp.p_s;
        out[2 * i + 1] = cp.p_e;
    }
    out
}

fn profit_from(inst: &BatchPricingInstance, prices: &Prices, probs: &Probs) -> f64 {
    let costs = inst.costs();
    let mut total = 0.0;
    for k in 0..4 {
        if probs[k] > 0.0 {
            total += probs[k] * (prices[k] - costs[k]);
        }
    }
    total + probs[0] * probs[2] * inst.savings()
}

/// Expected profit of a price vector.
pub fn batched_expected_profit(inst: &BatchPricingInstance, prices: &Prices) -> f64 {
    profit_from(inst, prices, &price_to_prob(inst, prices))
}

/// `beta * profit` written in probabilities; minimized by the solver.
pub fn transformed_objective(inst: &BatchPricingInstance, p: &Probs) -> f64 {
    let b = inst.beta_p;
    let costs = inst.costs();
    let utils = inst.utilities();
    let mut total = 0.0;
    for i in 0..2 {
        let phi = (1.0 - p[2 * i] - p[2 * i + 1]).max(PROB_FLOOR);
        let ln_d = inst.requests[i].u_o;
        for k in [2 * i, 2 * i + 1] {
            let pk = p[k].max(PROB_FLOOR);
            total += p[k] * (ln_d + pk.ln() - phi.ln() - utils[k] - b * costs[k]);
        }
    }
    total + b * inst.savings() * p[0] * p[2]
}

/// Gradient of [`transformed_objective`].
pub fn transformed_gradient(inst: &BatchPricingInstance, p: &Probs) -> [f64; 4] {
    let b = inst.beta_p;
    let costs = inst.costs();
    let utils = inst.utilities();
    let coupling = b * inst.savings();
    let mut g = [0.0; 4];
    for i in 0..2 {
        let phi = (1.0 - p[2 * i] - p[2 * i + 1]).max(PROB_FLOOR);
        let ln_d = inst.requests[i].u_o;
        for k in [2 * i, 2 * i + 1] {
            let pk = p[k].max(PROB_FLOOR);
            g[k] = ln_d + pk.ln() - phi.ln() + 1.0 / phi - utils[k] - b * costs[k];
        }
    }
    g[0] += coupling * p[2];
    g[2] += coupling * p[0];
    g
}

/// Hessian of [`transformed_objective`], rows and columns ordered
/// `(P_1s, P_1e, P_2s, P_2e)`.
pub fn hessian_at(inst: &BatchPricingInstance, p: &Probs) -> Result<Matrix4<f64>> {
    if !is_interior(p) {
        return Err(Error::Domain(format!("probabilities {p:?} are not interior")));
    }
    let mut h = Matrix4::zeros();
    for i in 0..2 {
        let phi = 1.0 - p[2 * i] - p[2 * i + 1];
        let shared = 1.0 / phi + 1.0 / (phi * phi);
        let (s, e) = (2 * i, 2 * i + 1);
        h[(s, s)] = 1.0 / p[s] + shared;
        h[(e, e)] = 1.0 / p[e] + shared;
        h[(s, e)] = shared;
        h[(e, s)] = shared;
    }
    let coupling = inst.beta_p * inst.savings();
    h[(0, 2)] = coupling;
    h[(2, 0)] = coupling;
    Ok(h)
}

/// True iff `min(c_1e, c_2e) <= -1/beta_p`.
pub fn concavity_certificate(inst: &BatchPricingInstance) -> bool {
    inst.requests[0].c_e.min(inst.requests[1].c_e) <= -1.0 / inst.beta_p
}

/// The sufficient condition the certificate stands in for, `|beta C| <= 1`.
fn savings_within_bound(inst: &BatchPricingInstance) -> bool {
    (inst.beta_p * inst.savings()).abs() <= 1.0
}

/// Damped Newton on the coordinates in `free`, the others held fixed.
/// Iterates stay strictly inside both simplices.
fn newton(inst: &BatchPricingInstance, start: Probs, free: &[usize]) -> Probs {
    let mut x = start;
    let n = free.len();
    for _ in 0..MAX_NEWTON {
        let g_full = transformed_gradient(inst, &x);
        let g = DVector::from_iterator(n, free.iter().map(|&k| g_full[k]));
        if g.amax() <= GRAD_TOL {
            break;
        }
        let h_full = hessian_at(inst, &x).expect("iterates are interior");
        let mut h = DMatrix::from_fn(n, n, |a, b| h_full[(free[a], free[b])]);
        let mut shift = 0.0;
        let dir = loop {
            if let Some(ch) = h.clone().cholesky() {
                break -ch.solve(&g);
            }
            // not positive definite here; regularize
            shift = if shift == 0.0 { 1e-8 } else { shift * 10.0 };
            for a in 0..n {
                h[(a, a)] += shift;
            }
        };
        let slope = g.dot(&dir);
        if slope >= 0.0 || slope.abs() < 1e-30 {
            break;
        }
        let mut full_dir = [0.0; 4];
        for (a, &k) in free.iter().enumerate() {
            full_dir[k] = dir[a];
        }
        // largest step keeping every coordinate and outside share positive
        let mut t_max = f64::INFINITY;
        for k in 0..4 {
            if full_dir[k] < 0.0 {
                t_max = t_max.min(-x[k] / full_dir[k]);
            }
        }
        for i in 0..2 {
            let d_phi = -(full_dir[2 * i] + full_dir[2 * i + 1]);
            let phi = 1.0 - x[2 * i] - x[2 * i + 1];
            if d_phi < 0.0 {
                t_max = t_max.min(-phi / d_phi);
            }
        }
        let mut t = (0.99 * t_max).min(1.0);
        let f0 = transformed_objective(inst, &x);
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = x;
            for k in 0..4 {
                cand[k] += t * full_dir[k];
            }
            if is_interior(&cand) && transformed_objective(inst, &cand) <= f0 + 1e-4 * t * slope {
                x = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    x
}

fn quote_from_probs(inst: &BatchPricingInstance, p: &Probs) -> Result<BatchQuote> {
    let p = interiorize(p);
    let (p1s, p1e) = prob_to_price(inst, p[0], p[1], 0)?;
    let (p2s, p2e) = prob_to_price(inst, p[2], p[3], 1)?;
    let prices = [p1s, p1e, p2s, p2e];
    let expected_profit = profit_from(inst, &prices, &p);
    if expected_profit < 0.0 {
        return Ok(BatchQuote::no_sale());
    }
    Ok(BatchQuote { prices, probabilities: p, expected_profit })
}

/// Start from each request's independent optimum.
fn warm_start(inst: &BatchPricingInstance) -> Result<Probs> {
    let mut p = [0.25; 4];
    for i in 0..2 {
        let q = spd_optimal_prices(&inst.spd_instance(i))?;
        if q.offers_exclusive() {
            p[2 * i] = q.probabilities.p_s;
            p[2 * i + 1] = q.probabilities.p_e;
        }
    }
    Ok(interiorize(&p))
}

/// Best prices for a pooled matching.
pub fn optimize_batch_prices(inst: &BatchPricingInstance) -> Result<BatchQuote> {
    inst.validate()?;
    if concavity_certificate(inst) && savings_within_bound(inst) {
        let p = newton(inst, warm_start(inst)?, &[0, 1, 2, 3]);
        quote_from_probs(inst, &p)
    } else {
        brute_force_batch(inst, DEFAULT_GRID_STEP)
    }
}

/// Profile over `P_1s`: the remaining three coordinates are convex given it.
fn profile(inst: &BatchPricingInstance, p1s: f64, start: &Probs) -> (f64, Probs) {
    let mut x = *start;
    x[0] = p1s;
    // keep request 1's simplex interior around the fixed coordinate
    let room = 1.0 - p1s;
    if x[1] >= room {
        x[1] = 0.5 * room;
    }
    let x = newton(inst, interiorize_partial(x, p1s), &[1, 2, 3]);
    (transformed_objective(inst, &x), x)
}

fn interiorize_partial(mut x: Probs, p1s: f64) -> Probs {
    x = interiorize(&x);
    x[0] = p1s;
    if x[0] + x[1] >= 1.0 {
        x[1] = 0.5 * (1.0 - x[0]);
    }
    x
}

/// Grid search over `P_1s` with an exact convex solve for the rest, then a
/// golden-section refinement around the best grid point.
pub fn brute_force_batch(inst: &BatchPricingInstance, step: f64) -> Result<BatchQuote> {
    inst.validate()?;
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::Param(format!("grid step {step} outside (0, 0.5]")));
    }
    let start = warm_start(inst)?;
    let count = (1.0 / step).round() as usize;
    let clamp = |v: f64| v.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let mut best: Option<(f64, f64, Probs)> = None;
    for k in 0..=count {
        let p1s = clamp((k as f64 * step).min(1.0));
        let (f, x) = profile(inst, p1s, &start);
        if best.as_ref().is_none_or(|b| f < b.0) {
            best = Some((f, p1s, x));
        }
    }
    let (mut f_best, center, mut x_best) = best.expect("grid is nonempty");

    let (mut lo, mut hi) = (clamp(center - step), clamp(center + step));
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut xa) = profile(inst, a, &x_best);
    let (mut fb, mut xb) = profile(inst, b, &x_best);
    for _ in 0..60 {
        if hi - lo < 1e-12 {
            break;
        }
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            xb = xa;
            a = hi - ratio * (hi - lo);
            (fa, xa) = profile(inst, a, &xb);
        } else {
            lo = a;
            a = b;
            fa = fb;
            xa = xb;
            b = lo + ratio * (hi - lo);
            (fb, xb) = profile(inst, b, &xa);
        }
    }
    for (f, x) in [(fa, xa), (fb, xb)] {
        if f < f_best {
            f_best = f;
            x_best = x;
        }
    }
    quote_from_probs(inst, &x_best)
}
