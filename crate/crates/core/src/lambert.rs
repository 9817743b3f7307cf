//! Principal branch of the Lambert W function on the nonnegative axis.

use crate::error::{Error, Result};

const MAX_ITER: usize = 64;

fn initial_guess(x: f64) -> f64 {
    if x < 3.0 {
        let l = x.ln_1p();
        l * (1.0 - (1.0 + l).ln() / (2.0 + l))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

/// Solves `w * exp(w) = x` for `x >= 0` by Halley iteration.
pub fn lambert_w(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("lambert_w needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let mut w = initial_guess(x);
    for _ in 0..MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        let next = w - step;
        if (next - w).abs() <= 4.0 * f64::EPSILON * next.abs().max(f64::MIN_POSITIVE) {
            w = next;
            break;
        }
        w = next;
    }
    Ok(polish(w, x))
}

/// One Newton correction in extended form; removes the last-ulp bias Halley
/// can leave for large arguments.
fn polish(w: f64, x: f64) -> f64 {
    let ew = w.exp();
    let f = w * ew - x;
    let df = ew * (w + 1.0);
    if df == 0.0 || !df.is_finite() {
        return w;
    }
    let candidate = w - f / df;
    let residual = |v: f64| (v * v.exp() - x).abs();
    if residual(candidate) < residual(w) { candidate } else { w }
}

/// `W(exp(log_x))` together with `ln W`, usable when `exp(log_x)` would
/// overflow or underflow.
pub fn lambert_w_exp(log_x: f64) -> (f64, f64) {
    if log_x < -40.0 {
        // W(x) = x - x^2 + ..., ln W = ln x - W + O(x^2)
        let x = log_x.exp();
        let w = x * (1.0 - x);
        return (w, log_x - w);
    }
    if log_x < 700.0 {
        let w = lambert_w(log_x.exp()).expect("exp is nonnegative");
        return (w, w.ln());
    }
    // w + ln w = log_x, Newton from the asymptotic guess
    let mut w = log_x - log_x.ln();
    for _ in 0..MAX_ITER {
        let f = w + w.ln() - log_x;
        let next = w - f / (1.0 + 1.0 / w);
        if (next - w).abs() <= 4.0 * f64::EPSILON * next {
            w = next;
            break;
        }
        w = next;
    }
    (w, w.ln())
}
