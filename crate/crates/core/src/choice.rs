//! Multinomial logit mode choice over {exclusive, shared, outside}.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exclusive,
    Shared,
    Outside,
}

impl Mode {
    pub fn service(self) -> Option<Service> {
        match self {
            Mode::Exclusive => Some(Service::Exclusive),
            Mode::Shared => Some(Service::Shared),
            Mode::Outside => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Exclusive => "exclusive",
            Mode::Shared => "shared",
            Mode::Outside => "outside",
        }
    }
}

/// Service type a vehicle is dedicated to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Service {
    Exclusive,
    Shared,
}

impl Service {
    pub const ALL: [Service; 2] = [Service::Exclusive, Service::Shared];

    pub fn mode(self) -> Mode {
        match self {
            Service::Exclusive => Mode::Exclusive,
            Service::Shared => Mode::Shared,
        }
    }

    pub fn capacity(self) -> usize {
        match self {
            Service::Exclusive => 1,
            Service::Shared => 2,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Utility coefficients. All three betas are per-unit disutilities (negative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceParams {
    /// Utility per currency unit, before the multiplier.
    pub beta_p: f64,
    /// Utility per second of waiting.
    pub beta_w: f64,
    /// Utility per second in the vehicle.
    pub beta_t: f64,
    /// Scale applied to `beta_p`; calibrated so dynamic prices track the static fare.
    pub price_multiplier: f64,
    /// Alternative-specific constants, zero unless configured.
    pub asc_e: f64,
    pub asc_s: f64,
    pub asc_o: f64,
}

impl Default for ChoiceParams {
    fn default() -> Self {
        Self {
            beta_p: -0.074,
            beta_w: -0.004,
            beta_t: -0.002,
            price_multiplier: 1.0,
            asc_e: 0.0,
            asc_s: 0.0,
            asc_o: 0.0,
        }
    }
}

/// Price, wait and in-vehicle time of one alternative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeOffer {
    pub price: f64,
    pub wait: f64,
    pub travel: f64,
}

/// Utility split into the price term and everything else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityParts {
    pub price: f64,
    pub rest: f64,
}

impl UtilityParts {
    pub fn total(&self) -> f64 {
        self.price + self.rest
    }
}

impl ChoiceParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.beta_p, self.beta_w, self.beta_t, self.price_multiplier, self.asc_e, self.asc_s, self.asc_o];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("choice parameters must be finite".into()));
        }
        if self.effective_beta_p() >= 0.0 {
            return Err(Error::Param(format!(
                "effective beta_p must be negative, got {}",
                self.effective_beta_p()
            )));
        }
        Ok(())
    }

    /// `price_multiplier * beta_p`, the coefficient every pricing routine sees.
    pub fn effective_beta_p(&self) -> f64 {
        self.price_multiplier * self.beta_p
    }

    pub fn with_multiplier(mut self, multiplier: f64) -> Self {
        self.price_multiplier = multiplier;
        self
    }

    fn asc(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Exclusive => self.asc_e,
            Mode::Shared => self.asc_s,
            Mode::Outside => self.asc_o,
        }
    }

    pub fn utility_parts(&self, mode: Mode, offer: &ModeOffer) -> UtilityParts {
        UtilityParts {
            price: self.effective_beta_p() * offer.price,
            rest: self.beta_w * offer.wait + self.beta_t * offer.travel + self.asc(mode),
        }
    }

    /// Non-price utility of a mode, the part pricing treats as fixed.
    pub fn assignment_utility(&self, mode: Mode, wait: f64, travel: f64) -> f64 {
        self.beta_w * wait + self.beta_t * travel + self.asc(mode)
    }

    /// Utility of an offer without alternative-specific constants.
    pub fn utility(&self, offer: &ModeOffer) -> f64 {
        self.effective_beta_p() * offer.price + self.beta_w * offer.wait + self.beta_t * offer.travel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceProbabilities {
    pub p_e: f64,
    pub p_s: f64,
    pub p_o: f64,
}

impl ChoiceProbabilities {
    pub fn get(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Exclusive => self.p_e,
            Mode::Shared => self.p_s,
            Mode::Outside => self.p_o,
        }
    }

    /// The mode whose CDF bucket (in e, s, o order) contains `u` in [0, 1).
    pub fn pick(&self, u: f64) -> Mode {
        if u < self.p_e {
            Mode::Exclusive
        } else if u < self.p_e + self.p_s {
            Mode::Shared
        } else {
            Mode::Outside
        }
    }
}

/// Softmax of three utilities, shifted by their maximum.
pub fn choice_probabilities(u_e: f64, u_s: f64, u_o: f64) -> ChoiceProbabilities {
    let m = u_e.max(u_s).max(u_o);
    let (a, b, c) = ((u_e - m).exp(), (u_s - m).exp(), (u_o - m).exp());
    let z = a + b + c;
    let p_e = a / z;
    let p_s = b / z;
    // close the simplex exactly
    let p_o = (1.0 - p_e - p_s).max(0.0);
    ChoiceProbabilities { p_e, p_s, p_o }
}

/// Inverse-CDF draw in fixed (e, s, o) order.
pub fn sample_choice<R: Rng + ?Sized>(probs: &ChoiceProbabilities, rng: &mut R) -> Mode {
    probs.pick(rng.gen::<f64>())
}
