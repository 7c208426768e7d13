//! Parametric failure-time families for contact intervals and external
//! contact times.
//!
//! All three families share a rate-shape parameterization in which the
//! cumulative hazard is a function of `(rate * t)^shape`:
//!
//! | family       | hazard h(t)                          | cumulative hazard H(t) |
//! |--------------|--------------------------------------|------------------------|
//! | exponential  | λ                                    | λt                     |
//! | Weibull      | γλ(λt)^(γ-1)                         | (λt)^γ                 |
//! | log-logistic | γλ(λt)^(γ-1) / (1 + (λt)^γ)          | ln(1 + (λt)^γ)         |
//!
//! A Weibull or log-logistic family with shape 1 reduces to the exponential
//! (Weibull) or to a hazard that decays like 1/t (log-logistic), and the
//! median of the log-logistic is always 1/λ.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this, `ln t` is clamped so that `(λt)^γ` underflows cleanly to zero.
const TINY_TIME: f64 = 1e-300;
const LN_TINY_TIME: f64 = -745.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HazardFamily {
    Exponential,
    Weibull,
    #[serde(rename = "loglogistic")]
    LogLogistic,
}

impl HazardFamily {
    pub const ALL: [HazardFamily; 3] = [
        HazardFamily::Exponential,
        HazardFamily::Weibull,
        HazardFamily::LogLogistic,
    ];

    /// Whether the family carries a free shape parameter.
    pub fn has_shape(self) -> bool {
        !matches!(self, HazardFamily::Exponential)
    }

    pub fn name(self) -> &'static str {
        match self {
            HazardFamily::Exponential => "exponential",
            HazardFamily::Weibull => "weibull",
            HazardFamily::LogLogistic => "loglogistic",
        }
    }

    pub fn hazard(self, params: RateShape, t: f64) -> Result<f64> {
        check_time(t)?;
        let shape = self.effective_shape(params);
        if shape == 1.0 && !matches!(self, HazardFamily::LogLogistic) {
            return Ok(params.rate);
        }
        Ok(self.hazard_ln_rate(params.rate.ln(), shape, t))
    }

    pub fn cumulative_hazard(self, params: RateShape, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.cumulative_hazard_ln_rate(params.rate.ln(), self.effective_shape(params), t))
    }

    pub fn survival(self, params: RateShape, t: f64) -> Result<f64> {
        check_time(t)?;
        let shape = self.effective_shape(params);
        let ln_rate = params.rate.ln();
        Ok(match self {
            HazardFamily::LogLogistic => 1.0 / (1.0 + scaled_power(ln_rate, shape, t)),
            _ => (-self.cumulative_hazard_ln_rate(ln_rate, shape, t)).exp(),
        })
    }

    /// Inverse-transform sample: the time `t` with `S(t) = 1 - u`.
    pub fn sample_time(self, params: RateShape, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::domain(format!(
                "uniform variate must lie in (0, 1), got {u}"
            )));
        }
        let shape = self.effective_shape(params);
        let t = match self {
            HazardFamily::Exponential => -(-u).ln_1p() / params.rate,
            HazardFamily::Weibull => (-(-u).ln_1p()).powf(1.0 / shape) / params.rate,
            HazardFamily::LogLogistic => (u / (1.0 - u)).powf(1.0 / shape) / params.rate,
        };
        Ok(t)
    }

    fn effective_shape(self, params: RateShape) -> f64 {
        if self.has_shape() {
            params.shape
        } else {
            1.0
        }
    }

    /// Cumulative hazard with the rate given on the log scale. No argument
    /// checks; `t` must be non-negative.
    #[inline]
    pub(crate) fn cumulative_hazard_ln_rate(self, ln_rate: f64, shape: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            HazardFamily::Exponential => ln_rate.exp() * t,
            HazardFamily::Weibull => {
                if shape == 1.0 {
                    ln_rate.exp() * t
                } else {
                    scaled_power(ln_rate, shape, t)
                }
            }
            HazardFamily::LogLogistic => scaled_power(ln_rate, shape, t).ln_1p(),
        }
    }

    /// Hazard with the rate given on the log scale. At `t = 0` the hazard is
    /// `+inf` for shape < 1, `λ` for shape 1, and 0 for shape > 1.
    #[inline]
    pub(crate) fn hazard_ln_rate(self, ln_rate: f64, shape: f64, t: f64) -> f64 {
        let rate = ln_rate.exp();
        if matches!(self, HazardFamily::Exponential) || shape == 1.0 {
            return match self {
                HazardFamily::LogLogistic => rate / (1.0 + scaled_power(ln_rate, 1.0, t)),
                _ => rate,
            };
        }
        if t <= 0.0 {
            return if shape < 1.0 { f64::INFINITY } else { 0.0 };
        }
        let ln_t = clamped_ln(t);
        let weibull = shape * (ln_rate + (shape - 1.0) * (ln_rate + ln_t)).exp();
        match self {
            HazardFamily::LogLogistic => weibull / (1.0 + (shape * (ln_rate + ln_t)).exp()),
            _ => weibull,
        }
    }
}

impl fmt::Display for HazardFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HazardFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" => Ok(HazardFamily::Exponential),
            "weibull" => Ok(HazardFamily::Weibull),
            "loglogistic" | "log-logistic" => Ok(HazardFamily::LogLogistic),
            other => Err(Error::schema(format!(
                "unknown distribution family `{other}` (expected exponential, weibull, or loglogistic)"
            ))),
        }
    }
}

/// Rate and shape of a failure-time distribution, both strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateShape {
    pub rate: f64,
    pub shape: f64,
}

impl RateShape {
    pub fn new(rate: f64, shape: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::domain(format!("rate must be positive, got {rate}")));
        }
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::domain(format!("shape must be positive, got {shape}")));
        }
        Ok(RateShape { rate, shape })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(rate, 1.0)
    }

    /// Build from the log-scale values used by the optimizer.
    pub fn from_log(ln_rate: f64, ln_shape: f64) -> Result<Self> {
        Self::new(ln_rate.exp(), ln_shape.exp())
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("time must be non-negative, got {t}")))
    }
}

#[inline]
fn clamped_ln(t: f64) -> f64 {
    if t < TINY_TIME {
        LN_TINY_TIME
    } else {
        t.ln()
    }
}

/// `(λt)^γ` evaluated as `exp(γ(ln λ + ln t))`.
#[inline]
fn scaled_power(ln_rate: f64, shape: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    (shape * (ln_rate + clamped_ln(t))).exp()
}
