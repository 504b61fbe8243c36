//! Parametric AFT transition-time distributions.
//!
//! Every family is a location-scale family on the log-time axis:
//! `ln v = location + scale · e`, with `e` drawn from a standard error
//! distribution (minimum extreme value, logistic or normal). All functions
//! first map `v` to the standardized error `e` and evaluate there, which
//! keeps tails in log space and makes the quantiles closed form.
//!
//! | family      | error law        | F(v)                  |
//! |-------------|------------------|-----------------------|
//! | weibull     | min extreme value| 1 − exp(−(v/γ)^η)     |
//! | loglogistic | logistic         | 1 / (1 + (v/γ)^−η)    |
//! | lognormal   | normal           | Φ((ln v − μ)/σ)       |
//! | exponential | weibull, σ = 1   | 1 − exp(−v/γ)         |
//!
//! with η = 1/σ, γ = exp(location), μ = location.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{
    norm_cdf, norm_isf, norm_ln_pdf, norm_ln_sf, norm_ppf, norm_sf, softplus,
};

/// Default lower bound on the probability mass of a truncation interval.
pub const DEFAULT_MASS_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Weibull,
    Loglogistic,
    Lognormal,
    Exponential,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Weibull,
        Family::Loglogistic,
        Family::Lognormal,
        Family::Exponential,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Weibull => "weibull",
            Family::Loglogistic => "loglogistic",
            Family::Lognormal => "lognormal",
            Family::Exponential => "exponential",
        }
    }

    /// Exponential pins the scale to 1; it has no free scale parameter.
    pub fn has_fixed_scale(self) -> bool {
        self == Family::Exponential
    }

    #[inline]
    pub(crate) fn error_ln_pdf(self, e: f64) -> f64 {
        match self {
            Family::Weibull | Family::Exponential => e - e.exp(),
            Family::Loglogistic => -e.abs() - 2.0 * (-e.abs()).exp().ln_1p(),
            Family::Lognormal => norm_ln_pdf(e),
        }
    }

    #[inline]
    pub(crate) fn error_cdf(self, e: f64) -> f64 {
        match self {
            Family::Weibull | Family::Exponential => -(-e.exp()).exp_m1(),
            Family::Loglogistic => 1.0 / (1.0 + (-e).exp()),
            Family::Lognormal => norm_cdf(e),
        }
    }

    #[inline]
    pub(crate) fn error_sf(self, e: f64) -> f64 {
        match self {
            Family::Weibull | Family::Exponential => (-e.exp()).exp(),
            Family::Loglogistic => 1.0 / (1.0 + e.exp()),
            Family::Lognormal => norm_sf(e),
        }
    }

    #[inline]
    pub(crate) fn error_ln_sf(self, e: f64) -> f64 {
        match self {
            Family::Weibull | Family::Exponential => -e.exp(),
            Family::Loglogistic => -softplus(e),
            Family::Lognormal => norm_ln_sf(e),
        }
    }

    #[inline]
    pub(crate) fn error_ln_cdf(self, e: f64) -> f64 {
        match self {
            Family::Weibull | Family::Exponential => (-(-e.exp()).exp_m1()).ln(),
            Family::Loglogistic => -softplus(-e),
            Family::Lognormal => norm_ln_sf(-e),
        }
    }

    #[inline]
    pub(crate) fn error_ppf(self, p: f64) -> f64 {
        match self {
            Family::Weibull | Family::Exponential => (-(-p).ln_1p()).ln(),
            Family::Loglogistic => p.ln() - (-p).ln_1p(),
            Family::Lognormal => norm_ppf(p),
        }
    }

    #[inline]
    pub(crate) fn error_isf(self, q: f64) -> f64 {
        match self {
            Family::Weibull | Family::Exponential => (-q.ln()).ln(),
            Family::Loglogistic => (-q).ln_1p() - q.ln(),
            Family::Lognormal => norm_isf(q),
        }
    }

    #[inline]
    pub(crate) fn error_median(self) -> f64 {
        match self {
            Family::Weibull | Family::Exponential => std::f64::consts::LN_2.ln(),
            Family::Loglogistic | Family::Lognormal => 0.0,
        }
    }

    /// Draws a standardized error by inversion of `u ∈ (0, 1)`.
    #[inline]
    pub(crate) fn error_from_uniform(self, u: f64) -> f64 {
        if u > 0.5 {
            self.error_isf(1.0 - u)
        } else {
            self.error_ppf(u)
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "weibull" => Ok(Family::Weibull),
            "loglogistic" => Ok(Family::Loglogistic),
            "lognormal" => Ok(Family::Lognormal),
            "exponential" => Ok(Family::Exponential),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

/// Location `z'β` on the log-time scale and scale `σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPredictor {
    pub location: f64,
    pub scale: f64,
}

impl LinearPredictor {
    pub fn new(location: f64, scale: f64) -> Self {
        Self { location, scale }
    }

    pub fn check(&self, family: Family) -> Result<()> {
        if !self.location.is_finite() || !self.scale.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite linear predictor ({}, {})",
                self.location, self.scale
            )));
        }
        if self.scale <= 0.0 {
            return Err(Error::Domain(format!("scale must be positive, got {}", self.scale)));
        }
        if family.has_fixed_scale() && self.scale != 1.0 {
            return Err(Error::Domain(format!(
                "exponential family requires scale 1, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn standardize(&self, v: f64) -> f64 {
        if v <= 0.0 {
            f64::NEG_INFINITY
        } else if v == f64::INFINITY {
            f64::INFINITY
        } else {
            (v.ln() - self.location) / self.scale
        }
    }

    #[inline]
    pub(crate) fn time(&self, e: f64) -> f64 {
        (self.location + self.scale * e).exp()
    }
}

fn check_time(v: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { v >= 0.0 } else { v > 0.0 };
    if !ok || v.is_nan() {
        return Err(Error::Domain(format!("time must be positive, got {v}")));
    }
    Ok(())
}

pub fn log_density(family: Family, lp: LinearPredictor, v: f64) -> Result<f64> {
    lp.check(family)?;
    check_time(v, false)?;
    if v == f64::INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_density_unchecked(family, lp, v))
}

#[inline]
pub(crate) fn log_density_unchecked(family: Family, lp: LinearPredictor, v: f64) -> f64 {
    let e = lp.standardize(v);
    family.error_ln_pdf(e) - lp.scale.ln() - v.ln()
}

pub fn density(family: Family, lp: LinearPredictor, v: f64) -> Result<f64> {
    log_density(family, lp, v).map(f64::exp)
}

pub fn cdf(family: Family, lp: LinearPredictor, v: f64) -> Result<f64> {
    lp.check(family)?;
    check_time(v, true)?;
    Ok(family.error_cdf(lp.standardize(v)))
}

pub fn survival(family: Family, lp: LinearPredictor, v: f64) -> Result<f64> {
    lp.check(family)?;
    check_time(v, true)?;
    Ok(family.error_sf(lp.standardize(v)))
}

pub fn quantile(family: Family, lp: LinearPredictor, p: f64) -> Result<f64> {
    lp.check(family)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0, 1), got {p}")));
    }
    Ok(lp.time(family.error_from_uniform(p)))
}

/// Inverse-CDF draw from the distribution truncated to `(a, b)`.
///
/// `u` must lie in (0, 1). The interval mass is formed from survival
/// functions when `a` lies above the median, so narrow upper-tail windows
/// keep their precision.
pub fn sample_truncated(family: Family, lp: LinearPredictor, a: f64, b: f64, u: f64) -> Result<f64> {
    sample_truncated_with_floor(family, lp, a, b, u, DEFAULT_MASS_FLOOR)
}

pub fn sample_truncated_with_floor(
    family: Family,
    lp: LinearPredictor,
    a: f64,
    b: f64,
    u: f64,
    floor: f64,
) -> Result<f64> {
    lp.check(family)?;
    if a.is_nan() || b.is_nan() || a < 0.0 || b <= a {
        return Err(Error::Domain(format!("invalid truncation interval ({a}, {b})")));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("uniform variate must lie in (0, 1), got {u}")));
    }
    sample_truncated_unchecked(family, lp, a, b, u, floor)
}

#[inline]
pub(crate) fn sample_truncated_unchecked(
    family: Family,
    lp: LinearPredictor,
    a: f64,
    b: f64,
    u: f64,
    floor: f64,
) -> Result<f64> {
    Truncated::new(family, lp, a, b, floor)?.sample(u)
}

/// Inverse-CDF map of a distribution truncated to `(a, b)`, with the interval
/// probabilities computed once for repeated draws.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Truncated {
    family: Family,
    lp: LinearPredictor,
    a: f64,
    b: f64,
    /// Work with survival functions (interval above the median).
    upper: bool,
    /// `S(a)` when `upper`, else `F(a)`.
    pa: f64,
    /// `1 − F(b)` when not `upper`.
    qb: f64,
    mass: f64,
}

impl Truncated {
    #[inline]
    pub(crate) fn new(family: Family, lp: LinearPredictor, a: f64, b: f64, floor: f64) -> Result<Self> {
        let ea = lp.standardize(a);
        let eb = lp.standardize(b);
        let upper = ea >= family.error_median();
        let (pa, qb, mass) = if upper {
            let sa = family.error_sf(ea);
            (sa, 0.0, sa - family.error_sf(eb))
        } else {
            let fa = family.error_cdf(ea);
            let fb = family.error_cdf(eb);
            (fa, 1.0 - fb, fb - fa)
        };
        if !(mass > floor) {
            return Err(degenerate(a, b, mass));
        }
        Ok(Self {
            family,
            lp,
            a,
            b,
            upper,
            pa,
            qb,
            mass,
        })
    }

    #[inline]
    pub(crate) fn sample(&self, u: f64) -> Result<f64> {
        let family = self.family;
        let e = if self.upper {
            family.error_isf(self.pa - u * self.mass)
        } else {
            let p = self.pa + u * self.mass;
            if p > 0.5 {
                family.error_isf(self.qb + (1.0 - u) * self.mass)
            } else {
                family.error_ppf(p)
            }
        };
        let (a, b) = (self.a, self.b);
        let mut v = self.lp.time(e);
        // Rounding can land on (or just outside) an endpoint of a very narrow window.
        if !(v > a) {
            v = a.next_up();
        }
        if !(v < b) {
            v = b.next_down();
        }
        if !(v > a && v < b) {
            return Err(degenerate(a, b, 0.0));
        }
        Ok(v)
    }
}

/// ln(F(b) − F(a)) for `0 ≤ a < b ≤ ∞`, stable when the mass is tiny.
pub fn log_interval_mass(family: Family, lp: LinearPredictor, a: f64, b: f64) -> Result<f64> {
    lp.check(family)?;
    if a.is_nan() || b.is_nan() || a < 0.0 || b <= a {
        return Err(Error::Domain(format!("invalid interval ({a}, {b})")));
    }
    Ok(log_interval_mass_unchecked(family, lp, a, b))
}

#[inline]
pub(crate) fn log_interval_mass_unchecked(family: Family, lp: LinearPredictor, a: f64, b: f64) -> f64 {
    let ea = lp.standardize(a);
    let eb = lp.standardize(b);
    if ea >= family.error_median() {
        let la = family.error_ln_sf(ea);
        la + log1m_exp(family.error_ln_sf(eb) - la)
    } else {
        let lb = family.error_ln_cdf(eb);
        lb + log1m_exp(family.error_ln_cdf(ea) - lb)
    }
}

/// ln(1 − eˣ) for x ≤ 0.
#[inline]
fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

fn degenerate(a: f64, b: f64, mass: f64) -> Error {
    Error::DegenerateInterval {
        observation: None,
        lower: a,
        upper: b,
        mass,
    }
}
