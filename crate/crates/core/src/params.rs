//! Model and preference parameters.
//!
//! A [`MarketParams`] can only be obtained through validation, so every
//! downstream routine may assume the standing inequalities hold:
//!
//! * `sigma > 0`, `0 < gamma < 1`, `lambda_ask > 0`, `0 < lambda_bid < 1`
//! * `(1 - gamma) * sigma^2 > mu > 0`
//! * `delta > gamma * mu^2 / (2 * (1 - gamma) * sigma^2)`
//!
//! The last inequality implies `delta - gamma*mu + gamma*(1-gamma)*sigma^2/2 > 0`,
//! which is checked on its own as well.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One failed standing condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    NotFinite(&'static str),
    SigmaPositive,
    GammaInUnitInterval,
    LambdaAskPositive,
    LambdaBidInUnitInterval,
    DriftPositive,
    /// `(1 - gamma) * sigma^2 > mu`
    DriftBelowRiskCapacity,
    /// `delta > gamma * mu^2 / (2 * (1 - gamma) * sigma^2)`
    ImpatienceBound,
    /// `delta - gamma*mu + gamma*(1-gamma)*sigma^2/2 > 0`
    ReducedDiscountPositive,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::NotFinite(key) => write!(f, "`{key}` must be a finite number"),
            Condition::SigmaPositive => f.write_str("sigma > 0"),
            Condition::GammaInUnitInterval => f.write_str("0 < gamma < 1"),
            Condition::LambdaAskPositive => f.write_str("lambda_ask > 0"),
            Condition::LambdaBidInUnitInterval => f.write_str("0 < lambda_bid < 1"),
            Condition::DriftPositive => f.write_str("mu > 0"),
            Condition::DriftBelowRiskCapacity => f.write_str("(1 - gamma) * sigma^2 > mu"),
            Condition::ImpatienceBound => f.write_str("delta > gamma * mu^2 / (2 * (1 - gamma) * sigma^2)"),
            Condition::ReducedDiscountPositive => {
                f.write_str("delta - gamma*mu + gamma*(1 - gamma)*sigma^2/2 > 0")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("invalid parameters: {}", join(.0))]
    Violation(Vec<Condition>),
    #[error("`{what}` requires a positive argument, got {value}")]
    Domain { what: &'static str, value: f64 },
}

fn join(conds: &[Condition]) -> String {
    conds.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; ")
}

/// Unvalidated parameter set, as read from a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawParams {
    pub mu: f64,
    pub sigma: f64,
    pub delta: f64,
    pub gamma: f64,
    pub lambda_ask: f64,
    pub lambda_bid: f64,
}

impl RawParams {
    /// Parameters used throughout the test suite and as the CLI default.
    pub const REFERENCE: RawParams =
        RawParams { mu: 0.05, sigma: 0.4, delta: 0.1, gamma: 0.5, lambda_ask: 0.01, lambda_bid: 0.01 };

    /// Collects every violated condition. Never panics on finite or
    /// non-finite input.
    pub fn violations(&self) -> Vec<Condition> {
        let named = [
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("lambda_ask", self.lambda_ask),
            ("lambda_bid", self.lambda_bid),
        ];
        let non_finite: Vec<_> =
            named.iter().filter(|(_, v)| !v.is_finite()).map(|(k, _)| Condition::NotFinite(k)).collect();
        if !non_finite.is_empty() {
            return non_finite;
        }

        let RawParams { mu, sigma, delta, gamma, lambda_ask, lambda_bid } = *self;
        let mut out = Vec::new();
        let sigma_ok = sigma > 0.0;
        let gamma_ok = gamma > 0.0 && gamma < 1.0;
        if !sigma_ok {
            out.push(Condition::SigmaPositive);
        }
        if !gamma_ok {
            out.push(Condition::GammaInUnitInterval);
        }
        if !(lambda_ask > 0.0) {
            out.push(Condition::LambdaAskPositive);
        }
        if !(lambda_bid > 0.0 && lambda_bid < 1.0) {
            out.push(Condition::LambdaBidInUnitInterval);
        }
        if !(mu > 0.0) {
            out.push(Condition::DriftPositive);
        }
        if !(sigma_ok && gamma_ok) {
            // the remaining inequalities divide by sigma and 1 - gamma
            return out;
        }
        let var = sigma * sigma;
        if !((1.0 - gamma) * var > mu) {
            out.push(Condition::DriftBelowRiskCapacity);
        }
        let impatience_floor = 0.5 * gamma / (1.0 - gamma) * mu * mu / var;
        let impatience_ok = delta > impatience_floor;
        if !impatience_ok {
            out.push(Condition::ImpatienceBound);
        }
        let reduced = delta - gamma * mu + 0.5 * gamma * (1.0 - gamma) * var;
        if !(reduced > 0.0) {
            out.push(Condition::ReducedDiscountPositive);
        }
        // The impatience bound implies the reduced discount is at least
        // gamma*(mu - (1-gamma)sigma^2)^2 / (2(1-gamma)sigma^2) >= 0; only
        // rounding at the degenerate edge could break it.
        debug_assert!(
            !impatience_ok || reduced > 0.0 || delta - impatience_floor <= 1e-12 * delta.abs().max(1.0),
            "impatience bound holds but reduced discount {reduced} is not positive"
        );
        out
    }

    pub fn validate(&self) -> Result<MarketParams, ParamError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(MarketParams { raw: *self })
        } else {
            Err(ParamError::Violation(v))
        }
    }
}

/// Validated parameters. Immutable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MarketParams {
    raw: RawParams,
}

impl MarketParams {
    pub fn new(
        mu: f64,
        sigma: f64,
        delta: f64,
        gamma: f64,
        lambda_ask: f64,
        lambda_bid: f64,
    ) -> Result<Self, ParamError> {
        RawParams { mu, sigma, delta, gamma, lambda_ask, lambda_bid }.validate()
    }

    pub fn reference() -> Self {
        RawParams::REFERENCE.validate().expect("reference parameters are valid")
    }

    /// Same model with both proportional costs replaced.
    pub fn with_costs(&self, lambda_ask: f64, lambda_bid: f64) -> Result<Self, ParamError> {
        RawParams { lambda_ask, lambda_bid, ..self.raw }.validate()
    }

    pub fn raw(&self) -> RawParams {
        self.raw
    }
    pub fn mu(&self) -> f64 {
        self.raw.mu
    }
    pub fn sigma(&self) -> f64 {
        self.raw.sigma
    }
    pub fn delta(&self) -> f64 {
        self.raw.delta
    }
    pub fn gamma(&self) -> f64 {
        self.raw.gamma
    }
    pub fn lambda_ask(&self) -> f64 {
        self.raw.lambda_ask
    }
    pub fn lambda_bid(&self) -> f64 {
        self.raw.lambda_bid
    }

    /// `delta - gamma*mu + gamma*(1-gamma)*sigma^2/2`, the coefficient of `h`
    /// in the reduced HJB operator.
    pub fn reduced_discount(&self) -> f64 {
        let RawParams { mu, sigma, delta, gamma, .. } = self.raw;
        delta - gamma * mu + 0.5 * gamma * (1.0 - gamma) * sigma * sigma
    }

    /// `mu - (1-gamma)*sigma^2`, the coefficient of `u h'(u)`.
    pub fn drift_excess(&self) -> f64 {
        let RawParams { mu, sigma, gamma, .. } = self.raw;
        mu - (1.0 - gamma) * sigma * sigma
    }

    /// Frictionless optimal stock fraction `mu / ((1-gamma) sigma^2)`.
    pub fn merton_fraction(&self) -> f64 {
        let RawParams { mu, sigma, gamma, .. } = self.raw;
        mu / ((1.0 - gamma) * sigma * sigma)
    }

    /// Power utility `c^gamma / gamma`.
    pub fn utility(&self, c: f64) -> f64 {
        c.powf(self.raw.gamma) / self.raw.gamma
    }

    /// Convex dual of `-u`: `((1-gamma)/gamma) p^(-gamma/(1-gamma))`.
    pub fn legendre(&self, p: f64) -> Result<f64, ParamError> {
        legendre(self.raw.gamma, p)
    }
}

/// Legendre transform of negative power utility with exponent `gamma`.
pub fn legendre(gamma: f64, p: f64) -> Result<f64, ParamError> {
    if !(p > 0.0) {
        return Err(ParamError::Domain { what: "legendre", value: p });
    }
    Ok((1.0 - gamma) / gamma * p.powf(-gamma / (1.0 - gamma)))
}
