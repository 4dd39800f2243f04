//! Shadow price, state-price density and related functionals of the
//! optimally controlled state.

use serde::Serialize;

use crate::value::{HPoint, ValueError, ValueFunction};

/// Geometric midpoint of the no-trade interval at unit stock value.
pub fn default_anchor(vf: &ValueFunction) -> (f64, f64) {
    ((vf.u1 * vf.u2).sqrt(), 1.0)
}

/// All shadow-market quantities at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShadowState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub price: f64,
    pub u: f64,
    pub shadow_price: f64,
    pub consumption: f64,
    pub density: f64,
    pub m: f64,
    pub xi: f64,
    pub nu: f64,
    pub beta: f64,
    pub log_ratio: f64,
    /// Bond holding.
    pub phi0: f64,
    /// Shares held, `y / S`.
    pub phi1: f64,
}

/// Evaluator anchored at the initial state `(x0, y0)`, which fixes the
/// normalization of `Z` and `M`.
#[derive(Debug, Clone, Copy)]
pub struct ShadowEvaluator<'a> {
    vf: &'a ValueFunction,
    x0: f64,
    y0: f64,
    vx0: f64,
}

impl<'a> ShadowEvaluator<'a> {
    pub fn new(vf: &'a ValueFunction, x0: f64, y0: f64) -> Result<Self, ValueError> {
        let vx0 = vf.eval_v(x0, y0)?.vx;
        if !(vx0 > 0.0) {
            return Err(ValueError::InvalidState("marginal value at the anchor is not positive"));
        }
        Ok(Self { vf, x0, y0, vx0 })
    }

    pub fn with_default_anchor(vf: &'a ValueFunction) -> Result<Self, ValueError> {
        let (x0, y0) = default_anchor(vf);
        Self::new(vf, x0, y0)
    }

    pub fn value_function(&self) -> &'a ValueFunction {
        self.vf
    }
    pub fn anchor(&self) -> (f64, f64) {
        (self.x0, self.y0)
    }
    pub fn vx0(&self) -> f64 {
        self.vx0
    }

    /// `S v_y / v_x`.
    pub fn shadow_price(&self, x: f64, y: f64, s: f64) -> Result<f64, ValueError> {
        let d = self.vf.eval_v(x, y)?;
        Ok(s * d.vy / d.vx)
    }

    /// `v_x^{-1/(1-gamma)}`.
    pub fn consumption(&self, x: f64, y: f64) -> Result<f64, ValueError> {
        let d = self.vf.eval_v(x, y)?;
        Ok(d.vx.powf(-1.0 / (1.0 - self.vf.params().gamma())))
    }

    /// Initial consumption rate at the anchor.
    pub fn initial_consumption(&self) -> f64 {
        self.vx0.powf(-1.0 / (1.0 - self.vf.params().gamma()))
    }

    pub fn density_z(&self, t: f64, x: f64, y: f64) -> Result<f64, ValueError> {
        let d = self.vf.eval_v(x, y)?;
        Ok((-self.vf.params().delta() * t).exp() * d.vx / self.vx0)
    }

    pub fn process_m(&self, t: f64, x: f64, y: f64, s: f64) -> Result<f64, ValueError> {
        let d = self.vf.eval_v(x, y)?;
        Ok((-self.vf.params().delta() * t).exp() * s * d.vy / self.vx0)
    }

    /// `(xi, nu)` from the reduced profile.
    pub fn volatilities(&self, u: f64) -> Result<(f64, f64), ValueError> {
        Ok(self.volatilities_at(&self.vf.point(u)?))
    }

    pub fn volatilities_at(&self, p: &HPoint) -> (f64, f64) {
        let (sigma, gamma) = (self.vf.params().sigma(), self.vf.params().gamma());
        let u = p.u;
        let xi = sigma * ((1.0 - gamma) + u * p.hpp / p.hp);
        let nu = sigma
            * ((-gamma * (1.0 - gamma) * p.h + 2.0 * (1.0 - gamma) * u * p.hp + u * u * p.hpp)
                / (gamma * p.h - u * p.hp)
                + 1.0);
        (xi, nu)
    }

    /// `(xi, nu)` from the partial derivatives of `v` at `(u, 1)`.
    pub fn volatilities_from_v(&self, u: f64) -> Result<(f64, f64), ValueError> {
        let sigma = self.vf.params().sigma();
        let d = self.vf.eval_v(u, 1.0)?;
        Ok((-sigma * d.vxy / d.vx, sigma * (d.vyy / d.vy + 1.0)))
    }

    /// Largest `|xi|` and `|nu|` over `n` equally spaced ratios.
    pub fn volatility_bounds(&self, n: usize) -> Result<(f64, f64), ValueError> {
        let mut bounds = (0.0_f64, 0.0_f64);
        for u in self.vf.u_grid(n) {
            let (xi, nu) = self.volatilities(u)?;
            bounds = (bounds.0.max(xi.abs()), bounds.1.max(nu.abs()));
        }
        Ok(bounds)
    }

    /// `(beta, C)` with `beta = log(y v_y / (x v_x))` and `C = log(S~ / S)`.
    pub fn beta_and_c(&self, x: f64, y: f64, s: f64) -> Result<(f64, f64), ValueError> {
        if !(x > 0.0) {
            return Err(ValueError::InvalidState("bond position must be positive"));
        }
        let d = self.vf.eval_v(x, y)?;
        let beta = (y * d.vy / (x * d.vx)).ln();
        let st = s * d.vy / d.vx;
        Ok((beta, (st / s).ln()))
    }

    pub fn snapshot(&self, t: f64, x: f64, y: f64, s: f64) -> Result<ShadowState, ValueError> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(ValueError::InvalidState("price must be positive and finite"));
        }
        if !(x > 0.0) {
            return Err(ValueError::InvalidState("bond position must be positive"));
        }
        if !(y > 0.0) || !y.is_finite() {
            return Err(ValueError::InvalidState("stock position must be positive and finite"));
        }
        let p = self.vf.point(x / y)?;
        let d = self.vf.derivs_at(&p, y);
        let params = self.vf.params();
        let disc = (-params.delta() * t).exp();
        let ratio = d.vy / d.vx;
        let (xi, nu) = self.volatilities_at(&p);
        Ok(ShadowState {
            t,
            x,
            y,
            price: s,
            u: p.u,
            shadow_price: s * ratio,
            consumption: d.vx.powf(-1.0 / (1.0 - params.gamma())),
            density: disc * d.vx / self.vx0,
            m: disc * s * d.vy / self.vx0,
            xi,
            nu,
            beta: (y * d.vy / (x * d.vx)).ln(),
            log_ratio: ratio.ln(),
            phi0: x,
            phi1: y / s,
        })
    }
}
