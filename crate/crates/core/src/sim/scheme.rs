//! Single time steps of the reflected state.

use serde::Serialize;
use thiserror::Error;

use super::Scheme;
use crate::value::{HPoint, ValueError, ValueFunction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("stock position became non-positive ({y}); step too large")]
    NumericalBlowup { y: f64 },
    #[error("no nonnegative trade returns the state to the boundary (k = {k})")]
    NoProjection { k: f64 },
    #[error(transparent)]
    Value(#[from] ValueError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// At `u2`, shadow price at the ask.
    Buy,
    /// At `u1`, shadow price at the bid.
    Sell,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Projection {
    pub side: Side,
    /// Traded stock value, nonnegative.
    pub k: f64,
    /// Ratio before projection.
    pub u_pre: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub projection: Option<Projection>,
}

#[derive(Debug, Clone, Copy)]
pub struct Stepper<'a> {
    vf: &'a ValueFunction,
    scheme: Scheme,
    mu: f64,
    sigma: f64,
    c_exp: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(vf: &'a ValueFunction, scheme: Scheme) -> Self {
        let p = vf.params();
        // the sell direction must raise the ratio and the buy direction lower it
        debug_assert!(Self::ratio_push(vf, Side::Sell) > 0.0);
        debug_assert!(Self::ratio_push(vf, Side::Buy) < 0.0);
        Self { vf, scheme, mu: p.mu(), sigma: p.sigma(), c_exp: -1.0 / (1.0 - p.gamma()) }
    }

    /// Trade direction `(r1, r2)` in `(bond, stock)` value.
    pub fn direction(vf: &ValueFunction, side: Side) -> (f64, f64) {
        let p = vf.params();
        match side {
            Side::Buy => (-(1.0 + p.lambda_ask()), 1.0),
            Side::Sell => (1.0 - p.lambda_bid(), -1.0),
        }
    }

    /// `r1 - u r2` at the boundary of `side`: the sign of the ratio change
    /// caused by a trade there.
    pub fn ratio_push(vf: &ValueFunction, side: Side) -> f64 {
        let (r1, r2) = Self::direction(vf, side);
        let u = match side {
            Side::Buy => vf.u2,
            Side::Sell => vf.u1,
        };
        r1 - u * r2
    }

    /// Ratio drift `-h'(u)^{-1/(1-gamma)} - mu u + sigma^2 u`.
    pub fn ratio_drift(&self, p: &HPoint) -> f64 {
        -p.hp.powf(self.c_exp) - self.mu * p.u + self.sigma * self.sigma * p.u
    }

    /// Advances by `dt` with Brownian increment `dw`; `p` is the profile at
    /// the current ratio `u`.
    pub fn step(
        &self,
        x: f64,
        y: f64,
        u: f64,
        p: &HPoint,
        dw: f64,
        dt: f64,
    ) -> Result<StepOutcome, StepError> {
        let growth = 1.0 + self.mu * dt + self.sigma * dw;
        let y_pre = y * growth;
        if !(y_pre > 0.0) {
            return Err(StepError::NumericalBlowup { y: y_pre });
        }
        let (x_pre, u_pre) = match self.scheme {
            Scheme::UReduced => {
                let u_pre = u + self.ratio_drift(p) * dt - self.sigma * u * dw;
                (u_pre * y_pre, u_pre)
            }
            Scheme::XyDirect => {
                let c = y * p.hp.powf(self.c_exp);
                let x_pre = x - c * dt;
                (x_pre, x_pre / y_pre)
            }
        };
        self.project(x_pre, y_pre, u_pre)
    }

    /// Moves a state with ratio outside `[u1, u2]` back onto the violated
    /// boundary along the trade direction.
    pub fn project(&self, x_pre: f64, y_pre: f64, u_pre: f64) -> Result<StepOutcome, StepError> {
        let side = if u_pre < self.vf.u1 {
            Side::Sell
        } else if u_pre > self.vf.u2 {
            Side::Buy
        } else {
            return Ok(StepOutcome { x: x_pre, y: y_pre, u: u_pre, projection: None });
        };
        let ub = match side {
            Side::Buy => self.vf.u2,
            Side::Sell => self.vf.u1,
        };
        let (r1, r2) = Self::direction(self.vf, side);
        let k = (ub * y_pre - x_pre) / (r1 - ub * r2);
        if !(k >= 0.0) || !k.is_finite() {
            return Err(StepError::NoProjection { k });
        }
        let y = y_pre + r2 * k;
        if !(y > 0.0) {
            return Err(StepError::NumericalBlowup { y });
        }
        Ok(StepOutcome { x: ub * y, y, u: ub, projection: Some(Projection { side, k, u_pre }) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::MarketParams;
    use crate::solver::SolverOptions;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::OnceLock;

    fn vf() -> &'static ValueFunction {
        static VF: OnceLock<ValueFunction> = OnceLock::new();
        VF.get_or_init(|| {
            ValueFunction::solve(&MarketParams::reference(), &SolverOptions::default()).unwrap()
        })
    }

    #[test]
    fn boundary_sides_from_direction_signs() {
        let p = vf().params();
        assert!(((1.0 - p.lambda_bid()) + vf().u1 - Stepper::ratio_push(vf(), Side::Sell)).abs() < 1e-15);
        assert!((-(1.0 + p.lambda_ask()) - vf().u2 - Stepper::ratio_push(vf(), Side::Buy)).abs() < 1e-15);
        assert!(Stepper::ratio_push(vf(), Side::Sell) > 0.0);
        assert!(Stepper::ratio_push(vf(), Side::Buy) < 0.0);
    }

    #[test]
    fn interior_step_has_no_trade() {
        let st = Stepper::new(vf(), Scheme::UReduced);
        let u = (vf().u1 * vf().u2).sqrt();
        let p = vf().point(u).unwrap();
        let out = st.step(u, 1.0, u, &p, 1e-4, 1e-6).unwrap();
        assert!(out.projection.is_none());
        assert!(out.u > vf().u1 && out.u < vf().u2);
    }

    #[test]
    fn forced_crossing_below_u1_sells() {
        let st = Stepper::new(vf(), Scheme::UReduced);
        let u = vf().u1 * (1.0 + 1e-6);
        let p = vf().point(u).unwrap();
        // a large positive shock lowers the ratio
        let out = st.step(u * 2.0, 2.0, u, &p, 0.05, 1e-4).unwrap();
        let pr = out.projection.unwrap();
        assert_eq!(pr.side, Side::Sell);
        assert!(pr.k > 0.0);
        assert_eq!(out.u, vf().u1);
        assert!(pr.u_pre < vf().u1);
    }

    #[test]
    fn forced_crossing_above_u2_buys() {
        for scheme in [Scheme::UReduced, Scheme::XyDirect] {
            let st = Stepper::new(vf(), scheme);
            let u = vf().u2 * (1.0 - 1e-6);
            let p = vf().point(u).unwrap();
            let out = st.step(u, 1.0, u, &p, -0.05, 1e-4).unwrap();
            let pr = out.projection.unwrap();
            assert_eq!(pr.side, Side::Buy);
            assert!(pr.k > 0.0);
            assert_eq!(out.u, vf().u2);
            assert!((out.x - vf().u2 * out.y).abs() <= 1e-15 * out.x);
        }
    }

    #[test]
    fn projection_moves_along_trade_direction() {
        let st = Stepper::new(vf(), Scheme::XyDirect);
        let (x_pre, y_pre) = (vf().u2 * 1.01 * 3.0, 3.0);
        let out = st.project(x_pre, y_pre, x_pre / y_pre).unwrap();
        let (r1, r2) = Stepper::direction(vf(), Side::Buy);
        let k = out.projection.unwrap().k;
        assert!((out.x - (x_pre + r1 * k)).abs() <= 1e-12);
        assert!((out.y - (y_pre + r2 * k)).abs() <= 1e-12);
        let d = vf().eval_v(out.x, out.y).unwrap();
        assert!((d.vx * r1 + d.vy * r2).abs() <= 1e-8 * d.vy);
    }

    #[test]
    fn huge_shock_is_a_blowup() {
        let st = Stepper::new(vf(), Scheme::UReduced);
        let u = vf().u1;
        let p = vf().point(u).unwrap();
        assert!(matches!(st.step(u, 1.0, u, &p, -10.0, 1e-3), Err(StepError::NumericalBlowup { .. })));
    }

    #[test]
    fn one_step_mean_matches_drift() {
        let st = Stepper::new(vf(), Scheme::UReduced);
        let u = (vf().u1 * vf().u2).sqrt();
        let p = vf().point(u).unwrap();
        let dt: f64 = 1e-6;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let out = st.step(u, 1.0, u, &p, dt.sqrt() * z, dt).unwrap();
            assert!(out.projection.is_none());
            let d = out.u - u;
            sum += d;
            sum2 += d * d;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        let want = st.ratio_drift(&p) * dt;
        assert!((mean - want).abs() <= 4.0 * se + 1e-3 * dt, "{mean} vs {want} (se {se})");
    }
}
