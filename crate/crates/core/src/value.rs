//! Value function on the no-trade region.
//!
//! The solved `g` is turned into the ratio function `f` (inverse of
//! `z -> exp(g(z) - z)`), then into the homothetic profile
//!
//! ```text
//! h(u) = K exp( gamma * int_{u1}^{u} dv / (v (1 + e^{f(v)})) ),   v(x, y) = y^gamma h(x / y).
//! ```
//!
//! The integral is evaluated in the `z` variable (`log v = g(z) - z`), where
//! the grid is uniform. `h'` and `h''` come from closed-form ratios in `f` and
//! `u f'`, never from numerical differentiation.
//!
//! Boundary naming: `u = x / y` is bond over stock. The small ratio `u1` is
//! the selling boundary (shadow price at the bid), the large ratio `u2` is the
//! buying boundary (shadow price at the ask).

use serde::Serialize;
use thiserror::Error;

use crate::interp::hermite;
use crate::params::MarketParams;
use crate::solver::{shoot, GSolution, SolverError, SolverOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValueError {
    #[error("ratio grid is not strictly ordered at node {index}")]
    MonotonicityViolation { index: usize },
    #[error("H(u1) = {value} with unit normalization is not positive")]
    PositivityFailure { value: f64 },
    #[error("ratio u = {u} lies outside the no-trade interval [{u1}, {u2}]")]
    OutsideNoTrade { u: f64, u1: f64, u2: f64 },
    #[error("invalid state: {0}")]
    InvalidState(&'static str),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// One point of the inverted table: `f(u) = z`, with `u f'(u) = 1/(g'(z) - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FNode {
    pub u: f64,
    pub f: f64,
    pub uf_prime: f64,
}

/// Emits `(u, f(u), u f'(u))` for every `z` node, in node order (decreasing `u`).
pub fn invert_to_f(gsol: &GSolution) -> Result<Vec<FNode>, ValueError> {
    let out: Vec<FNode> = gsol
        .nodes()
        .iter()
        .map(|n| FNode { u: (n.g - n.z).exp(), f: n.z, uf_prime: 1.0 / (n.gp - 1.0) })
        .collect();
    for (i, w) in out.windows(2).enumerate() {
        if !(w[1].u < w[0].u) {
            return Err(ValueError::MonotonicityViolation { index: i });
        }
    }
    Ok(out)
}

/// `h` and its first two derivatives at one ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HPoint {
    pub u: f64,
    /// `f(u)`, equal to `beta`.
    pub f: f64,
    pub uf_prime: f64,
    pub h: f64,
    pub hp: f64,
    pub hpp: f64,
}

/// `v` and its partial derivatives at `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VDerivs {
    pub v: f64,
    pub vx: f64,
    pub vy: f64,
    pub vxx: f64,
    pub vxy: f64,
    pub vyy: f64,
}

/// Scalars describing a solved model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolutionSummary {
    pub delta_star: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub z0: f64,
    pub u1: f64,
    pub u2: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub k: f64,
    pub endpoint_residual: f64,
    pub merton_fraction: f64,
    pub grid_nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Normalization {
    /// `H(u1)` when `K = 1`.
    pub h_unit: f64,
    /// `legendre(h'(u1))` when `K = 1`.
    pub legendre_unit: f64,
    pub k: f64,
}

/// Endpoint equalities and interior margins of the trading constraints, each
/// scaled to be dimensionless (by `gamma h` or `(1 - gamma) h'`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryReport {
    /// `((-1 - u + lambda_bid) h' + gamma h) / (gamma h)` at `u1`.
    pub sell_value: f64,
    /// `((1 + u + lambda_ask) h' - gamma h) / (gamma h)` at `u2`.
    pub buy_value: f64,
    /// `((-1 - u + lambda_bid) h'' - (1 - gamma) h') / ((1 - gamma) h')` at `u1`.
    pub sell_pasting: f64,
    /// `((1 + u + lambda_ask) h'' + (1 - gamma) h') / ((1 - gamma) h')` at `u2`.
    pub buy_pasting: f64,
    /// Smallest scaled sell margin over grid ratios in `(u1, u2]`.
    pub min_sell_margin: f64,
    /// Smallest scaled buy margin over grid ratios in `[u1, u2)`.
    pub min_buy_margin: f64,
    pub max_equality_violation: f64,
}

impl BoundaryReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_equality_violation <= tol && self.min_sell_margin > 0.0 && self.min_buy_margin > 0.0
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    z: f64,
    log_u: f64,
    g: f64,
    gp: f64,
    gpp: f64,
    /// `log h - log K`
    log_h: f64,
    /// d(log h)/dz
    dlog_h: f64,
}

/// Homothetic value function on the closed no-trade region. Immutable.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    params: MarketParams,
    gsol: GSolution,
    nodes: Vec<Node>,
    step: f64,
    log_k: f64,
    norm: Normalization,
    pub u1: f64,
    pub u2: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub k: f64,
}

impl ValueFunction {
    /// Solves the free boundary problem and builds the value function.
    pub fn solve(params: &MarketParams, opts: &SolverOptions) -> Result<Self, ValueError> {
        Self::build(shoot(params, opts)?)
    }

    pub fn build(gsol: GSolution) -> Result<Self, ValueError> {
        let params = *gsol.params();
        let gamma = params.gamma();
        invert_to_f(&gsol)?;

        let dlog_h = |z: f64, gp: f64| gamma * (gp - 1.0) / (1.0 + z.exp());
        let step = gsol.spacing();
        let gn = gsol.nodes();
        let n = gn.len();

        // cumulative Simpson from beta_hi (u1) downwards
        let mut log_h = vec![0.0; n];
        for i in (0..n - 1).rev() {
            let (a, b) = (&gn[i], &gn[i + 1]);
            let zm = 0.5 * (a.z + b.z);
            let (_, gpm) = gsol.eval(zm);
            let simpson = (b.z - a.z) / 6.0 * (dlog_h(a.z, a.gp) + 4.0 * dlog_h(zm, gpm) + dlog_h(b.z, b.gp));
            log_h[i] = log_h[i + 1] - simpson;
        }
        let nodes: Vec<Node> = gn
            .iter()
            .zip(&log_h)
            .map(|(g, &lh)| Node {
                z: g.z,
                log_u: g.g - g.z,
                g: g.g,
                gp: g.gp,
                gpp: g.gpp,
                log_h: lh,
                dlog_h: dlog_h(g.z, g.gp),
            })
            .collect();

        let u1 = nodes[n - 1].log_u.exp();
        let u2 = nodes[0].log_u.exp();
        let mut vf = ValueFunction {
            params,
            gsol,
            nodes,
            step,
            log_k: 0.0,
            norm: Normalization { h_unit: f64::NAN, legendre_unit: f64::NAN, k: 1.0 },
            u1,
            u2,
            theta1: 1.0 / (1.0 + u2),
            theta2: 1.0 / (1.0 + u1),
            k: 1.0,
        };

        // H scales like K and legendre(h') like K^(-gamma/(1-gamma)), so the
        // matching K solves K^(1/(1-gamma)) = legendre_unit / h_unit.
        let p1 = vf.point(u1)?;
        let h_unit = vf.big_h(&p1);
        if !(h_unit > 0.0) {
            return Err(ValueError::PositivityFailure { value: h_unit });
        }
        let legendre_unit =
            params.legendre(p1.hp).map_err(|_| ValueError::PositivityFailure { value: p1.hp })?;
        let log_k = (1.0 - gamma) * (legendre_unit.ln() - h_unit.ln());
        vf.log_k = log_k;
        vf.k = log_k.exp();
        vf.norm = Normalization { h_unit, legendre_unit, k: vf.k };
        Ok(vf)
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }
    pub fn solution(&self) -> &GSolution {
        &self.gsol
    }
    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    pub fn summary(&self) -> SolutionSummary {
        let s = &self.gsol;
        SolutionSummary {
            delta_star: s.delta_star,
            beta_lo: s.beta_lo,
            beta_hi: s.beta_hi,
            z0: s.z0,
            u1: self.u1,
            u2: self.u2,
            theta1: self.theta1,
            theta2: self.theta2,
            k: self.k,
            endpoint_residual: s.endpoint_residual,
            merton_fraction: self.params.merton_fraction(),
            grid_nodes: self.nodes.len(),
        }
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.u1 && u <= self.u2
    }

    /// `f(u)`, i.e. the `z` solving `g(z) - z = log u`.
    fn locate(&self, u: f64) -> Result<(f64, usize), ValueError> {
        if !u.is_finite() || !(u > 0.0) {
            return Err(ValueError::InvalidState("ratio must be positive and finite"));
        }
        let slack = 1e-12;
        if u < self.u1 * (1.0 - slack) || u > self.u2 * (1.0 + slack) {
            return Err(ValueError::OutsideNoTrade { u, u1: self.u1, u2: self.u2 });
        }
        let n = self.nodes.len();
        let s = u.ln();
        if s >= self.nodes[0].log_u {
            return Ok((self.nodes[0].z, 0));
        }
        if s <= self.nodes[n - 1].log_u {
            return Ok((self.nodes[n - 1].z, n - 2));
        }
        let j = self.nodes.partition_point(|nd| nd.log_u > s);
        let i = j.saturating_sub(1).min(n - 2);
        let (a, b) = (&self.nodes[i], &self.nodes[i + 1]);
        // ψ(z) = g(z) - z - s is strictly decreasing (g' - 1 <= -1)
        let mut z = a.z + (b.z - a.z) * (a.log_u - s) / (a.log_u - b.log_u);
        for _ in 0..30 {
            let (g, gp) = hermite(a.z, self.step, a.g, b.g, a.gp, b.gp, z);
            let dz = (g - z - s) / (gp - 1.0);
            let next = (z - dz).clamp(a.z, b.z);
            let done = (next - z).abs() <= 1e-15 * (1.0 + z.abs());
            z = next;
            if done {
                break;
            }
        }
        Ok((z, i))
    }

    /// `h`, `h'`, `h''` and `f` at ratio `u` in `[u1, u2]`.
    pub fn point(&self, u: f64) -> Result<HPoint, ValueError> {
        let (z, i) = self.locate(u)?;
        let (a, b) = (&self.nodes[i], &self.nodes[i + 1]);
        let (gp, _) = hermite(a.z, self.step, a.gp, b.gp, a.gpp, b.gpp, z);
        let (log_h, _) = hermite(a.z, self.step, a.log_h, b.log_h, a.dlog_h, b.dlog_h, z);
        Ok(self.point_from(u, z, gp, log_h))
    }

    fn point_from(&self, u: f64, z: f64, gp: f64, log_h: f64) -> HPoint {
        let gamma = self.params.gamma();
        let ez = z.exp();
        let uf_prime = 1.0 / (gp - 1.0);
        let h = (self.log_k + log_h).exp();
        let hp = h * gamma / (u * (1.0 + ez));
        let hpp = h * gamma / (u * u * (1.0 + ez) * (1.0 + ez)) * (gamma - 1.0 - (1.0 + uf_prime) * ez);
        HPoint { u, f: z, uf_prime, h, hp, hpp }
    }

    pub fn f(&self, u: f64) -> Result<f64, ValueError> {
        Ok(self.locate(u)?.0)
    }

    pub fn h(&self, u: f64) -> Result<f64, ValueError> {
        Ok(self.point(u)?.h)
    }

    /// The second-order HJB operator `H` at an evaluated point.
    pub fn big_h(&self, p: &HPoint) -> f64 {
        let s2 = self.params.sigma() * self.params.sigma();
        self.params.reduced_discount() * p.h + self.params.drift_excess() * p.u * p.hp
            - 0.5 * s2 * p.u * p.u * p.hpp
    }

    pub fn big_h_at(&self, u: f64) -> Result<f64, ValueError> {
        Ok(self.big_h(&self.point(u)?))
    }

    /// `H(u) - legendre(h'(u))`.
    pub fn hjb_residual(&self, u: f64) -> Result<f64, ValueError> {
        let p = self.point(u)?;
        Ok(self.big_h(&p) - self.legendre_of(p.hp))
    }

    /// `|H(u) - legendre(h'(u))| / H(u)`.
    pub fn relative_hjb_residual(&self, u: f64) -> Result<f64, ValueError> {
        let p = self.point(u)?;
        let hh = self.big_h(&p);
        Ok((hh - self.legendre_of(p.hp)).abs() / hh)
    }

    fn legendre_of(&self, hp: f64) -> f64 {
        // hp > 0 on the closed interval
        self.params.legendre(hp).unwrap_or(f64::NAN)
    }

    /// Lower bound `h (delta - gamma mu s + gamma (1-gamma) sigma^2 s^2 / 2)`
    /// with `s = 1 / (1 + e^{-f})`; attained at both endpoints.
    pub fn quadratic_floor(&self, p: &HPoint) -> f64 {
        let (mu, s2, gamma, delta) = (
            self.params.mu(),
            self.params.sigma() * self.params.sigma(),
            self.params.gamma(),
            self.params.delta(),
        );
        let s = 1.0 / (1.0 + (-p.f).exp());
        p.h * (delta - gamma * mu * s + 0.5 * gamma * (1.0 - gamma) * s2 * s * s)
    }

    /// `n` equally spaced ratios covering `[u1, u2]`.
    pub fn u_grid(&self, n: usize) -> Vec<f64> {
        assert!(n >= 2);
        (0..n)
            .map(|i| match i {
                0 => self.u1,
                _ if i == n - 1 => self.u2,
                _ => self.u1 + (self.u2 - self.u1) * i as f64 / (n - 1) as f64,
            })
            .collect()
    }

    pub fn eval_v(&self, x: f64, y: f64) -> Result<VDerivs, ValueError> {
        if !(y > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(ValueError::InvalidState("stock position must be positive and finite"));
        }
        let p = self.point(x / y)?;
        Ok(self.derivs_at(&p, y))
    }

    /// Partial derivatives of `v` at `(u y, y)` from an evaluated point.
    pub fn derivs_at(&self, p: &HPoint, y: f64) -> VDerivs {
        let gamma = self.params.gamma();
        let yg = y.powf(gamma);
        let yg1 = yg / y;
        let yg2 = yg1 / y;
        let u = p.u;
        VDerivs {
            v: yg * p.h,
            vx: yg1 * p.hp,
            vy: yg1 * (gamma * p.h - u * p.hp),
            vxx: yg2 * p.hpp,
            vxy: yg2 * ((gamma - 1.0) * p.hp - u * p.hpp),
            vyy: yg2 * (gamma * (gamma - 1.0) * p.h - 2.0 * (gamma - 1.0) * u * p.hp + u * u * p.hpp),
        }
    }

    pub fn boundary_check(&self) -> Result<BoundaryReport, ValueError> {
        let (gamma, lb, la) = (self.params.gamma(), self.params.lambda_bid(), self.params.lambda_ask());
        let sell = |p: &HPoint| ((-1.0 - p.u + lb) * p.hp + gamma * p.h) / (gamma * p.h);
        let buy = |p: &HPoint| ((1.0 + p.u + la) * p.hp - gamma * p.h) / (gamma * p.h);
        let p1 = self.point(self.u1)?;
        let p2 = self.point(self.u2)?;
        let sell_value = sell(&p1);
        let buy_value = buy(&p2);
        let sell_pasting = ((-1.0 - p1.u + lb) * p1.hpp - (1.0 - gamma) * p1.hp) / ((1.0 - gamma) * p1.hp);
        let buy_pasting = ((1.0 + p2.u + la) * p2.hpp + (1.0 - gamma) * p2.hp) / ((1.0 - gamma) * p2.hp);

        let n = self.nodes.len();
        let mut min_sell = f64::INFINITY;
        let mut min_buy = f64::INFINITY;
        for (i, nd) in self.nodes.iter().enumerate() {
            let p = self.point_from(nd.log_u.exp(), nd.z, nd.gp, nd.log_h);
            // node 0 is u2, node n-1 is u1
            if i != n - 1 {
                min_sell = min_sell.min(sell(&p));
            }
            if i != 0 {
                min_buy = min_buy.min(buy(&p));
            }
        }
        let max_equality_violation =
            [sell_value, buy_value, sell_pasting, buy_pasting].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(BoundaryReport {
            sell_value,
            buy_value,
            sell_pasting,
            buy_pasting,
            min_sell_margin: min_sell,
            min_buy_margin: min_buy,
            max_equality_violation,
        })
    }

    /// Relative residuals of the first- and second-order boundary identities
    /// of `v` at height `y`, in the order
    /// `[sell vx/vy, sell vxx/vxy, sell vxy/vyy, buy vx/vy, buy vxx/vxy, buy vxy/vyy]`.
    pub fn pasting_residuals(&self, y: f64) -> Result<[f64; 6], ValueError> {
        let rel = |lhs: f64, rhs: f64| (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
        let (lb, la) = (self.params.lambda_bid(), self.params.lambda_ask());
        let s = self.eval_v(self.u1 * y, y)?;
        let b = self.eval_v(self.u2 * y, y)?;
        Ok([
            rel((1.0 - lb) * s.vx, s.vy),
            rel((1.0 - lb) * s.vxx, s.vxy),
            rel((1.0 - lb) * s.vxy, s.vyy),
            rel((1.0 + la) * b.vx, b.vy),
            rel((1.0 + la) * b.vxx, b.vxy),
            rel((1.0 + la) * b.vxy, b.vyy),
        ])
    }

    /// Table for CSV output: `(u, f, h, h', h'', H, H - legendre(h'))` on `n`
    /// equally spaced ratios.
    pub fn table(&self, n: usize) -> Result<Vec<ValueRow>, ValueError> {
        self.u_grid(n)
            .into_iter()
            .map(|u| {
                let p = self.point(u)?;
                let big_h = self.big_h(&p);
                Ok(ValueRow {
                    u,
                    f: p.f,
                    h: p.h,
                    hp: p.hp,
                    hpp: p.hpp,
                    big_h,
                    residual: big_h - self.legendre_of(p.hp),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueRow {
    pub u: f64,
    pub f: f64,
    pub h: f64,
    pub hp: f64,
    pub hpp: f64,
    pub big_h: f64,
    pub residual: f64,
}
