//! Shooting construction for the free boundary problem
//!
//! ```text
//! g'' = a + b g' + c g'^2 + d g'^3,
//! g(beta_lo) = log(1 + lambda_ask),  g'(beta_lo) = 0,
//! g(beta_hi) = log(1 - lambda_bid),  g'(beta_hi) = 0.
//! ```
//!
//! For a trial offset `delta > 0` the left boundary is `beta_lo = z0 - delta`
//! and the ODE is integrated forward until `g'` returns to zero; that point is
//! `beta_hi(delta)`. The endpoint value `g(beta_hi(delta))` decreases from
//! `log(1 + lambda_ask)` towards `-inf` as `delta` grows, and bisection on
//! `delta` matches it to `log(1 - lambda_bid)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::coefficients::{find_z0, gprime_bound, Coefficients};
use super::dopri::{Control, DenseStep, Dopri5, RkError};
use crate::interp::{hermite, is_monotone_segment, uniform_index};
use crate::params::MarketParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("g' did not return to zero within [{beta_lo}, {horizon}] for delta = {delta}")]
    EventNotFound { delta: f64, beta_lo: f64, horizon: f64 },
    #[error("integration failed for delta = {delta}: {source}")]
    Step {
        delta: f64,
        #[source]
        source: RkError,
    },
    #[error("g' = {gp} left the barrier [-{bound}, {bound}] at z = {z}")]
    BarrierEscape { z: f64, gp: f64, bound: f64 },
    #[error("could not bracket the shooting target after {doublings} doublings/halvings")]
    BracketFailure { doublings: usize },
    #[error("endpoint map changes sign {sign_changes} times on [{lo}, {hi}]; refusing to pick a root")]
    Ambiguous { sign_changes: usize, lo: f64, hi: f64 },
    #[error("bisection stalled with endpoint residual {residual:e}")]
    NoConvergence { residual: f64 },
    #[error("resampled grid is not monotone near node {index}")]
    NonMonotoneGrid { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Relative local tolerance of the Runge–Kutta controller.
    pub rtol: f64,
    pub atol: f64,
    /// Event search horizon past `beta_lo`.
    pub z_max: f64,
    /// Event localization tolerance in `z`.
    pub event_tol: f64,
    /// Required `|g(beta_hi) - log(1 - lambda_bid)|`.
    pub target_tol: f64,
    pub max_doublings: usize,
    /// Number of uniform nodes in the resampled grid.
    pub grid_nodes: usize,
    /// Samples of the endpoint map used for the single-crossing check.
    pub ambiguity_samples: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            z_max: 50.0,
            event_tol: 1e-12,
            target_tol: 1e-10,
            max_doublings: 60,
            grid_nodes: 4001,
            ambiguity_samples: 32,
        }
    }
}

impl SolverOptions {
    pub fn with_rtol(self, rtol: f64) -> Self {
        Self { rtol, atol: rtol * 1e-2, ..self }
    }

    /// First problem found, if any.
    pub fn check(&self) -> Result<(), String> {
        let positive = [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("z_max", self.z_max),
            ("event_tol", self.event_tol),
            ("target_tol", self.target_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("solver.{name} must be positive and finite, got {v}"));
            }
        }
        if self.grid_nodes < 3 {
            return Err(format!("solver.grid_nodes must be at least 3, got {}", self.grid_nodes));
        }
        if self.ambiguity_samples < 2 {
            return Err("solver.ambiguity_samples must be at least 2".into());
        }
        Ok(())
    }
}

/// One forward integration from `beta_lo = z0 - delta`.
#[derive(Debug, Clone)]
pub struct Shot {
    pub delta: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
    /// `g(beta_hi)`.
    pub g_end: f64,
    /// Accepted steps; the last one contains `beta_hi`.
    pub steps: Vec<DenseStep<2>>,
    /// Largest `|g'|` seen at step endpoints.
    pub max_abs_slope: f64,
}

fn rhs(params: &MarketParams) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + '_ {
    move |z, y| [y[1], Coefficients::at(z, params).second_derivative(y[1])]
}

/// Integrates the ODE from `z0 - delta` with `g = log(1 + lambda_ask)`,
/// `g' = 0` up to the first return of `g'` to zero.
pub fn integrate_g(
    delta: f64,
    params: &MarketParams,
    opts: &SolverOptions,
    slope_bound: f64,
) -> Result<Shot, SolverError> {
    let beta_lo = find_z0(params) - delta;
    let horizon = beta_lo + opts.z_max;
    let mut rk = Dopri5::new(opts.rtol, opts.atol);
    // the first step must not jump over the whole dip of g' (width about 2 delta)
    rk.h_init = rk.h_init.min(0.125 * delta);
    let mut steps: Vec<DenseStep<2>> = Vec::new();
    let mut event: Option<(f64, f64)> = None;
    let mut escape: Option<SolverError> = None;
    let mut max_abs_slope: f64 = 0.0;

    rk.integrate(rhs(params), beta_lo, [(1.0 + params.lambda_ask()).ln(), 0.0], horizon, |s| {
        let gp = s.y1[1];
        max_abs_slope = max_abs_slope.max(gp.abs());
        if gp.abs() > slope_bound {
            escape = Some(SolverError::BarrierEscape { z: s.t1(), gp, bound: slope_bound });
            return Control::Stop;
        }
        steps.push(s.clone());
        if s.y0[1] < 0.0 && gp >= 0.0 {
            let (mut lo, mut hi) = (s.t0, s.t1());
            while hi - lo > opts.event_tol {
                let mid = 0.5 * (lo + hi);
                if s.eval(mid)[1] < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let z = 0.5 * (lo + hi);
            event = Some((z, s.eval(z)[0]));
            return Control::Stop;
        }
        Control::Continue
    })
    .map_err(|source| SolverError::Step { delta, source })?;

    if let Some(e) = escape {
        return Err(e);
    }
    let (beta_hi, g_end) = event.ok_or(SolverError::EventNotFound { delta, beta_lo, horizon })?;
    Ok(Shot { delta, beta_lo, beta_hi, g_end, steps, max_abs_slope })
}

/// Uniform grid node of the solved free boundary problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GNode {
    pub z: f64,
    pub g: f64,
    pub gp: f64,
    pub gpp: f64,
}

/// Solved free boundary problem, resampled on a uniform grid over
/// `[beta_lo, beta_hi]`. Immutable.
#[derive(Debug, Clone)]
pub struct GSolution {
    params: MarketParams,
    options: SolverOptions,
    pub delta_star: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub z0: f64,
    pub gprime_bound: f64,
    /// `g(beta_hi) - log(1 - lambda_bid)`; nonnegative by construction.
    pub endpoint_residual: f64,
    /// Final shooting bracket.
    pub bracket: (f64, f64),
    nodes: Vec<GNode>,
    step: f64,
}

impl GSolution {
    pub fn params(&self) -> &MarketParams {
        &self.params
    }
    pub fn options(&self) -> &SolverOptions {
        &self.options
    }
    pub fn nodes(&self) -> &[GNode] {
        &self.nodes
    }
    /// Uniform node spacing in `z`.
    pub fn spacing(&self) -> f64 {
        self.step
    }

    /// `(g(z), g'(z))` by cubic Hermite interpolation of `g` (with slopes
    /// `g'`) and of `g'` (with slopes `g''`). `z` is clamped to the interval.
    pub fn eval(&self, z: f64) -> (f64, f64) {
        let z = z.clamp(self.beta_lo, self.beta_hi);
        let i = uniform_index(self.beta_lo, self.step, self.nodes.len(), z);
        let (n0, n1) = (&self.nodes[i], &self.nodes[i + 1]);
        let (g, _) = hermite(n0.z, self.step, n0.g, n1.g, n0.gp, n1.gp, z);
        let (gp, _) = hermite(n0.z, self.step, n0.gp, n1.gp, n0.gpp, n1.gpp, z);
        (g, gp)
    }

    /// `g''` from the ODE at `(z, g'(z))`.
    pub fn second_derivative(&self, z: f64, gp: f64) -> f64 {
        Coefficients::at(z, &self.params).second_derivative(gp)
    }
}

fn count_sign_changes(values: &[f64]) -> usize {
    values.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count()
}

/// Solves the free boundary problem by bracketing and bisection on the
/// shooting offset.
pub fn shoot(params: &MarketParams, opts: &SolverOptions) -> Result<GSolution, SolverError> {
    let z0 = find_z0(params);
    let slope_bound = gprime_bound(params, opts.z_max);
    let target = (1.0 - params.lambda_bid()).ln();
    let miss = |d: f64| -> Result<f64, SolverError> {
        Ok(integrate_g(d, params, opts, slope_bound)?.g_end - target)
    };

    let start = params.lambda_ask() + params.lambda_bid();
    let (mut lo, mut hi);
    if miss(start)? >= 0.0 {
        lo = start;
        hi = start;
        let mut n = 0;
        loop {
            hi *= 2.0;
            n += 1;
            if miss(hi)? < 0.0 {
                break;
            }
            lo = hi;
            if n >= opts.max_doublings {
                return Err(SolverError::BracketFailure { doublings: n });
            }
        }
    } else {
        hi = start;
        lo = start;
        let mut n = 0;
        loop {
            lo *= 0.5;
            n += 1;
            if miss(lo)? >= 0.0 {
                break;
            }
            hi = lo;
            if n >= opts.max_doublings {
                return Err(SolverError::BracketFailure { doublings: n });
            }
        }
    }

    let k = opts.ambiguity_samples.max(2);
    let samples: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|j| miss(lo + (hi - lo) * j as f64 / (k - 1) as f64))
        .collect::<Result<_, _>>()?;
    let changes = count_sign_changes(&samples);
    if changes != 1 {
        return Err(SolverError::Ambiguous { sign_changes: changes, lo, hi });
    }

    // keep miss(lo) >= 0 so the solved endpoint never undershoots the bid
    let mut miss_lo = miss(lo)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let m = miss(mid)?;
        if m >= 0.0 {
            lo = mid;
            miss_lo = m;
        } else {
            hi = mid;
        }
        if miss_lo <= 1e-3 * opts.target_tol {
            break;
        }
    }
    if miss_lo > opts.target_tol {
        return Err(SolverError::NoConvergence { residual: miss_lo });
    }

    let shot = integrate_g(lo, params, opts, slope_bound)?;
    let nodes = resample(&shot, params, opts.grid_nodes.max(3))?;
    Ok(GSolution {
        params: *params,
        options: *opts,
        delta_star: lo,
        beta_lo: shot.beta_lo,
        beta_hi: shot.beta_hi,
        z0,
        gprime_bound: slope_bound,
        endpoint_residual: shot.g_end - target,
        bracket: (lo, hi),
        step: (shot.beta_hi - shot.beta_lo) / (opts.grid_nodes.max(3) - 1) as f64,
        nodes,
    })
}

fn resample(shot: &Shot, params: &MarketParams, n: usize) -> Result<Vec<GNode>, SolverError> {
    let h = (shot.beta_hi - shot.beta_lo) / (n - 1) as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let z = if i == n - 1 { shot.beta_hi } else { shot.beta_lo + h * i as f64 };
        while k + 1 < shot.steps.len() && shot.steps[k].t1() < z {
            k += 1;
        }
        let [g, mut gp] = shot.steps[k].eval(z);
        if i == 0 {
            gp = 0.0;
        }
        let g = if i == n - 1 {
            // the event root is localized to event_tol; the boundary slope is zero
            gp = 0.0;
            shot.g_end
        } else {
            g
        };
        let gpp = Coefficients::at(z, params).second_derivative(gp);
        nodes.push(GNode { z, g, gp, gpp });
    }
    for (i, w) in nodes.windows(2).enumerate() {
        let interior_ok = i == 0 || w[0].gp < 0.0;
        if !(w[1].g < w[0].g) || !interior_ok || !is_monotone_segment(h, w[0].g, w[1].g, w[0].gp, w[1].gp) {
            return Err(SolverError::NonMonotoneGrid { index: i });
        }
    }
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> MarketParams {
        MarketParams::reference()
    }

    fn bound(p: &MarketParams) -> f64 {
        gprime_bound(p, 50.0)
    }

    #[test]
    fn small_offset_returns_near_ask() {
        let p = reference();
        let o = SolverOptions::default();
        let target = (1.0 + p.lambda_ask()).ln();
        let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&d| (integrate_g(d, &p, &o, bound(&p)).unwrap().g_end - target).abs())
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(gaps[2] < 1e-6);
    }

    #[test]
    fn tiny_costs_still_find_the_event() {
        let p = MarketParams::reference().with_costs(1e-5, 1e-5).unwrap();
        let shot = integrate_g(2e-5, &p, &SolverOptions::default(), bound(&p)).unwrap();
        assert!(shot.beta_hi > find_z0(&p) && shot.beta_hi < find_z0(&p) + 1e-3);
    }

    #[test]
    fn large_offset_falls_far_below_bid() {
        let p = reference();
        let shot = integrate_g(3.0, &p, &SolverOptions::default(), bound(&p)).unwrap();
        assert!(shot.g_end < (1.0 - p.lambda_bid()).ln() - 0.1, "{}", shot.g_end);
    }

    #[test]
    fn right_end_passes_z0_and_g_decreases() {
        let p = reference();
        let z0 = find_z0(&p);
        for d in [0.01, 0.1, 0.5, 1.5] {
            let shot = integrate_g(d, &p, &SolverOptions::default(), bound(&p)).unwrap();
            assert!(shot.beta_hi > z0, "delta {d}");
            let mut last = f64::INFINITY;
            for s in &shot.steps {
                for j in 0..=8 {
                    let z = s.t0 + s.h * j as f64 / 8.0;
                    if z > shot.beta_hi {
                        break;
                    }
                    let [g, gp] = s.eval(z);
                    assert!(g <= last + 1e-13, "delta {d} z {z}: {g} > {last}");
                    if z > shot.beta_lo && z < shot.beta_hi - 1e-9 {
                        assert!(gp < 0.0, "g'({z}) = {gp}");
                    }
                    last = g;
                }
            }
        }
    }

    #[test]
    fn reference_solution_satisfies_boundary_conditions() {
        let p = reference();
        let sol = shoot(&p, &SolverOptions::default()).unwrap();
        assert!(sol.delta_star > 0.0);
        assert!(sol.beta_lo < sol.z0 && sol.z0 < sol.beta_hi);
        assert!((sol.z0 - (5.0f64 / 3.0).ln()).abs() < 1e-14);
        let first = sol.nodes().first().unwrap();
        let last = sol.nodes().last().unwrap();
        assert!((first.g - 1.01f64.ln()).abs() <= 1e-8);
        assert!((last.g - 0.99f64.ln()).abs() <= 1e-8);
        assert!(sol.endpoint_residual >= 0.0 && sol.endpoint_residual <= 1e-10);
        assert_eq!(first.gp, 0.0);
        assert_eq!(last.gp, 0.0);
        assert!(sol.nodes().len() >= 2000);
        for n in &sol.nodes()[1..sol.nodes().len() - 1] {
            assert!(n.gp < 0.0 && n.gp >= -sol.gprime_bound);
        }
    }

    #[test]
    fn interpolation_matches_ode_between_nodes() {
        let p = reference();
        let sol = shoot(&p, &SolverOptions { grid_nodes: 2001, ..Default::default() }).unwrap();
        let shot = integrate_g(sol.delta_star, &p, sol.options(), sol.gprime_bound).unwrap();
        let mut worst: f64 = 0.0;
        for s in &shot.steps {
            let z = s.t0 + 0.37 * s.h;
            if z >= sol.beta_hi {
                continue;
            }
            let [g, gp] = s.eval(z);
            let (gi, gpi) = sol.eval(z);
            worst = worst.max((g - gi).abs()).max((gp - gpi).abs());
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn single_crossing_counter() {
        assert_eq!(count_sign_changes(&[1.0, 0.5, -0.1, -2.0]), 1);
        assert_eq!(count_sign_changes(&[1.0, -0.5, 0.1, -2.0]), 3);
        assert_eq!(count_sign_changes(&[1.0, 2.0]), 0);
    }

    #[test]
    fn tighter_tolerance_moves_boundaries_negligibly() {
        let p = reference();
        let a = shoot(&p, &SolverOptions::default()).unwrap();
        let b = shoot(&p, &SolverOptions::default().with_rtol(5e-11)).unwrap();
        assert!((a.delta_star - b.delta_star).abs() < 1e-8);
        assert!((a.beta_lo - b.beta_lo).abs() < 1e-8);
        assert!((a.beta_hi - b.beta_hi).abs() < 1e-8);
    }
}
