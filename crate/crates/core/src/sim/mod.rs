//! Monte Carlo simulation of the reflected optimal state.
//!
//! Between trades the state follows `dX = -c dt`, `dY = Y (mu dt + sigma dW)`.
//! At the boundary the state is projected back along the trade direction
//! `r`: selling at `u1` moves along `(1 - lambda_bid, -1)`, buying at `u2`
//! along `(-(1 + lambda_ask), 1)`. The increment `k` is the traded stock value.

mod scheme;
mod verify;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shadow::ShadowEvaluator;
use crate::value::{HPoint, ValueError};

pub use scheme::{Projection, Side, StepError, Stepper};
pub use verify::{
    density_entry, density_representation, log_utility_coefficients, scheme_gap, verify_limits,
    verify_martingales, verify_pathwise, verify_residuals, GapLevel, TestEntry, VerificationReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Euler step of the ratio `U = X / Y`, then `Y`.
    #[default]
    UReduced,
    /// Euler step of `(X, Y)`.
    XyDirect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Pairs paths `(2i, 2i+1)` with negated increments.
    pub antithetic: bool,
    /// Initial mid price.
    pub s0: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            dt: 1e-3,
            n_paths: 50_000,
            seed: 7,
            scheme: Scheme::UReduced,
            antithetic: false,
            s0: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.dt > 0.0) || self.dt > self.horizon {
            return bad(format!("dt must lie in (0, horizon], got {}", self.dt));
        }
        if self.n_paths == 0 {
            return bad("n_paths must be at least 1".into());
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return bad(format!("antithetic runs need an even path count, got {}", self.n_paths));
        }
        if !(self.s0 > 0.0) || !self.s0.is_finite() {
            return bad(format!("s0 must be positive, got {}", self.s0));
        }
        Ok(())
    }

    /// Number of steps; the step actually used is `horizon / n_steps`.
    pub fn n_steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }

    pub fn effective_dt(&self) -> f64 {
        self.horizon / self.n_steps() as f64
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("path {path}: {source}")]
    Path {
        path: usize,
        #[source]
        source: StepError,
    },
    #[error(transparent)]
    Value(#[from] ValueError),
}

/// One recorded time point of a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    /// Increment that led to this point (0 at `t = 0`).
    pub dw: f64,
    pub s: f64,
    pub u: f64,
    pub x: f64,
    pub y: f64,
    pub c: f64,
    pub shadow_price: f64,
    pub z_closed: f64,
    pub z_sde: f64,
    pub m: f64,
    pub beta: f64,
    pub log_ratio: f64,
    pub dk_buy: f64,
    pub dk_sell: f64,
    pub cum_buy: f64,
    pub cum_sell: f64,
}

impl StepRecord {
    pub const COLUMNS: [&'static str; 17] = [
        "t",
        "dw",
        "s",
        "u",
        "x",
        "y",
        "c",
        "shadow_price",
        "z_closed",
        "z_sde",
        "m",
        "beta",
        "log_ratio",
        "dk_buy",
        "dk_sell",
        "cum_buy",
        "cum_sell",
    ];

    pub fn values(&self) -> [f64; 17] {
        [
            self.t,
            self.dw,
            self.s,
            self.u,
            self.x,
            self.y,
            self.c,
            self.shadow_price,
            self.z_closed,
            self.z_sde,
            self.m,
            self.beta,
            self.log_ratio,
            self.dk_buy,
            self.dk_sell,
            self.cum_buy,
            self.cum_sell,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub path: usize,
    pub steps: Vec<StepRecord>,
}

/// Per-path terminal values and worst pathwise deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PathSummary {
    pub z_closed: f64,
    pub z_sde: f64,
    pub m: f64,
    /// Discounted utility of consumption plus discounted terminal value.
    pub bellman: f64,
    pub u_end: f64,
    pub containment_violations: u64,
    pub localization_violations: u64,
    pub liquidation_violations: u64,
    pub wrong_side_trades: u64,
    pub buy_steps: u64,
    pub sell_steps: u64,
    pub cum_buy: f64,
    pub cum_sell: f64,
    pub max_log_ratio_error: f64,
    pub max_density_error: f64,
    pub max_m_error: f64,
    pub max_beta_error: f64,
    pub max_reflection_first: f64,
    pub max_reflection_second: f64,
    pub max_xi: f64,
    pub max_nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutput {
    pub config: SimConfig,
    pub dt: f64,
    pub n_steps: usize,
    pub m0: f64,
    pub v0: f64,
    pub summaries: Vec<PathSummary>,
    /// Full trajectories, only when requested.
    pub paths: Option<Vec<PathRecord>>,
}

/// Source of standard normal draws for one path.
pub trait Noise {
    fn next_normal(&mut self) -> f64;
}

struct RngNoise {
    rng: ChaCha8Rng,
    sign: f64,
}

impl Noise for RngNoise {
    fn next_normal(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.sign * z
    }
}

/// Always zero; leaves only the drift.
pub struct ZeroNoise;

impl Noise for ZeroNoise {
    fn next_normal(&mut self) -> f64 {
        0.0
    }
}

/// Independent stream `stream` of the master `seed`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Noise for path `index`. With antithetics, paths `2i` and `2i+1` share
/// stream `i` and the odd one is negated.
fn noise_for(config: &SimConfig, index: usize) -> RngNoise {
    if config.antithetic {
        let sign = if index % 2 == 0 { 1.0 } else { -1.0 };
        RngNoise { rng: path_rng(config.seed, (index / 2) as u64), sign }
    } else {
        RngNoise { rng: path_rng(config.seed, index as u64), sign: 1.0 }
    }
}

/// Simulates one path from the anchor, returning its summary and, when
/// `record` is set, every time point.
pub fn run_path<N: Noise>(
    ev: &ShadowEvaluator<'_>,
    config: &SimConfig,
    index: usize,
    noise: &mut N,
    record: bool,
) -> Result<(PathSummary, Option<PathRecord>), SimError> {
    let vf = ev.value_function();
    let params = vf.params();
    let stepper = Stepper::new(vf, config.scheme);
    let sol = vf.solution();
    let (gamma, delta, mu, sigma) = (params.gamma(), params.delta(), params.mu(), params.sigma());
    let (la, lb) = (params.lambda_ask(), params.lambda_bid());
    let n = config.n_steps();
    let dt = config.effective_dt();
    let sqdt = dt.sqrt();
    let c_exp = -1.0 / (1.0 - gamma);
    let c0 = ev.initial_consumption();
    let vx0 = ev.vx0();
    let s_drift = (mu - 0.5 * sigma * sigma) * dt;
    let err = |source| SimError::Path { path: index, source };

    let (x0, y0) = ev.anchor();
    let mut x = x0;
    let mut y = y0;
    let mut u = x0 / y0;
    let mut s = config.s0;
    let mut z_sde = 1.0;
    let mut p: HPoint = vf.point(u)?;
    let mut sum = PathSummary::default();
    let mut records = record.then(|| Vec::with_capacity(n + 1));
    let mut utility_prev = 0.0;

    for i in 0..=n {
        let t = i as f64 * dt;
        let (dw, dk_buy, dk_sell) = if i == 0 {
            (0.0, 0.0, 0.0)
        } else {
            let dw = sqdt * noise.next_normal();
            let (xi, _) = ev.volatilities_at(&p);
            z_sde *= (-xi * dw - 0.5 * xi * xi * dt).exp();
            let out = stepper.step(x, y, u, &p, dw, dt).map_err(err)?;
            x = out.x;
            y = out.y;
            u = out.u;
            s *= (s_drift + sigma * dw).exp();
            p = vf.point(u).map_err(|e| err(StepError::Value(e)))?;
            match out.projection {
                Some(Projection { side: Side::Buy, k, .. }) => (dw, k, 0.0),
                Some(Projection { side: Side::Sell, k, .. }) => (dw, 0.0, k),
                None => (dw, 0.0, 0.0),
            }
        };

        let d = vf.derivs_at(&p, y);
        let disc = (-delta * t).exp();
        let c = y * p.hp.powf(c_exp);
        let shadow = s * d.vy / d.vx;
        let z_closed = disc * d.vx / vx0;
        let m = disc * s * d.vy / vx0;
        let beta = (y * d.vy / (x * d.vx)).ln();
        let log_ratio = (shadow / s).ln();

        // pathwise checks
        let lo = (1.0 - lb) * s;
        let hi = (1.0 + la) * s;
        if !(shadow >= lo * (1.0 - 1e-13) && shadow <= hi * (1.0 + 1e-13)) {
            sum.containment_violations += 1;
        }
        if dk_buy > 0.0 {
            sum.buy_steps += 1;
            if (shadow - hi).abs() > 1e-8 * s {
                sum.localization_violations += 1;
            }
            if u != vf.u2 {
                sum.wrong_side_trades += 1;
            }
        }
        if dk_sell > 0.0 {
            sum.sell_steps += 1;
            if (shadow - lo).abs() > 1e-8 * s {
                sum.localization_violations += 1;
            }
            if u != vf.u1 {
                sum.wrong_side_trades += 1;
            }
        }
        if dk_buy > 0.0 || dk_sell > 0.0 {
            let (r1, r2) = if dk_buy > 0.0 { (-(1.0 + la), 1.0) } else { (1.0 - lb, -1.0) };
            let first = (d.vx * r1 + d.vy * r2).abs() / (d.vx * r1).abs();
            let second_a = (d.vxx * r1 + d.vxy * r2).abs() / (d.vxx * r1).abs().max((d.vxy * r2).abs());
            let second_b = (d.vxy * r1 + d.vyy * r2).abs() / (d.vxy * r1).abs().max((d.vyy * r2).abs());
            sum.max_reflection_first = sum.max_reflection_first.max(first);
            sum.max_reflection_second = sum.max_reflection_second.max(second_a).max(second_b);
        }
        if x + (1.0 - lb) * y < 0.0 {
            sum.liquidation_violations += 1;
        }
        sum.cum_buy += dk_buy;
        sum.cum_sell += dk_sell;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs());
        sum.max_log_ratio_error = sum.max_log_ratio_error.max((log_ratio - sol.eval(beta).0).abs());
        sum.max_density_error = sum.max_density_error.max(rel(z_closed, disc * (c / c0).powf(gamma - 1.0)));
        sum.max_m_error = sum.max_m_error.max(rel(m, z_closed * shadow));
        sum.max_beta_error = sum.max_beta_error.max((beta - p.f).abs());
        let (xi, nu) = ev.volatilities_at(&p);
        sum.max_xi = sum.max_xi.max(xi.abs());
        sum.max_nu = sum.max_nu.max(nu.abs());

        let utility = disc * params.utility(c);
        if i > 0 {
            sum.bellman += 0.5 * dt * (utility_prev + utility);
        }
        utility_prev = utility;

        if let Some(r) = records.as_mut() {
            r.push(StepRecord {
                t,
                dw,
                s,
                u,
                x,
                y,
                c,
                shadow_price: shadow,
                z_closed,
                z_sde,
                m,
                beta,
                log_ratio,
                dk_buy,
                dk_sell,
                cum_buy: sum.cum_buy,
                cum_sell: sum.cum_sell,
            });
        }
        if i == n {
            sum.z_closed = z_closed;
            sum.z_sde = z_sde;
            sum.m = m;
            sum.u_end = u;
            sum.bellman += disc * d.v;
        }
    }
    Ok((sum, records.map(|steps| PathRecord { path: index, steps })))
}

/// Runs `config.n_paths` independent paths from the evaluator's anchor.
/// Output is identical for any number of worker threads.
pub fn simulate(
    ev: &ShadowEvaluator<'_>,
    config: &SimConfig,
    emit_paths: bool,
) -> Result<SimOutput, SimError> {
    config.validate()?;
    let (x0, y0) = ev.anchor();
    let d0 = ev.value_function().eval_v(x0, y0)?;
    let results: Vec<Result<(PathSummary, Option<PathRecord>), SimError>> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| run_path(ev, config, i, &mut noise_for(config, i), emit_paths))
        .collect();
    let mut summaries = Vec::with_capacity(config.n_paths);
    let mut paths = emit_paths.then(Vec::new);
    for r in results {
        let (s, rec) = r?;
        summaries.push(s);
        if let (Some(p), Some(rec)) = (paths.as_mut(), rec) {
            p.push(rec);
        }
    }
    Ok(SimOutput {
        config: config.clone(),
        dt: config.effective_dt(),
        n_steps: config.n_steps(),
        m0: config.s0 * d0.vy / ev.vx0(),
        v0: d0.v,
        summaries,
        paths,
    })
}

/// Mean and standard error of `f` over paths; with antithetics the error is
/// computed from pair averages.
pub fn mean_and_se(out: &SimOutput, f: impl Fn(&PathSummary) -> f64) -> (f64, f64) {
    let samples: Vec<f64> = if out.config.antithetic {
        out.summaries.chunks(2).map(|p| 0.5 * (f(&p[0]) + f(&p[1]))).collect()
    } else {
        out.summaries.iter().map(&f).collect()
    };
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::MarketParams;
    use crate::solver::SolverOptions;
    use crate::value::ValueFunction;
    use std::sync::OnceLock;

    fn vf() -> &'static ValueFunction {
        static VF: OnceLock<ValueFunction> = OnceLock::new();
        VF.get_or_init(|| {
            ValueFunction::solve(&MarketParams::reference(), &SolverOptions::default()).unwrap()
        })
    }

    fn small(n_paths: usize) -> SimConfig {
        SimConfig { n_paths, horizon: 0.5, dt: 1e-3, ..Default::default() }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        assert!(SimConfig { n_paths: 0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { dt: 2.0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { horizon: -1.0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { antithetic: true, n_paths: 3, ..Default::default() }.validate().is_err());
        assert_eq!(SimConfig { horizon: 1.0, dt: 1e-3, ..Default::default() }.n_steps(), 1000);
    }

    #[test]
    fn repeat_runs_are_identical() {
        let ev = ShadowEvaluator::with_default_anchor(vf()).unwrap();
        let a = simulate(&ev, &small(8), true).unwrap();
        let b = simulate(&ev, &small(8), true).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| simulate(&ev, &small(8), true).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn zero_noise_follows_the_drift_ode() {
        let ev = ShadowEvaluator::with_default_anchor(vf()).unwrap();
        let p = vf().params();
        let cfg = SimConfig { n_paths: 1, horizon: 0.2, dt: 1e-4, ..Default::default() };
        let (_, rec) = run_path(&ev, &cfg, 0, &mut ZeroNoise, true).unwrap();
        let steps = rec.unwrap().steps;
        let dt = cfg.effective_dt();
        let mut u = steps[0].u;
        for w in steps.windows(2) {
            let hp = vf().point(u).unwrap().hp;
            let drift = -hp.powf(-1.0 / (1.0 - p.gamma())) - p.mu() * u + p.sigma().powi(2) * u;
            u = (u + drift * dt).clamp(vf().u1, vf().u2);
            assert!((w[1].u - u).abs() <= 1e-12, "{} vs {}", w[1].u, u);
            assert_eq!(w[1].dw, 0.0);
        }
    }

    #[test]
    fn records_respect_invariants() {
        let ev = ShadowEvaluator::with_default_anchor(vf()).unwrap();
        let out = simulate(&ev, &small(16), true).unwrap();
        for path in out.paths.as_ref().unwrap() {
            let mut prev_buy = 0.0;
            let mut prev_sell = 0.0;
            for r in &path.steps {
                assert!(r.u >= vf().u1 && r.u <= vf().u2);
                assert!(r.dk_buy * r.dk_sell == 0.0);
                assert!(r.y > 0.0 && r.s > 0.0);
                assert!((r.x - r.u * r.y).abs() <= 1e-14 * r.x);
                if r.cum_buy > prev_buy {
                    assert_eq!(r.u, vf().u2);
                }
                if r.cum_sell > prev_sell {
                    assert_eq!(r.u, vf().u1);
                }
                prev_buy = r.cum_buy;
                prev_sell = r.cum_sell;
            }
        }
        for s in &out.summaries {
            assert_eq!(s.containment_violations, 0);
            assert_eq!(s.localization_violations, 0);
            assert_eq!(s.wrong_side_trades, 0);
        }
        assert!(out.summaries.iter().any(|s| s.buy_steps + s.sell_steps > 0));
    }

    #[test]
    fn antithetic_pairs_mirror_increments() {
        let ev = ShadowEvaluator::with_default_anchor(vf()).unwrap();
        let cfg = SimConfig { antithetic: true, ..small(4) };
        let out = simulate(&ev, &cfg, true).unwrap();
        let paths = out.paths.unwrap();
        for (a, b) in paths[0].steps.iter().zip(&paths[1].steps) {
            assert_eq!(a.dw, -b.dw);
        }
        assert_ne!(paths[0].steps[5].dw, paths[2].steps[5].dw);
    }

    #[test]
    fn streams_do_not_depend_on_path_count() {
        let ev = ShadowEvaluator::with_default_anchor(vf()).unwrap();
        let a = simulate(&ev, &small(3), false).unwrap();
        let b = simulate(&ev, &small(6), false).unwrap();
        assert_eq!(a.summaries[..], b.summaries[..3]);
    }
}
