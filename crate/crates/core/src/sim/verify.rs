//! Statistical, pathwise and analytical checks, collected into a report.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::{
    mean_and_se, path_rng, run_path, PathSummary, Scheme, SimConfig, SimError, SimOutput, StepError, Stepper,
};
use crate::params::MarketParams;
use crate::shadow::ShadowEvaluator;
use crate::solver::{Coefficients, SolverOptions};
use crate::value::{ValueError, ValueFunction};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestEntry {
    pub name: String,
    pub statistic: f64,
    pub standard_error: Option<f64>,
    pub z_score: Option<f64>,
    pub max_violation: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub n_paths: Option<usize>,
    pub dt: Option<f64>,
}

impl TestEntry {
    /// Passes when `|statistic - target| <= k * se`.
    fn statistical(name: &str, mean: f64, target: f64, se: f64, k: f64, n: usize, dt: f64) -> Self {
        let z = (mean - target) / se;
        Self {
            name: name.into(),
            statistic: mean,
            standard_error: Some(se),
            z_score: Some(z),
            max_violation: None,
            tolerance: k,
            pass: z.abs() <= k,
            n_paths: Some(n),
            dt: Some(dt),
        }
    }

    /// Passes when the worst deviation is within `tol`.
    fn bound(name: &str, worst: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            statistic: worst,
            standard_error: None,
            z_score: None,
            max_violation: Some(worst),
            tolerance: tol,
            pass: worst <= tol,
            n_paths: None,
            dt: None,
        }
    }

    fn flag(name: &str, statistic: f64, pass: bool) -> Self {
        Self { pass, ..Self::bound(name, statistic, 0.0) }
    }

    fn on_paths(mut self, n: usize, dt: f64) -> Self {
        self.n_paths = Some(n);
        self.dt = Some(dt);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub entries: Vec<TestEntry>,
}

impl VerificationReport {
    pub fn new() -> Self {
        Self { passed: true, entries: Vec::new() }
    }

    pub fn extend(&mut self, entries: impl IntoIterator<Item = TestEntry>) {
        for e in entries {
            self.passed &= e.pass;
            self.entries.push(e);
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &TestEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }

    pub fn get(&self, name: &str) -> Option<&TestEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Terminal means of `Z`, `M` and the Bellman functional against their
/// initial values, each within 3 standard errors.
pub fn verify_martingales(out: &SimOutput) -> Vec<TestEntry> {
    let n = out.summaries.len();
    let dt = out.dt;
    let (z, z_se) = mean_and_se(out, |s| s.z_closed);
    let (zs, zs_se) = mean_and_se(out, |s| s.z_sde);
    let (m, m_se) = mean_and_se(out, |s| s.m);
    let (b, b_se) = mean_and_se(out, |s| s.bellman);
    vec![
        TestEntry::statistical("martingale_density", z, 1.0, z_se, 3.0, n, dt),
        TestEntry::statistical("martingale_density_sde", zs, 1.0, zs_se, 3.0, n, dt),
        TestEntry::statistical("martingale_shadow_value", m, out.m0, m_se, 3.0, n, dt),
        TestEntry::statistical("martingale_bellman", b, out.v0, b_se, 3.0, n, dt),
    ]
}

/// Per-step identities and trading rules, aggregated over all paths.
pub fn verify_pathwise(out: &SimOutput, ev: &ShadowEvaluator<'_>) -> Result<Vec<TestEntry>, ValueError> {
    let (n, dt) = (out.summaries.len(), out.dt);
    let count = |f: fn(&PathSummary) -> u64| out.summaries.iter().map(f).sum::<u64>() as f64;
    let worst = |f: fn(&PathSummary) -> f64| out.summaries.iter().map(f).fold(0.0, f64::max);
    let (xi_bound, nu_bound) = ev.volatility_bounds(8001)?;
    let slack = 1.0 + 1e-6;
    let trades = count(|s| s.buy_steps + s.sell_steps);
    Ok(vec![
        TestEntry::bound("spread_containment", count(|s| s.containment_violations), 0.0),
        TestEntry::bound("trade_localization", count(|s| s.localization_violations), 0.0),
        TestEntry::bound("trade_side", count(|s| s.wrong_side_trades), 0.0),
        TestEntry::flag("trades_observed", trades, trades > 0.0),
        TestEntry::bound("solvency", count(|s| s.liquidation_violations), 0.0),
        TestEntry::bound("log_ratio_identity", worst(|s| s.max_log_ratio_error), 1e-8),
        TestEntry::bound("density_consumption_identity", worst(|s| s.max_density_error), 1e-10),
        TestEntry::bound("shadow_value_identity", worst(|s| s.max_m_error), 1e-12),
        TestEntry::bound("beta_identity", worst(|s| s.max_beta_error), 1e-8),
        TestEntry::bound("reflection_first_order", worst(|s| s.max_reflection_first), 1e-8),
        TestEntry::bound("reflection_second_order", worst(|s| s.max_reflection_second), 1e-6),
        TestEntry::bound("xi_bounded", worst(|s| s.max_xi) / (xi_bound * slack), 1.0),
        TestEntry::bound("nu_bounded", worst(|s| s.max_nu) / (nu_bound * slack), 1.0),
    ]
    .into_iter()
    .map(|e| e.on_paths(n, dt))
    .collect())
}

/// Log-utility coefficients of the slope ODE, written out separately from
/// the general ones.
pub fn log_utility_coefficients(z: f64, mu: f64, sigma: f64, delta: f64) -> Coefficients {
    let s2 = sigma * sigma;
    let logistic = 1.0 / (1.0 + (-z).exp());
    let growth = 1.0 + z.exp();
    Coefficients {
        a: -2.0 * mu / s2 + 2.0 * logistic,
        b: -2.0 * delta / s2 * growth + 4.0 * mu / s2 - 1.0 - 2.0 * logistic,
        c: 4.0 * delta / s2 * growth - 2.0 * mu / s2 + 1.0,
        d: -2.0 * delta / s2 * growth,
    }
}

/// Log-utility reduction, small-cost Merton limit and nesting of the
/// no-trade interval as costs fall.
pub fn verify_limits(params: &MarketParams, opts: &SolverOptions) -> Result<Vec<TestEntry>, ValueError> {
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let z = -10.0 + 20.0 * i as f64 / 999.0;
        let k = Coefficients::from_scalars(z, params.mu(), params.sigma(), params.delta(), 0.0);
        let o = log_utility_coefficients(z, params.mu(), params.sigma(), params.delta());
        for (a, b) in [(k.a, o.a), (k.b, o.b), (k.c, o.c), (k.d, o.d)] {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    let merton = params.merton_fraction();
    let interval = |lambda: f64| -> Result<(f64, f64), ValueError> {
        let p = params
            .with_costs(lambda, lambda)
            .map_err(|_| ValueError::InvalidState("cost level rejected by parameter validation"))?;
        let vf = ValueFunction::solve(&p, opts)?;
        Ok((vf.theta1, vf.theta2))
    };
    let i3 = interval(1e-3)?;
    let i4 = interval(1e-4)?;
    let i5 = interval(1e-5)?;
    let gap = |i: (f64, f64)| (i.0 - merton).abs().max((i.1 - merton).abs());
    let merton_gap = gap(i4);
    let converging = gap(i3) > gap(i4) && gap(i4) > gap(i5);
    let nested = i3.0 < i4.0 && i4.1 < i3.1 && i4.0 < i5.0 && i5.1 < i4.1;
    let widths = [i3.1 - i3.0, i4.1 - i4.0, i5.1 - i5.0];
    let shrinking = widths[0] > widths[1] && widths[1] > widths[2];
    Ok(vec![
        TestEntry::bound("log_utility_coefficients", worst, 1e-12),
        TestEntry::bound("merton_limit", merton_gap, 0.02),
        TestEntry::flag("merton_convergence", gap(i5), converging),
        TestEntry::flag("no_trade_nesting", widths[2], nested && shrinking),
    ])
}

/// Free boundary, HJB, boundary and positivity checks on a built value
/// function. Re-solves at half the tolerance for the residual trend.
pub fn verify_residuals(vf: &ValueFunction) -> Result<Vec<TestEntry>, ValueError> {
    let params = vf.params();
    let sol = vf.solution();
    let nodes = sol.nodes();
    let (first, last) = (nodes[0], nodes[nodes.len() - 1]);
    let bc = [
        first.g - (1.0 + params.lambda_ask()).ln(),
        first.gp,
        last.g - (1.0 - params.lambda_bid()).ln(),
        last.gp,
    ]
    .iter()
    .fold(0.0_f64, |m, v| m.max(v.abs()));
    let decreasing = nodes.windows(2).all(|w| w[1].g < w[0].g);

    let mut ident: f64 = 0.0;
    let (mu, s2, g) = (params.mu(), params.sigma().powi(2), params.gamma());
    for i in 0..1000 {
        let z = -10.0 + 20.0 * i as f64 / 999.0;
        let k = Coefficients::at(z, params);
        let l = 1.0 / (1.0 + (-z).exp());
        let b = k.d + 4.0 * mu / s2 - 1.0 + (-4.0 * g * g + 7.0 * g - 2.0) / (1.0 - g) * l;
        let c = -2.0 * k.d - 2.0 * mu / s2 + 1.0 + (2.0 * g * g - 3.0 * g) / (1.0 - g) * l;
        ident = ident.max((b - k.b).abs() / k.b.abs().max(1.0)).max((c - k.c).abs() / k.c.abs().max(1.0));
    }

    let grid = vf.u_grid(1000);
    let max_residual = |f: &ValueFunction| -> Result<f64, ValueError> {
        f.u_grid(1000).into_iter().try_fold(0.0_f64, |m, u| Ok(m.max(f.relative_hjb_residual(u)?)))
    };
    let residual = max_residual(vf)?;
    let refined_opts = sol.options().with_rtol(0.5 * sol.options().rtol);
    let refined = ValueFunction::solve(params, &refined_opts)?;
    let refined_residual = max_residual(&refined)?;

    let report = vf.boundary_check()?;
    let pasting = [vf.pasting_residuals(1.0)?, vf.pasting_residuals(3.7)?]
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(*v));

    let mut min_h = f64::INFINITY;
    let mut floor_gap: f64 = 0.0;
    let mut end_gap: f64 = 0.0;
    for (i, &u) in grid.iter().enumerate() {
        let p = vf.point(u)?;
        let hh = vf.big_h(&p);
        let fl = vf.quadratic_floor(&p);
        min_h = min_h.min(hh);
        if i == 0 || i == grid.len() - 1 {
            end_gap = end_gap.max((hh - fl).abs() / hh);
        } else {
            floor_gap = floor_gap.max((fl - hh) / hh);
        }
    }

    Ok(vec![
        TestEntry::bound("free_boundary_conditions", bc, 1e-8),
        TestEntry::flag("g_strictly_decreasing", nodes.len() as f64, decreasing),
        TestEntry::bound("coefficient_identities", ident, 1e-12),
        TestEntry::bound("hjb_residual", residual, 1e-6),
        TestEntry::flag("hjb_residual_refines", refined_residual, refined_residual < residual),
        TestEntry::bound("boundary_equalities", pasting.max(report.max_equality_violation), 1e-8),
        TestEntry::flag(
            "boundary_interior_inequalities",
            report.min_sell_margin.min(report.min_buy_margin),
            report.min_sell_margin > 0.0 && report.min_buy_margin > 0.0,
        ),
        TestEntry::flag("operator_positive", min_h, min_h > 0.0),
        TestEntry::bound("quadratic_floor", floor_gap.max(0.0), 1e-8),
        TestEntry::bound("quadratic_floor_endpoints", end_gap, 1e-8),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapLevel {
    pub dt: f64,
    /// Mean over paths of `sup_t |U_reduced - U_direct|`.
    pub mean_sup_gap: f64,
    pub standard_error: f64,
}

/// Runs both schemes on shared Brownian paths at `dt`, `dt/2`, ...,
/// `dt/2^halvings`. Coarse increments are sums of the finest ones.
pub fn scheme_gap(
    ev: &ShadowEvaluator<'_>,
    horizon: f64,
    dt: f64,
    halvings: u32,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<GapLevel>, SimError> {
    let cfg = SimConfig { horizon, dt, n_paths, seed, ..Default::default() };
    cfg.validate()?;
    let vf = ev.value_function();
    let coarse = cfg.n_steps();
    let dt = cfg.effective_dt();
    let fine = coarse << halvings;
    let fine_dt = horizon / fine as f64;
    let (x0, y0) = ev.anchor();

    let per_path: Vec<Result<Vec<f64>, SimError>> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(seed, path as u64);
            let dw: Vec<f64> = (0..fine)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    fine_dt.sqrt() * z
                })
                .collect();
            let err = |source| SimError::Path { path, source };
            (0..=halvings)
                .map(|level| {
                    let agg = 1usize << (halvings - level);
                    let h = dt / (1u64 << level) as f64;
                    let a = Stepper::new(vf, Scheme::UReduced);
                    let b = Stepper::new(vf, Scheme::XyDirect);
                    let (mut sa, mut sb) = ((x0, y0, x0 / y0), (x0, y0, x0 / y0));
                    let mut sup: f64 = 0.0;
                    for chunk in dw.chunks(agg) {
                        let w: f64 = chunk.iter().sum();
                        for (st, s) in [(&a, &mut sa), (&b, &mut sb)] {
                            let p = vf.point(s.2).map_err(|e| err(StepError::Value(e)))?;
                            let o = st.step(s.0, s.1, s.2, &p, w, h).map_err(err)?;
                            *s = (o.x, o.y, o.u);
                        }
                        sup = sup.max((sa.2 - sb.2).abs());
                    }
                    Ok(sup)
                })
                .collect()
        })
        .collect();
    let gaps: Vec<Vec<f64>> = per_path.into_iter().collect::<Result<_, _>>()?;

    Ok((0..=halvings as usize)
        .map(|level| {
            let xs: Vec<f64> = gaps.iter().map(|g| g[level]).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            GapLevel { dt: dt / (1u64 << level) as f64, mean_sup_gap: mean, standard_error: (var / n).sqrt() }
        })
        .collect())
}

impl GapLevel {
    /// Entry passing when the gap shrinks at every halving.
    pub fn entry(levels: &[GapLevel], n_paths: usize) -> TestEntry {
        let monotone = levels.windows(2).all(|w| w[1].mean_sup_gap < w[0].mean_sup_gap);
        let last = levels.last().map_or(f64::NAN, |l| l.mean_sup_gap);
        let mut e = TestEntry::flag("scheme_agreement", last, monotone);
        e.n_paths = Some(n_paths);
        e.dt = levels.last().map(|l| l.dt);
        e
    }
}

/// Mean relative gap between the integrated and closed-form densities at the
/// horizon, at `dt` and `dt / 2`.
pub fn density_representation(
    ev: &ShadowEvaluator<'_>,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64), SimError> {
    let gap = |dt: f64| -> Result<f64, SimError> {
        let cfg = SimConfig { horizon, dt, n_paths, seed, ..Default::default() };
        cfg.validate()?;
        let sums: Vec<Result<f64, SimError>> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut noise = super::RngNoise { rng: path_rng(seed, i as u64), sign: 1.0 };
                let (s, _) = run_path(ev, &cfg, i, &mut noise, false)?;
                Ok((s.z_sde - s.z_closed).abs() / s.z_closed)
            })
            .collect();
        let v: Vec<f64> = sums.into_iter().collect::<Result<_, _>>()?;
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok((gap(dt)?, gap(0.5 * dt)?))
}

pub fn density_entry(coarse: f64, fine: f64, n_paths: usize, dt: f64) -> TestEntry {
    let mut e = TestEntry::flag("density_representation", coarse, coarse <= 0.05 && fine < coarse);
    e.tolerance = 0.05;
    e.max_violation = Some(fine);
    e.on_paths(n_paths, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::simulate;
    use std::sync::OnceLock;

    fn vf() -> &'static ValueFunction {
        static VF: OnceLock<ValueFunction> = OnceLock::new();
        VF.get_or_init(|| {
            ValueFunction::solve(&MarketParams::reference(), &SolverOptions::default()).unwrap()
        })
    }

    #[test]
    fn log_utility_at_zero() {
        let c = log_utility_coefficients(0.0, 0.05, 0.4, 0.1);
        assert!((c.a - (-2.0 * 0.05 / 0.16 + 1.0)).abs() < 1e-15);
        assert!((c.d - (-2.0 * 0.1 / 0.16 * 2.0)).abs() < 1e-14);
    }

    #[test]
    fn residual_checks_pass_on_reference() {
        let entries = verify_residuals(vf()).unwrap();
        for e in &entries {
            assert!(e.pass, "{e:?}");
        }
    }

    #[test]
    fn small_run_pathwise_and_martingale() {
        let ev = ShadowEvaluator::with_default_anchor(vf()).unwrap();
        let cfg = SimConfig { n_paths: 400, horizon: 0.5, dt: 1e-3, ..Default::default() };
        let out = simulate(&ev, &cfg, false).unwrap();
        for e in verify_pathwise(&out, &ev).unwrap() {
            assert!(e.pass, "{e:?}");
        }
        let m = verify_martingales(&out);
        assert_eq!(m.len(), 4);
        assert!(m.iter().all(|e| e.standard_error.unwrap() > 0.0));
    }

    #[test]
    fn report_tracks_failures() {
        let mut r = VerificationReport::new();
        r.extend([TestEntry::bound("a", 1.0, 2.0)]);
        assert!(r.passed);
        r.extend([TestEntry::bound("b", 3.0, 2.0)]);
        assert!(!r.passed);
        assert_eq!(r.failures().count(), 1);
        assert!(r.get("b").is_some());
    }

    #[test]
    fn scheme_gap_is_deterministic_and_positive() {
        let ev = ShadowEvaluator::with_default_anchor(vf()).unwrap();
        let a = scheme_gap(&ev, 0.2, 2e-3, 2, 16, 1).unwrap();
        let b = scheme_gap(&ev, 0.2, 2e-3, 2, 16, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|l| l.mean_sup_gap > 0.0));
    }
}
