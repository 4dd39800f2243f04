//! The full verification run behind `verify`.

use crate::config::RunConfig;
use crate::error::Result;
use crate::shadow::ShadowEvaluator;
use crate::sim::{
    density_entry, density_representation, scheme_gap, simulate, verify_limits, verify_martingales,
    verify_pathwise, verify_residuals, GapLevel, SimConfig, VerificationReport,
};
use crate::value::ValueFunction;

/// Residuals, limits, the main Monte Carlo run, a fine-step pathwise run,
/// the scheme comparison and the density representation check, in that
/// order.
pub fn run_suite(vf: &ValueFunction, cfg: &RunConfig) -> Result<VerificationReport> {
    let mut report = VerificationReport::new();
    report.extend(verify_residuals(vf)?);
    report.extend(verify_limits(vf.params(), &vf.solution().options().clone())?);

    let ev = ShadowEvaluator::with_default_anchor(vf)?;
    let sim = &cfg.simulation;
    let out = simulate(&ev, sim, false)?;
    report.extend(verify_martingales(&out));
    report.extend(verify_pathwise(&out, &ev)?);

    let v = &cfg.verify;
    let fine = SimConfig { dt: v.pathwise_dt, n_paths: v.pathwise_paths, antithetic: false, ..sim.clone() };
    let fine_out = simulate(&ev, &fine, false)?;
    report.extend(verify_pathwise(&fine_out, &ev)?.into_iter().map(|mut e| {
        e.name = format!("fine_{}", e.name);
        e
    }));

    let levels = scheme_gap(&ev, sim.horizon, v.gap_dt, v.gap_halvings, v.gap_paths, sim.seed)?;
    report.extend([GapLevel::entry(&levels, v.gap_paths)]);

    let (coarse, finer) = density_representation(&ev, sim.horizon, v.density_dt, v.density_paths, sim.seed)?;
    report.extend([density_entry(coarse, finer, v.density_paths, v.density_dt)]);
    Ok(report)
}
