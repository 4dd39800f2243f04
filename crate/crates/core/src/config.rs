//! Run configuration, read from TOML or JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{MarketParams, RawParams};
use crate::sim::SimConfig;
use crate::solver::SolverOptions;

/// Sizes of the auxiliary runs in the verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Step of the pathwise identity run.
    pub pathwise_dt: f64,
    pub pathwise_paths: usize,
    /// Coarsest step of the scheme comparison.
    pub gap_dt: f64,
    pub gap_halvings: u32,
    pub gap_paths: usize,
    /// Coarser of the two steps of the density representation run.
    pub density_dt: f64,
    pub density_paths: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            pathwise_dt: 1e-4,
            pathwise_paths: 100,
            gap_dt: 1e-3,
            gap_halvings: 3,
            gap_paths: 200,
            density_dt: 1e-4,
            density_paths: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub params: RawParams,
    pub solver: SolverOptions,
    pub simulation: SimConfig,
    pub verify: VerifyConfig,
    /// Rows of the value-function table written by `solve`.
    pub table_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: RawParams::REFERENCE,
            solver: SolverOptions::default(),
            simulation: SimConfig::default(),
            verify: VerifyConfig::default(),
            table_points: 1001,
        }
    }
}

impl RunConfig {
    /// Reads `path` as JSON when it ends in `.json`, otherwise as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, is_json).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, String> {
        if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    /// Validates every section, returning the checked market parameters.
    pub fn validate(&self) -> Result<MarketParams> {
        let params = self.params.validate()?;
        self.solver.check().map_err(Error::Config)?;
        self.simulation.validate()?;
        let v = &self.verify;
        for (name, dt) in [("pathwise_dt", v.pathwise_dt), ("gap_dt", v.gap_dt), ("density_dt", v.density_dt)]
        {
            if !(dt > 0.0) || dt > self.simulation.horizon {
                return Err(Error::Config(format!("verify.{name} must lie in (0, horizon], got {dt}")));
            }
        }
        for (name, n) in [
            ("pathwise_paths", v.pathwise_paths),
            ("gap_paths", v.gap_paths),
            ("density_paths", v.density_paths),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("verify.{name} must be at least 1")));
            }
        }
        if self.table_points < 2 {
            return Err(Error::Config("table_points must be at least 2".into()));
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_documents_give_defaults() {
        assert_eq!(RunConfig::parse("", false).unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("{}", true).unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_fill_in() {
        let c = RunConfig::parse(
            "[params]\nmu = 0.05\nsigma = 0.4\ndelta = 0.1\ngamma = 0.5\nlambda_ask = 0.02\nlambda_bid = 0.01\n[simulation]\nn_paths = 10\n",
            false,
        )
        .unwrap();
        assert_eq!(c.params.lambda_ask, 0.02);
        assert_eq!(c.simulation.n_paths, 10);
        assert_eq!(c.simulation.dt, 1e-3);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let e = RunConfig::parse("[simulation]\nnpaths = 3\n", false).unwrap_err();
        assert!(e.contains("npaths"), "{e}");
        assert!(e.contains("line 2"), "{e}");
        let e = RunConfig::parse("{\"solver\": {\"rtoll\": 1}}", true).unwrap_err();
        assert!(e.contains("rtoll") && e.contains("line 1"), "{e}");
    }

    #[test]
    fn validation_catches_each_section() {
        let mut c = RunConfig::default();
        c.simulation.n_paths = 0;
        assert!(matches!(c.validate(), Err(Error::Sim(_))));
        let mut c = RunConfig::default();
        c.solver.rtol = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.params.mu = 1.0;
        assert!(matches!(c.validate(), Err(Error::Params(_))));
    }

    #[test]
    fn round_trips_through_both_formats() {
        let c = RunConfig::default();
        let t = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&t, false).unwrap(), c);
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&j, true).unwrap(), c);
    }
}
