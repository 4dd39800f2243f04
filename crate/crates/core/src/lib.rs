//! Optimal consumption and investment with proportional transaction costs,
//! and the shadow price that makes the frictional optimum a frictionless one.
//!
//! Pipeline: [`params::MarketParams`] → [`solver::shoot`] (free boundary ODE)
//! → [`value::ValueFunction`] → [`shadow::ShadowEvaluator`] → [`sim::simulate`].

// `!(x > 0.0)` is used on purpose throughout so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod interp;
pub mod output;
pub mod params;
pub mod shadow;
pub mod sim;
pub mod solver;
pub mod suite;
pub mod value;

pub use error::{Error, Result};
pub use params::{MarketParams, RawParams};
pub use shadow::ShadowEvaluator;
pub use solver::SolverOptions;
pub use value::ValueFunction;
