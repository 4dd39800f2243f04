//! Free boundary solver for the slope function `g`.

mod coefficients;
pub mod dopri;
mod shooting;

pub use coefficients::{find_z0, gprime_bound, Coefficients};
pub use shooting::{integrate_g, shoot, GNode, GSolution, Shot, SolverError, SolverOptions};
