//! Backward stochastic differential equations with jumps.

mod linear;
mod problem;
mod solution;
mod solver;

pub use linear::{gamma_factor, solve_linear_closed_form, GammaFactor, LinearBsde};
pub use problem::{
    check_lambda_condition, BsdeProblem, Driver, FnDriver, Horizon, LambdaCheck, Representation, StructuralConstants, Terminal,
    TerminalValue,
};
pub use solution::{weighted_distance, weighted_norm, weighted_norm_upto, BsdeSolution, SolveDiagnostics};
pub use solver::{solve_infinite, solve_truncated, InfiniteSolution, LadderDiagnostics, LadderOptions};
