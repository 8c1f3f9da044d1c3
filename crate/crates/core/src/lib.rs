// Index loops mirror the formulas; `!(a > b)` forms also reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod error;
pub mod examples;
pub mod grid;
pub mod hamiltonian;
pub mod model;
pub mod performance;
pub mod regression;
pub mod scalar;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use scalar::Real;

/// Double-precision aliases.
pub type Model = model::JumpDiffusionModel<f64>;
pub type Policy = model::ControlPolicy<f64>;
pub type Bundle = simulate::PathBundle<f64>;
pub type Grid = grid::TimeGrid<f64>;
pub type Problem = bsde::BsdeProblem<f64>;
pub type Solution = bsde::BsdeSolution<f64>;
pub type Adjoint = hamiltonian::AdjointTriple<f64>;
pub type Params = examples::ExampleParams<f64>;

/// Single-precision aliases.
pub type ModelF32 = model::JumpDiffusionModel<f32>;
pub type PolicyF32 = model::ControlPolicy<f32>;
pub type BundleF32 = simulate::PathBundle<f32>;
pub type GridF32 = grid::TimeGrid<f32>;
pub type ProblemF32 = bsde::BsdeProblem<f32>;
pub type SolutionF32 = bsde::BsdeSolution<f32>;
pub type AdjointF32 = hamiltonian::AdjointTriple<f32>;
pub type ParamsF32 = examples::ExampleParams<f32>;
