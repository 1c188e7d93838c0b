//! Backward stochastic difference equations with convex drivers on
//! Bernoulli random-walk lattices.
#![allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks

pub mod approximation;
pub mod drivers;
pub mod duality;
pub mod error;
pub mod lattice_prob;
pub mod parallel;
pub mod path;
pub mod picard;
pub mod random_walk;
pub mod report;
pub mod solver;

pub use error::{BsdeError, Result};
