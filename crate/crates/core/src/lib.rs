//! Optimal production of a carbon-emitting firm facing a cap-and-trade
//! allowance market.
//!
//! The crate solves the Hamilton-Jacobi-Bellman equation of a large producer
//! whose output moves both the emission-perception state and the market risk
//! premium, compares the resulting policy with the small-producer benchmark,
//! and ships an independent Monte Carlo oracle for checking the PDE solution.
//!
//! * [`model`] holds the economic primitives and pointwise optimizers.
//! * [`grid`] discretizes the `(e, y)` box and provides boundary data.
//! * [`solver`] runs the backward splitting scheme.
//! * [`oracle`] evaluates policies by simulation.

pub mod grid;
pub mod model;
pub mod oracle;
pub mod solver;

mod tridiag;

pub use grid::{Field, GridSpec};
pub use model::{FirmModel, LinearQuadratic, MarketDynamics, ProducerMode, QuadraticFirm};
pub use oracle::{McEstimate, MarkovPolicy};
pub use solver::{Solution, SolverConfig};
