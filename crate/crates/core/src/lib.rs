//! Optimal Skorokhod embeddings with several marginals on a random-walk
//! lattice.
//!
//! The value `P(μ) = sup E[Φ(B, T)]` over embeddings `T = (T_1, …, T_n)` of a
//! peacock `μ = (μ_1, …, μ_n)` is computed two ways:
//!
//! * [`primal`]: a linear program over randomized stopping rules, whose
//!   solution is an optimal embedding;
//! * [`dualopt`]: subgradient minimization over potentials `λ` of the dual
//!   objective, whose inner problem ([`multistop`]) is optimal multiple
//!   stopping and yields a pathwise superhedge.
//!
//! [`oracles`] holds independent reference values, [`martransport`] maps
//! martingale-transport payoffs to embedding problems, and [`cli`] wires
//! everything into batch runs.

pub mod cli;
pub mod dualopt;
pub mod error;
pub mod instance;
pub mod lattice;
pub mod lp;
pub mod martransport;
pub mod measures;
pub mod multistop;
pub mod oracles;
pub mod payoffs;
pub mod primal;
pub mod report;
pub mod solve;

pub use dualopt::{dual_objective, minimize_dual, subgradient, DualConfig, DualPotential, StepRule};
pub use error::{Error, Result};
pub use instance::{Instance, StopRule};
pub use lattice::{build_lattice, monroe_horizon, Augment, Clock, Lattice, PathState};
pub use measures::{check_convex_order, wasserstein1, DiscreteMeasure, PeacockVector};
pub use multistop::{extract_hedge, multi_stopping_value, snell_envelope, verify_superhedge, Coverage};
pub use payoffs::{validate_boundedness, PayoffSpec, Term, WeightedTerm};
pub use primal::{build_primal_lp, duality_gap_report, solve_lp, PrimalSolution};

/// Version string embedded in every report.
pub const SOLVER_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
