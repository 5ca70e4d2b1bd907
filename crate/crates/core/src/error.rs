use thiserror::Error;

use crate::primal::FarkasCertificate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("measure has no atom with positive weight")]
    EmptyMeasure,
    #[error("weights sum to {sum}, expected 1 within 1e-9")]
    WeightSumMismatch { sum: f64 },
    #[error("invalid atom ({position}, {weight})")]
    InvalidAtom { position: f64, weight: f64 },
    #[error("means differ: {lo} vs {hi}")]
    MeanMismatch { lo: f64, hi: f64 },
    #[error("function is not finite at x = {x}")]
    NonFiniteValue { x: f64 },
    #[error("marginal {} is not centered (mean {mean})", index + 1)]
    NotCentered { index: usize, mean: f64 },
    #[error("marginals {} and {} are not in convex order (violation at x = {witness})", index + 1, index + 2)]
    NotConvexOrdered { index: usize, witness: f64 },

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("state space has {states} states, above the budget of {budget}")]
    BudgetExceeded { states: usize, budget: usize },

    #[error("payoff expects {expected} stops, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("payoff is not bounded above: {0}")]
    UnboundedAbove(String),
    #[error("unsupported payoff: {0}")]
    UnsupportedPayoff(String),
    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),

    #[error("children of a lattice node share the same value")]
    DegenerateIncrement,
    #[error("dual potential: {0}")]
    InvalidPotential(String),

    #[error("atom {position} of marginal {phase} is not a lattice value")]
    UnrepresentableAtom { phase: usize, position: f64 },
    #[error("linear program is infeasible (phase-one residual {})", .0.residual)]
    Infeasible(Box<FarkasCertificate>),
    #[error("simplex stopped after {0} iterations")]
    IterationLimit(usize),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("singular basis")]
    SingularBasis,
    #[error("dual value is below the primal value by {gap}")]
    NegativeGap { gap: f64 },

    #[error("{unabsorbed} of the mass is not absorbed within the horizon")]
    HorizonTooShort { unabsorbed: f64 },
    #[error("atom at {position} carries weight {weight} > 0.05")]
    AtomTooLarge { position: f64, weight: f64 },

    #[error("payoff is not representable after time change: {0}")]
    NotRepresentable(String),
    #[error("a cap is required: {0}")]
    CapRequired(String),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
