//! Martingale-transport payoffs and their model-free price bounds.
//!
//! A continuous martingale `X` is a Brownian motion run at the clock
//! `⟨X⟩`. A payoff of `X` at maturities `t_1 < … < t_n` that depends only on
//! `X_{t_i}`, `⟨X⟩_{t_i}` and running extrema up to `t_i` is therefore a
//! reward of Brownian motion stopped at `θ_i = ⟨X⟩_{t_i}`, and prices
//! consistent with the Vanilla marginals `X_{t_i} ~ μ_i` are exactly values
//! of embedding problems. The upper bound is the embedding value of the
//! translated payoff, the lower bound minus that of its negation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::lattice::{Lattice, NONE};
use crate::measures::PeacockVector;
use crate::payoffs::{Coupling, PayoffSpec, PiecewiseLinear, Term, WeightedTerm};
use crate::solve::{solve_embedding, SolveOutcome, SolveReport, SolveSettings};

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// One leg of a transport payoff; `maturity` is the 1-based index into the
/// maturity list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Leg {
    /// `f(X_{t_i})`.
    Vanilla {
        maturity: usize,
        #[serde(default = "one")]
        weight: f64,
        function: PiecewiseLinear,
    },
    /// `min(max_{s ≤ t_i} X_s, cap)`.
    Lookback {
        maturity: usize,
        #[serde(default = "one")]
        weight: f64,
        #[serde(default)]
        cap: Option<f64>,
    },
    /// Pays `payout` if the barrier status up to `t_i` matches `knock_in`.
    Barrier {
        maturity: usize,
        #[serde(default = "one")]
        weight: f64,
        #[serde(default)]
        upper: Option<f64>,
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default = "yes")]
        knock_in: bool,
        #[serde(default = "one")]
        payout: f64,
    },
    /// `slope·⟨X⟩_{t_i} + shape(⟨X⟩_{t_i})`.
    Variance {
        maturity: usize,
        #[serde(default = "one")]
        weight: f64,
        #[serde(default)]
        slope: f64,
        #[serde(default)]
        shape: Option<PiecewiseLinear>,
    },
    /// Local time of `X` at 0 up to `t_i` in the clock of `⟨X⟩`, capped.
    LocalTime {
        maturity: usize,
        #[serde(default = "one")]
        weight: f64,
        #[serde(default)]
        cap: Option<f64>,
    },
    /// `min(|X_{t_2} − X_{t_1}|, cap)`; needs exactly two maturities and no
    /// other legs.
    ForwardStartStraddle {
        #[serde(default = "one")]
        weight: f64,
        cap: f64,
    },
    /// Average of `X` over calendar time up to `t_i`. Depends on the path
    /// shape between maturities and has no time-changed form.
    Asian {
        maturity: usize,
        #[serde(default = "one")]
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportPayoff {
    pub maturities: Vec<f64>,
    pub legs: Vec<Leg>,
}

impl TransportPayoff {
    fn check_maturity(&self, i: usize) -> Result<usize> {
        if i == 0 || i > self.maturities.len() {
            return Err(Error::InvalidPayoff(format!(
                "maturity index {i} outside 1..={}",
                self.maturities.len()
            )));
        }
        Ok(i)
    }
}

/// Rewrites `tp` as a reward of Brownian motion and its stop times:
/// `X_{t_i} → B_{θ_i}`, `⟨X⟩_{t_i} → θ_i`, extrema up to `t_i` → extrema up
/// to `θ_i`.
pub fn timechange_payoff(tp: &TransportPayoff) -> Result<PayoffSpec> {
    let n = tp.maturities.len();
    if n == 0 {
        return Err(Error::InvalidPayoff("no maturities".into()));
    }
    if tp.maturities[0] <= 0.0 || tp.maturities.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidPayoff(
            "maturities must be positive and increasing".into(),
        ));
    }
    if let Some(Leg::Asian { .. }) = tp.legs.iter().find(|l| matches!(l, Leg::Asian { .. })) {
        return Err(Error::NotRepresentable(
            "an Asian leg averages over calendar time, which the time change does not preserve".into(),
        ));
    }
    let straddles: Vec<&Leg> = tp
        .legs
        .iter()
        .filter(|l| matches!(l, Leg::ForwardStartStraddle { .. }))
        .collect();
    if let Some(Leg::ForwardStartStraddle { weight, cap }) = straddles.first() {
        if n != 2 || tp.legs.len() != 1 {
            return Err(Error::UnsupportedPayoff(
                "a forward-start straddle must be the only leg over exactly two maturities".into(),
            ));
        }
        let p = PayoffSpec::Coupled {
            coupling: Coupling::AbsSpread {
                cap: *cap,
                weight: *weight,
            },
        };
        p.validate()?;
        return Ok(p);
    }
    let mut terms = Vec::with_capacity(tp.legs.len());
    for leg in &tp.legs {
        let (maturity, weight, term) = match leg.clone() {
            Leg::Vanilla {
                maturity,
                weight,
                function,
            } => (maturity, weight, Term::Value { function }),
            Leg::Lookback { maturity, weight, cap } => (maturity, weight, Term::Lookback { cap }),
            Leg::Barrier {
                maturity,
                weight,
                upper,
                lower,
                knock_in,
                payout,
            } => (
                maturity,
                weight,
                Term::Barrier {
                    upper,
                    lower,
                    knock_in,
                    payout,
                },
            ),
            Leg::Variance {
                maturity,
                weight,
                slope,
                shape,
            } => (maturity, weight, Term::StopTime { slope, shape }),
            Leg::LocalTime { maturity, weight, cap } => (maturity, weight, Term::LocalTime { cap }),
            Leg::ForwardStartStraddle { .. } | Leg::Asian { .. } => unreachable!("handled above"),
        };
        terms.push(WeightedTerm {
            phase: tp.check_maturity(maturity)?,
            weight,
            term,
        });
    }
    PayoffSpec::separable(n, terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
}

/// One side of the price interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub side: Side,
    pub bound: f64,
    /// Some capped statistic sits at its cap with positive mass under the
    /// optimal embedding: the bound then depends on the cap.
    pub cap_binding: bool,
    /// Solve of the payoff (upper) or of its negation (lower).
    pub solve: SolveReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceBounds {
    pub upper: BoundReport,
    pub lower: BoundReport,
}

/// Price bound on one side. The upper side is the embedding solve of the
/// translated payoff verbatim.
pub fn price_bound(
    tp: &TransportPayoff,
    mu: &PeacockVector,
    lattice: &Lattice,
    side: Side,
    settings: &SolveSettings,
) -> Result<(BoundReport, SolveOutcome)> {
    let payoff = timechange_payoff(tp)?;
    let target = match side {
        Side::Upper => payoff,
        Side::Lower => payoff.negated(),
    };
    let outcome = match solve_embedding(lattice, &target, mu, settings) {
        Err(Error::Unbounded) => {
            return Err(Error::CapRequired(format!(
                "the {} bound is infinite without a cap",
                if side == Side::Upper { "upper" } else { "lower" }
            )))
        }
        other => other?,
    };
    let value = outcome
        .report
        .value()
        .ok_or_else(|| Error::ConfigInvalid("price bounds need the primal or the dual solve".into()))?;
    let bound = match side {
        Side::Upper => value,
        Side::Lower => -value,
    };
    let cap_binding = outcome
        .report
        .primal
        .as_ref()
        .is_some_and(|ps| cap_binding(&outcome.instance, &ps.stop_masses));
    Ok((
        BoundReport {
            side,
            bound,
            cap_binding,
            solve: outcome.report.clone(),
        },
        outcome,
    ))
}

pub fn price_bounds(
    tp: &TransportPayoff,
    mu: &PeacockVector,
    lattice: &Lattice,
    settings: &SolveSettings,
) -> Result<PriceBounds> {
    let (upper, _) = price_bound(tp, mu, lattice, Side::Upper, settings)?;
    let (lower, _) = price_bound(tp, mu, lattice, Side::Lower, settings)?;
    if lower.bound > upper.bound + 1e-9 {
        log::warn!("lower bound {} exceeds upper bound {}", lower.bound, upper.bound);
    }
    Ok(PriceBounds { upper, lower })
}

const MASS_TOL: f64 = 1e-12;

/// Whether the optimal stops put mass where a capped statistic reached its
/// cap.
pub fn cap_binding(inst: &Instance, stop_masses: &[Vec<f64>]) -> bool {
    let h = inst.h();
    match &inst.payoff {
        PayoffSpec::Separable { terms, .. } => terms.iter().any(|t| {
            let k = t.phase - 1;
            let g = &inst.phases[k];
            (0..g.len()).any(|i| {
                if stop_masses[k][i] <= MASS_TOL {
                    return false;
                }
                let s = inst.state(k, i as u32);
                match &t.term {
                    Term::Lookback { cap: Some(c) } => s.max_level as f64 * h >= c - 1e-12,
                    Term::LocalTime { cap: Some(c) } => s.zero_visits as f64 * h >= c - 1e-12,
                    _ => false,
                }
            })
        }),
        PayoffSpec::Coupled {
            coupling: Coupling::AbsSpread { cap, .. },
        } if inst.arity() == 2 => {
            let second = &inst.phases[1];
            let mut start = vec![NONE; second.len()];
            let mut first_of_lift = std::collections::HashMap::new();
            for i in 0..second.len() {
                let s = *first_of_lift.entry(second.lift[i]).or_insert(i as u32);
                start[i] = s;
            }
            (0..second.len()).any(|i| {
                stop_masses[1][i] > MASS_TOL
                    && (second.level[i] - second.level[start[i] as usize]).abs() as f64 * h >= cap - 1e-12
            })
        }
        PayoffSpec::Coupled { .. } => false,
    }
}
