//! One embedding problem end to end: primal LP, dual descent, gap and
//! superhedge certificate.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dualopt::{self, DualConfig, DualPotential, HistoryRow};
use crate::error::Result;
use crate::instance::{Instance, StopRule};
use crate::lattice::{Clock, Lattice};
use crate::lp::SimplexOptions;
use crate::measures::PeacockVector;
use crate::multistop::{self, Coverage, HedgeTable, MultiStopSolution, SuperhedgeReport};
use crate::payoffs::{validate_boundedness, PayoffSpec};
use crate::primal::{self, GapReport, PrimalSolution};

/// Lattices up to this many steps are checked exhaustively by default.
pub const EXHAUSTIVE_MAX_STEPS: usize = 14;
pub const DEFAULT_SAMPLED_TUPLES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSettings {
    pub stop_rule: StopRule,
    pub primal: bool,
    pub dual: bool,
    pub simplex: SimplexOptions,
    pub optimizer: DualConfig,
    /// Largest acceptable `(dual − primal) / max(1, |primal|)`.
    pub gap_tolerance: f64,
    pub verify_superhedge: bool,
    /// Defaults to exhaustive on small lattices, sampled otherwise.
    pub coverage: Option<Coverage>,
    pub seed: u64,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            stop_rule: StopRule::Support,
            primal: true,
            dual: true,
            simplex: SimplexOptions::default(),
            optimizer: DualConfig::default(),
            gap_tolerance: 1e-2,
            verify_superhedge: true,
            coverage: None,
            seed: 0,
        }
    }
}

impl SolveSettings {
    pub fn coverage_for(&self, lattice: &Lattice) -> Coverage {
        self.coverage.unwrap_or(if lattice.steps <= EXHAUSTIVE_MAX_STEPS {
            Coverage::Exhaustive {
                max_steps: lattice.steps,
            }
        } else {
            Coverage::Sampled {
                samples: DEFAULT_SAMPLED_TUPLES,
                seed: self.seed,
                max_steps: 4 * lattice.steps,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub arity: usize,
    pub steps: usize,
    pub dt: f64,
    pub h: f64,
    pub clock: Clock,
    pub stop_rule: StopRule,
    pub windows: Vec<(f64, f64)>,
    pub nodes: usize,
    /// Upper bound of the payoff on the lattice, where one is known.
    pub payoff_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSummary {
    pub best_value: f64,
    pub iterations: usize,
    pub last_objective: f64,
    /// Per marginal: `(strike, λ_k(strike))` of the best potential.
    pub lambda: Vec<Vec<(f64, f64)>>,
    /// Value of the inner stopping problem at the best potential.
    pub inner_value: f64,
}

/// Deterministic part of a solve; timings live outside.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub instance: InstanceSummary,
    pub primal: Option<PrimalSolution>,
    pub dual: Option<DualSummary>,
    pub gap: Option<GapReport>,
    pub superhedge: Option<SuperhedgeReport>,
}

impl SolveReport {
    /// The primal value when computed, else the dual bound.
    pub fn value(&self) -> Option<f64> {
        self.primal
            .as_ref()
            .map(|p| p.value)
            .or_else(|| self.dual.as_ref().map(|d| d.best_value))
    }
}

/// Everything a solve produced, for artifact writing.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub report: SolveReport,
    pub instance: Instance,
    pub history: Vec<HistoryRow>,
    pub best_lambda: Option<DualPotential>,
    pub inner: Option<MultiStopSolution>,
    pub hedge: Option<HedgeTable>,
    /// `(stage, seconds)`.
    pub timings: Vec<(String, f64)>,
}

pub fn summarize(inst: &Instance, rule: StopRule) -> InstanceSummary {
    let h = inst.h();
    InstanceSummary {
        arity: inst.arity(),
        steps: inst.lattice.steps,
        dt: inst.lattice.dt,
        h,
        clock: inst.lattice.clock,
        stop_rule: rule,
        windows: inst
            .phases
            .iter()
            .map(|g| (g.window.0 as f64 * h, g.window.1 as f64 * h))
            .collect(),
        nodes: inst.node_count(),
        payoff_bound: validate_boundedness(&inst.payoff, &inst.lattice).ok(),
    }
}

/// Solves the embedding problem of `payoff` with marginals `mu`.
pub fn solve_embedding(
    lattice: &Lattice,
    payoff: &PayoffSpec,
    mu: &PeacockVector,
    settings: &SolveSettings,
) -> Result<SolveOutcome> {
    let mut timings = Vec::new();
    let clock = Instant::now();
    let inst = Instance::for_marginals(lattice, payoff, mu, settings.stop_rule)?;
    timings.push(("instance".to_string(), clock.elapsed().as_secs_f64()));
    log::info!("instance: {} nodes over {} phases", inst.node_count(), inst.arity());

    let primal = if settings.primal {
        let t = Instant::now();
        let ps = primal::solve_primal(&inst, mu, &settings.simplex)?;
        timings.push(("primal".to_string(), t.elapsed().as_secs_f64()));
        Some(ps)
    } else {
        None
    };

    let mut history = Vec::new();
    let mut best_lambda = None;
    let mut inner = None;
    let mut hedge = None;
    let mut dual = None;
    let mut superhedge = None;
    if settings.dual {
        let t = Instant::now();
        let res = dualopt::minimize_dual(&inst, mu, &settings.optimizer)?;
        timings.push(("dual".to_string(), t.elapsed().as_secs_f64()));
        let sol = multistop::multi_stopping_value(&inst, &res.best_lambda)?;
        let table = multistop::extract_hedge(&inst, &sol.grids)?;
        if settings.verify_superhedge {
            let t = Instant::now();
            let cov = settings.coverage_for(&inst.lattice);
            superhedge = Some(multistop::verify_superhedge(
                &inst,
                &res.best_lambda,
                &sol.grids,
                &table,
                cov,
            )?);
            timings.push(("superhedge".to_string(), t.elapsed().as_secs_f64()));
        }
        dual = Some(DualSummary {
            best_value: res.best_value,
            iterations: res.history.len(),
            last_objective: res.history.last().map_or(res.best_value, |r| r.objective),
            lambda: res
                .best_lambda
                .strikes
                .iter()
                .zip(&res.best_lambda.values)
                .map(|(s, v)| s.iter().copied().zip(v.iter().copied()).collect())
                .collect(),
            inner_value: sol.value,
        });
        history = res.history;
        best_lambda = Some(res.best_lambda);
        inner = Some(sol);
        hedge = Some(table);
    }

    let gap = match (&primal, &dual) {
        (Some(p), Some(d)) => Some(primal::duality_gap_report(p, d.best_value, settings.gap_tolerance)?),
        _ => None,
    };
    Ok(SolveOutcome {
        report: SolveReport {
            instance: summarize(&inst, settings.stop_rule),
            primal,
            dual,
            gap,
            superhedge,
        },
        instance: inst,
        history,
        best_lambda,
        inner,
        hedge,
        timings,
    })
}
