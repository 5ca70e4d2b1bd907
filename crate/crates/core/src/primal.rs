//! The embedding problem as a linear program over randomized stopping rules.
//!
//! Variables are the masses `c_k(x)` that continue and `s_k(x)` that stop at
//! each node `x` of phase `k`. Conservation at a node reads
//!
//! ```text
//! c_k(x) + s_k(x) − ½ Σ_{parents p} c_k(p) − Σ_{y → x} s_{k−1}(y) = 1{k = 0, x = root}
//! ```
//!
//! and the marginal rows pin the stopped law: `Σ_{level(x) = a} s_k(x) = μ_k(a)`.
//! The objective collects stop rewards and running rewards. Flow-row duals
//! are value functions, marginal-row duals a potential `λ` on the atoms.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dualopt::{self, DualPotential};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::lp::{self, LinearProgram, SimplexOptions, NO_COLUMN};
use crate::measures::PeacockVector;
use crate::multistop::StoppingPolicy;

pub use crate::lp::FarkasCertificate;

/// Absolute slack allowed for `dual ≥ primal`.
pub const WEAK_DUALITY_TOL: f64 = 1e-9;

/// Flow LP together with the maps from lattice nodes to rows and columns.
#[derive(Debug, Clone)]
pub struct FlowLp {
    pub lp: LinearProgram,
    pub continue_var: Vec<Vec<usize>>,
    pub stop_var: Vec<Vec<usize>>,
    pub flow_row: Vec<Vec<usize>>,
    /// `(level, row)` per phase, one per atom of `μ_k`.
    pub marginal_rows: Vec<Vec<(i64, usize)>>,
    /// Starting basis: continue where possible, else stop.
    pub crash: Vec<usize>,
}

/// Builds the flow LP of `inst` with the marginal constraints of `mu`.
/// Phases with a free stop rule get no marginal rows.
pub fn build_primal_lp(inst: &Instance, mu: &PeacockVector) -> Result<FlowLp> {
    if mu.len() != inst.arity() {
        return Err(Error::ArityMismatch {
            expected: inst.arity(),
            got: mu.len(),
        });
    }
    let n = inst.arity();
    let mut lp = LinearProgram::default();
    let mut flow_row = Vec::with_capacity(n);
    for (k, g) in inst.phases.iter().enumerate() {
        let rows = (0..g.len())
            .map(|i| {
                if g.is_live(i as u32) {
                    let rhs = if k == 0 && i == inst.root as usize { 1.0 } else { 0.0 };
                    lp.add_row(format!("flow_{}_{i}", k + 1), rhs)
                } else {
                    NO_COLUMN
                }
            })
            .collect::<Vec<_>>();
        flow_row.push(rows);
    }
    let mut marginal_rows = Vec::with_capacity(n);
    for k in 0..n {
        let mut rows = Vec::new();
        if inst.stop_levels[k].is_some() {
            for a in mu.get(k).atoms() {
                let lvl = inst.lattice.level_of(a.position).ok_or(Error::UnrepresentableAtom {
                    phase: k,
                    position: a.position,
                })?;
                rows.push((lvl, lp.add_row(format!("marg_{}_{lvl}", k + 1), a.weight)));
            }
        }
        marginal_rows.push(rows);
    }

    let mut continue_var = Vec::with_capacity(n);
    let mut stop_var = Vec::with_capacity(n);
    let mut crash = vec![NO_COLUMN; lp.num_rows()];
    for (k, g) in inst.phases.iter().enumerate() {
        let mut cv = vec![NO_COLUMN; g.len()];
        let mut sv = vec![NO_COLUMN; g.len()];
        for i in 0..g.len() {
            let row = flow_row[k][i];
            if row == NO_COLUMN {
                continue;
            }
            if g.can_continue[i] {
                let [d, u] = g.children[i];
                let entries = vec![
                    (row, 1.0),
                    (flow_row[k][d as usize], -0.5),
                    (flow_row[k][u as usize], -0.5),
                ];
                cv[i] = lp.add_column(format!("c_{}_{i}", k + 1), g.run_reward, entries);
            }
            if g.can_stop[i] {
                let mut entries = vec![(row, 1.0)];
                if k + 1 < n {
                    entries.push((flow_row[k + 1][g.stop_target[i] as usize], -1.0));
                }
                if let Some(&(_, r)) = marginal_rows[k].iter().find(|&&(l, _)| l == g.level[i]) {
                    entries.push((r, 1.0));
                }
                entries.sort_by_key(|e| e.0);
                sv[i] = lp.add_column(format!("s_{}_{i}", k + 1), g.stop_reward[i], entries);
            }
            crash[row] = if cv[i] != NO_COLUMN { cv[i] } else { sv[i] };
        }
        continue_var.push(cv);
        stop_var.push(sv);
    }
    Ok(FlowLp {
        lp,
        continue_var,
        stop_var,
        flow_row,
        marginal_rows,
        crash,
    })
}

/// Optimal embedding on the lattice and its certificate data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrimalSolution {
    pub value: f64,
    /// Per phase: `(position, mass)` of the stopped law.
    pub stopped_laws: Vec<Vec<(f64, f64)>>,
    /// Largest deviation of a stopped law from its marginal, over atoms.
    pub marginal_error: f64,
    /// Largest absolute violation of the flow rows.
    pub flow_residual: f64,
    /// `Σ_k μ_k(λ_k) + V(root)` from the LP duals.
    pub dual_value: f64,
    /// Per phase: `(position, λ_k)` at the atoms of `μ_k`.
    pub marginal_duals: Vec<Vec<(f64, f64)>>,
    pub iterations: usize,
    pub phase_one_iterations: usize,
    #[serde(skip)]
    pub stop_masses: Vec<Vec<f64>>,
    #[serde(skip)]
    pub continue_masses: Vec<Vec<f64>>,
    #[serde(skip)]
    pub flow_duals: Vec<Vec<f64>>,
}

impl PrimalSolution {
    /// Randomized stopping rule realizing the optimal flow: at each visited
    /// node, stop with probability `s / (s + c)`.
    pub fn policy(&self, inst: &Instance) -> StoppingPolicy {
        let stop_probability = inst
            .phases
            .iter()
            .enumerate()
            .map(|(k, g)| {
                (0..g.len())
                    .map(|i| {
                        let (s, c) = (self.stop_masses[k][i], self.continue_masses[k][i]);
                        if s + c > 0.0 {
                            s / (s + c)
                        } else if g.can_continue[i] {
                            0.0
                        } else {
                            1.0
                        }
                    })
                    .collect()
            })
            .collect();
        StoppingPolicy { stop_probability }
    }

    /// The marginal duals as a potential on the atom grid.
    pub fn dual_potential(&self) -> Result<DualPotential> {
        let strikes = self
            .marginal_duals
            .iter()
            .map(|d| d.iter().map(|p| p.0).collect())
            .collect();
        let values = self
            .marginal_duals
            .iter()
            .map(|d| d.iter().map(|p| p.1).collect())
            .collect();
        DualPotential::new(strikes, values)
    }
}

/// Solves the flow LP; infeasibility comes back as [`Error::Infeasible`]
/// with a verified Farkas certificate.
pub fn solve_lp(inst: &Instance, flow: &FlowLp, opts: &SimplexOptions) -> Result<PrimalSolution> {
    let sol = lp::solve(&flow.lp, opts, Some(&flow.crash))?;
    let h = inst.h();
    let pick = |vars: &Vec<Vec<usize>>, x: &[f64]| -> Vec<Vec<f64>> {
        vars.iter()
            .map(|row| row.iter().map(|&j| if j == NO_COLUMN { 0.0 } else { x[j] }).collect())
            .collect()
    };
    let stop_masses = pick(&flow.stop_var, &sol.x);
    let continue_masses = pick(&flow.continue_var, &sol.x);
    let flow_duals = pick(&flow.flow_row, &sol.duals);

    let mut stopped_laws = Vec::with_capacity(inst.arity());
    let mut marginal_error = 0.0f64;
    for (k, g) in inst.phases.iter().enumerate() {
        let mut law: std::collections::BTreeMap<i64, f64> = Default::default();
        for i in 0..g.len() {
            if stop_masses[k][i] > 0.0 {
                *law.entry(g.level[i]).or_default() += stop_masses[k][i];
            }
        }
        for &(lvl, row) in &flow.marginal_rows[k] {
            let got = law.get(&lvl).copied().unwrap_or(0.0);
            marginal_error = marginal_error.max((got - flow.lp.rhs[row]).abs());
        }
        stopped_laws.push(law.into_iter().map(|(l, m)| (l as f64 * h, m)).collect());
    }
    let flow_residual = flow.lp.residual(&sol.x).into_iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let marginal_duals = flow
        .marginal_rows
        .iter()
        .map(|rows| rows.iter().map(|&(l, r)| (l as f64 * h, sol.duals[r])).collect())
        .collect();
    let dual_value = flow.lp.rhs.iter().zip(&sol.duals).map(|(b, y)| b * y).sum();
    log::info!(
        "primal LP: {} rows, {} columns, {} pivots, value {:.12}",
        flow.lp.num_rows(),
        flow.lp.num_columns(),
        sol.iterations,
        sol.objective
    );
    Ok(PrimalSolution {
        value: sol.objective,
        stopped_laws,
        marginal_error,
        flow_residual,
        dual_value,
        marginal_duals,
        iterations: sol.iterations,
        phase_one_iterations: sol.phase_one_iterations,
        stop_masses,
        continue_masses,
        flow_duals,
    })
}

/// Builds and solves in one step.
pub fn solve_primal(inst: &Instance, mu: &PeacockVector, opts: &SimplexOptions) -> Result<PrimalSolution> {
    let flow = build_primal_lp(inst, mu)?;
    solve_lp(inst, &flow, opts)
}

/// Evaluates the inner problem at the LP's marginal duals. By strong
/// duality this reproduces the primal value on support-restricted
/// instances.
pub fn lp_dual_objective(inst: &Instance, ps: &PrimalSolution, mu: &PeacockVector) -> Result<f64> {
    dualopt::dual_objective(inst, &ps.dual_potential()?, mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// `gap = dual − primal`; fails with [`Error::NegativeGap`] when weak
/// duality is violated, which indicates a solver bug.
pub fn duality_gap_report(ps: &PrimalSolution, dual_best: f64, tolerance: f64) -> Result<GapReport> {
    gap_report(ps.value, dual_best, tolerance)
}

pub fn gap_report(primal: f64, dual: f64, tolerance: f64) -> Result<GapReport> {
    let gap = dual - primal;
    if gap < -WEAK_DUALITY_TOL {
        return Err(Error::NegativeGap { gap });
    }
    let relative_gap = gap / primal.abs().max(1.0);
    Ok(GapReport {
        primal,
        dual,
        gap,
        relative_gap,
        tolerance,
        pass: relative_gap <= tolerance,
    })
}

/// Writes the stopped laws as CSV: `phase,position,mass`.
pub fn write_law_csv(ps: &PrimalSolution, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["phase", "position", "mass"])?;
    for (k, law) in ps.stopped_laws.iter().enumerate() {
        for &(x, m) in law {
            w.write_record([(k + 1).to_string(), x.to_string(), m.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::report::write_atomic(path.as_ref(), &bytes)
}

/// Writes the LP in CPLEX LP format.
pub fn export_lp(flow: &FlowLp, mut out: impl Write) -> Result<()> {
    lp::write_lp_format(&flow.lp, &mut out)?;
    Ok(())
}
