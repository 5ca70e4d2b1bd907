//! Optimal multiple stopping by backward induction and the superhedge it
//! certifies.
//!
//! For a potential `λ` the inner problem `sup_τ E[Φ(B, τ) − Σ_k λ_k(B_{τ_k})]`
//! is solved phase by phase from the last stop backwards: `v_{n+1} = 0` and
//! `v_k` is the Snell envelope, in the phase-`k` dynamics, of the reward for
//! stopping now, `G_k = Φ_k − λ_k + v_{k+1}`. Acyclic time layers are a
//! single backward sweep. The stationary part of a saturating lattice is
//! solved block by block with policy iteration, each policy evaluation
//! being a tridiagonal solve.
//!
//! The grids `v_k` are supermartingales that dominate the stopping reward;
//! their martingale part gives the hedge ratio `H = Δv / ΔB`, and
//! `v_1(root) + Σ λ_k(B_{θ_k}) + Σ H ΔB ≥ Φ` holds along every admissible
//! path and stop tuple.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dualopt::DualPotential;
use crate::error::{Error, Result};
use crate::instance::{order, Instance, PhaseGraph};
use crate::lattice::{Lattice, PathState, StateSpace, NONE};

/// Relative slack required before continuing is preferred to stopping.
const IMPROVE_TOL: f64 = 1e-12;

/// `v_k` per phase and node, plus the stop-now reward `G_k`.
#[derive(Debug, Clone)]
pub struct ValueGrids {
    pub values: Vec<Vec<f64>>,
    pub stop_values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "p", rename_all = "snake_case")]
pub enum Action {
    Stop,
    Continue,
    Randomize(f64),
}

/// Probability of stopping at each node given that the path is there.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingPolicy {
    pub stop_probability: Vec<Vec<f64>>,
}

impl StoppingPolicy {
    pub fn action(&self, phase: usize, node: u32) -> Action {
        let p = self.stop_probability[phase][node as usize];
        if p >= 1.0 {
            Action::Stop
        } else if p <= 0.0 {
            Action::Continue
        } else {
            Action::Randomize(p)
        }
    }

    /// Stop at the root in every phase.
    pub fn stop_immediately(inst: &Instance) -> Self {
        Self {
            stop_probability: inst.phases.iter().map(|g| vec![1.0; g.len()]).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiStopSolution {
    pub value: f64,
    pub grids: ValueGrids,
    pub policy: StoppingPolicy,
}

/// Hedge ratio per phase and continuing node; `NaN` where the path cannot
/// continue.
#[derive(Debug, Clone)]
pub struct HedgeTable {
    pub ratios: Vec<Vec<f64>>,
}

/// `λ_k` at every node level of every phase.
pub(crate) fn node_penalties(inst: &Instance, lam: &DualPotential) -> Vec<Vec<f64>> {
    let h = inst.h();
    inst.phases
        .iter()
        .enumerate()
        .map(|(k, g)| g.level.iter().map(|&l| lam.eval(k, l as f64 * h)).collect())
        .collect()
}

/// Solves one phase given its stop-now rewards. Returns values and the
/// deterministic stop decision per node.
fn solve_phase(g: &PhaseGraph, stop_value: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let len = g.len();
    let mut v = vec![f64::NEG_INFINITY; len];
    let mut stop = vec![false; len];
    let r = g.run_reward;
    for block in g.blocks.iter().rev() {
        solve_block(g, block, stop_value, &mut v, &mut stop);
    }
    for layer in g.layers.iter().rev() {
        for &n in layer {
            let i = n as usize;
            let gi = if g.can_stop[i] {
                stop_value[i]
            } else {
                f64::NEG_INFINITY
            };
            if g.can_continue[i] {
                let [d, u] = g.children[i];
                let cont = r + 0.5 * (v[d as usize] + v[u as usize]);
                if g.can_stop[i] && gi >= cont {
                    v[i] = gi;
                    stop[i] = true;
                } else {
                    v[i] = cont;
                }
            } else {
                v[i] = gi;
                stop[i] = true;
            }
        }
    }
    (v, stop)
}

/// In-block neighbours of position `p`: the down child if it sits at `p-1`,
/// the up child if it sits at `p+1`.
fn block_links(g: &PhaseGraph, block: &[u32], p: usize) -> (bool, bool) {
    let i = block[p] as usize;
    if !g.can_continue[i] {
        return (false, false);
    }
    let [d, u] = g.children[i];
    let left = p > 0 && block[p - 1] == d;
    let right = p + 1 < block.len() && block[p + 1] == u;
    (left, right)
}

fn solve_block(g: &PhaseGraph, block: &[u32], stop_value: &[f64], v: &mut [f64], stop: &mut [bool]) {
    let m = block.len();
    let r = g.run_reward;
    let links: Vec<(bool, bool)> = (0..m).map(|p| block_links(g, block, p)).collect();
    let mut policy: Vec<bool> = block.iter().map(|&n| g.can_stop[n as usize]).collect();
    let mut sub = vec![0.0; m];
    let mut sup = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut x = vec![0.0; m];
    let max_rounds = 4 * m + 10;
    for _ in 0..max_rounds {
        for p in 0..m {
            let i = block[p] as usize;
            sub[p] = 0.0;
            sup[p] = 0.0;
            if policy[p] {
                rhs[p] = stop_value[i];
                continue;
            }
            let [d, u] = g.children[i];
            let (left, right) = links[p];
            let mut b = r;
            if left {
                sub[p] = -0.5;
            } else {
                b += 0.5 * v[d as usize];
            }
            if right {
                sup[p] = -0.5;
            } else {
                b += 0.5 * v[u as usize];
            }
            rhs[p] = b;
        }
        thomas(&sub, &sup, &rhs, &mut x);
        let mut changed = false;
        for p in 0..m {
            let i = block[p] as usize;
            if !g.can_continue[i] || !g.can_stop[i] {
                continue;
            }
            let [d, u] = g.children[i];
            let (left, right) = links[p];
            let vd = if left { x[p - 1] } else { v[d as usize] };
            let vu = if right { x[p + 1] } else { v[u as usize] };
            let cont = r + 0.5 * (vd + vu);
            let gi = stop_value[i];
            let want_stop = !(cont > gi + IMPROVE_TOL * (1.0 + gi.abs()));
            if want_stop != policy[p] {
                // stopping is only reinstated when it strictly beats continuing
                if want_stop && cont > gi {
                    continue;
                }
                policy[p] = want_stop;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for p in 0..m {
        let i = block[p] as usize;
        v[i] = x[p];
        stop[i] = policy[p];
    }
}

/// Solves `sub[p] x[p-1] + x[p] + sup[p] x[p+1] = rhs[p]`.
fn thomas(sub: &[f64], sup: &[f64], rhs: &[f64], x: &mut [f64]) {
    let m = rhs.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut denom = 1.0;
    for p in 0..m {
        if p > 0 {
            denom = 1.0 - sub[p] * c[p - 1];
            d[p] = (rhs[p] - sub[p] * d[p - 1]) / denom;
        } else {
            d[p] = rhs[p] / denom;
        }
        c[p] = sup[p] / denom;
    }
    for p in (0..m).rev() {
        x[p] = if p + 1 < m { d[p] - c[p] * x[p + 1] } else { d[p] };
    }
}

/// Solves the inner multiple-stopping problem for potential `lam`.
pub fn multi_stopping_value(inst: &Instance, lam: &DualPotential) -> Result<MultiStopSolution> {
    if lam.arity() != inst.arity() {
        return Err(Error::ArityMismatch {
            expected: inst.arity(),
            got: lam.arity(),
        });
    }
    if !inst.root_is_live() {
        return Err(Error::InvalidLattice(
            "no admissible stopping rule from the root".into(),
        ));
    }
    let pen = node_penalties(inst, lam);
    let n = inst.arity();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut stop_values: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut stop_prob: Vec<Vec<f64>> = vec![Vec::new(); n];
    for k in (0..n).rev() {
        let g = &inst.phases[k];
        let gk: Vec<f64> = (0..g.len())
            .map(|i| {
                if !g.can_stop[i] {
                    return f64::NEG_INFINITY;
                }
                let next = if k + 1 < n {
                    values[k + 1][g.stop_target[i] as usize]
                } else {
                    0.0
                };
                g.stop_reward[i] - pen[k][i] + next
            })
            .collect();
        let (v, stop) = solve_phase(g, &gk);
        values[k] = v;
        stop_values[k] = gk;
        stop_prob[k] = stop.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    }
    Ok(MultiStopSolution {
        value: values[0][inst.root as usize],
        grids: ValueGrids { values, stop_values },
        policy: StoppingPolicy {
            stop_probability: stop_prob,
        },
    })
}

/// Snell envelope of `obstacle` on the whole lattice up to its horizon,
/// where stopping is forced.
#[derive(Debug, Clone)]
pub struct SnellEnvelope {
    pub space: StateSpace,
    pub values: Vec<f64>,
    pub stop: Vec<bool>,
}

impl SnellEnvelope {
    pub fn root_value(&self) -> f64 {
        self.values[self.space.root() as usize]
    }
}

pub fn snell_envelope(lattice: &Lattice, obstacle: impl Fn(&PathState) -> f64) -> Result<SnellEnvelope> {
    let space = lattice.full_space()?;
    let len = space.len();
    let n = lattice.steps as i64;
    let mut g = crate::instance::empty_graph((-n, n), 0.0);
    g.base = (0..len as u32).collect();
    g.lift = vec![0; len];
    g.level = (0..len as u32).map(|s| space.level(s)).collect();
    g.children = space.children.clone();
    g.can_stop = vec![true; len];
    g.can_continue = space.children.iter().map(|c| c[0] != NONE).collect();
    g.stop_target = vec![NONE; len];
    g.stop_reward = (0..len as u32).map(|s| obstacle(&space.state(s))).collect();
    order(&mut g, &space);
    if let Some(i) = g.stop_reward.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            x: lattice.value(space.level(i as u32)),
        });
    }
    let (values, stop) = solve_phase(&g, &g.stop_reward);
    Ok(SnellEnvelope { space, values, stop })
}

/// Stopped and occupation masses per phase and node under a policy.
#[derive(Debug, Clone)]
pub struct FlowMasses {
    pub stopped: Vec<Vec<f64>>,
    pub visits: Vec<Vec<f64>>,
}

/// Propagates the unit root mass forward under `policy`.
pub fn forward_masses(inst: &Instance, policy: &StoppingPolicy) -> FlowMasses {
    let n = inst.arity();
    let mut stopped: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut visits: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut inflow = vec![0.0; inst.phases[0].len()];
    inflow[inst.root as usize] = 1.0;
    for k in 0..n {
        let g = &inst.phases[k];
        let pi: Vec<f64> = (0..g.len())
            .map(|i| {
                if !g.can_continue[i] {
                    1.0
                } else if !g.can_stop[i] {
                    0.0
                } else {
                    policy.stop_probability[k][i].clamp(0.0, 1.0)
                }
            })
            .collect();
        let mut m = inflow;
        for layer in &g.layers {
            for &node in layer {
                let i = node as usize;
                let out = (1.0 - pi[i]) * m[i];
                if out != 0.0 {
                    let [d, u] = g.children[i];
                    m[d as usize] += 0.5 * out;
                    m[u as usize] += 0.5 * out;
                }
            }
        }
        for block in &g.blocks {
            block_forward(g, block, &pi, &mut m);
        }
        let s: Vec<f64> = (0..g.len()).map(|i| pi[i] * m[i]).collect();
        inflow = if k + 1 < n {
            let mut next = vec![0.0; inst.phases[k + 1].len()];
            for i in 0..g.len() {
                if s[i] != 0.0 {
                    next[g.stop_target[i] as usize] += s[i];
                }
            }
            next
        } else {
            Vec::new()
        };
        stopped.push(s);
        visits.push(m);
    }
    FlowMasses { stopped, visits }
}

fn block_forward(g: &PhaseGraph, block: &[u32], pi: &[f64], m: &mut [f64]) {
    let len = block.len();
    if block.iter().all(|&n| m[n as usize] == 0.0) {
        return;
    }
    // m_p - ½(1-π_{p-1}) m_{p-1} [up edge p-1 → p] - ½(1-π_{p+1}) m_{p+1} [down edge] = inflow_p
    let mut sub = vec![0.0; len];
    let mut sup = vec![0.0; len];
    let rhs: Vec<f64> = block.iter().map(|&n| m[n as usize]).collect();
    for p in 0..len {
        let (left, right) = block_links(g, block, p);
        let i = block[p] as usize;
        let w = 0.5 * (1.0 - pi[i]);
        if left {
            sup[p - 1] = -w;
        }
        if right {
            sub[p + 1] = -w;
        }
    }
    let mut x = vec![0.0; len];
    thomas(&sub, &sup, &rhs, &mut x);
    for p in 0..len {
        let i = block[p] as usize;
        m[i] = x[p];
    }
    for p in 0..len {
        let i = block[p] as usize;
        let out = (1.0 - pi[i]) * x[p];
        if out == 0.0 {
            continue;
        }
        let (left, right) = block_links(g, block, p);
        let [d, u] = g.children[i];
        if !left {
            m[d as usize] += 0.5 * out;
        }
        if !right {
            m[u as usize] += 0.5 * out;
        }
    }
}

/// Stopped law of each phase, aggregated by level: `(level, mass)` sorted.
pub fn stopped_laws(inst: &Instance, masses: &FlowMasses) -> Vec<Vec<(i64, f64)>> {
    inst.phases
        .iter()
        .zip(&masses.stopped)
        .map(|(g, s)| {
            let mut by_level: std::collections::BTreeMap<i64, f64> = Default::default();
            for i in 0..g.len() {
                if s[i] != 0.0 {
                    *by_level.entry(g.level[i]).or_default() += s[i];
                }
            }
            by_level.into_iter().collect()
        })
        .collect()
}

/// `H = (v(up) − v(down)) / (ΔB up − ΔB down)` at every continuing node.
pub fn extract_hedge(inst: &Instance, grids: &ValueGrids) -> Result<HedgeTable> {
    let h = inst.h();
    let mut ratios = Vec::with_capacity(inst.arity());
    for (k, g) in inst.phases.iter().enumerate() {
        let v = &grids.values[k];
        let mut row = vec![f64::NAN; g.len()];
        for i in 0..g.len() {
            if !g.can_continue[i] {
                continue;
            }
            let [d, u] = g.children[i];
            let spread = inst.lattice.value(g.level[u as usize]) - inst.lattice.value(g.level[d as usize]);
            if spread == 0.0 {
                return Err(Error::DegenerateIncrement);
            }
            debug_assert!((spread - 2.0 * h).abs() < 1e-12);
            row[i] = (v[u as usize] - v[d as usize]) / spread;
        }
        ratios.push(row);
    }
    Ok(HedgeTable { ratios })
}

/// How [`verify_superhedge`] covers the path space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Coverage {
    /// Every path of at most `max_steps` steps with every admissible stop
    /// tuple completed within it.
    Exhaustive { max_steps: usize },
    /// Random paths with random admissible stops.
    Sampled {
        samples: usize,
        seed: u64,
        max_steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    /// Up (`true`) / down moves of the path.
    pub moves: Vec<bool>,
    /// Step index of each stop.
    pub stops: Vec<usize>,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperhedgeReport {
    /// Initial capital `v_1(root) + Σ_k μ_k(λ_k)` is not part of the check;
    /// this is the pathwise cost `v_1(root)`.
    pub root_value: f64,
    /// `max (Φ − v_1(root) − Σ λ_k − Σ H ΔB)` over the checked tuples.
    pub max_violation: f64,
    pub tuples: u64,
    pub worst: Option<WorstCase>,
    pub coverage: Coverage,
}

/// The superhedge `(v_1(root), λ, H)` checked pathwise against the payoff.
///
/// The payoff is recomputed from explicitly tracked path statistics, not
/// from the compiled rewards, so this also checks the compilation.
pub fn verify_superhedge(
    inst: &Instance,
    lam: &DualPotential,
    grids: &ValueGrids,
    hedge: &HedgeTable,
    coverage: Coverage,
) -> Result<SuperhedgeReport> {
    let pen = node_penalties(inst, lam);
    let mut walker = Walker {
        inst,
        pen: &pen,
        hedge,
        root_value: grids.values[0][inst.root as usize],
        moves: Vec::new(),
        stops: Vec::new(),
        states: Vec::new(),
        best: None,
        max_violation: f64::NEG_INFINITY,
        tuples: 0,
    };
    match coverage {
        Coverage::Exhaustive { max_steps } => {
            walker.dfs(0, inst.root, PathState::ROOT, 0.0, max_steps)?;
        }
        Coverage::Sampled {
            samples,
            seed,
            max_steps,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..samples {
                walker.sample(&mut rng, max_steps)?;
            }
        }
    }
    Ok(SuperhedgeReport {
        root_value: walker.root_value,
        max_violation: walker.max_violation,
        tuples: walker.tuples,
        worst: walker.best,
        coverage,
    })
}

struct Walker<'a> {
    inst: &'a Instance,
    pen: &'a [Vec<f64>],
    hedge: &'a HedgeTable,
    root_value: f64,
    moves: Vec<bool>,
    stops: Vec<usize>,
    states: Vec<PathState>,
    best: Option<WorstCase>,
    max_violation: f64,
    tuples: u64,
}

impl Walker<'_> {
    fn finish(&mut self, credit: f64) -> Result<()> {
        let phi = self.inst.payoff.evaluate(&self.inst.lattice, &self.states)?;
        let violation = phi - (self.root_value + credit);
        self.tuples += 1;
        if violation > self.max_violation {
            self.max_violation = violation;
            self.best = Some(WorstCase {
                moves: self.moves.clone(),
                stops: self.stops.clone(),
                violation,
            });
        }
        Ok(())
    }

    /// `credit` accumulates `Σ λ_k(stops so far) + Σ H ΔB`.
    fn dfs(&mut self, phase: usize, node: u32, state: PathState, credit: f64, budget: usize) -> Result<()> {
        let g = &self.inst.phases[phase];
        let i = node as usize;
        if g.can_stop[i] {
            self.stops.push(self.moves.len());
            self.states.push(state);
            let c = credit + self.pen[phase][i];
            if phase + 1 == self.inst.arity() {
                self.finish(c)?;
            } else {
                self.dfs(phase + 1, g.stop_target[i], state, c, budget)?;
            }
            self.states.pop();
            self.stops.pop();
        }
        if g.can_continue[i] && self.moves.len() < budget {
            let h = self.inst.h();
            let ratio = self.hedge.ratios[phase][i];
            for up in [false, true] {
                let child = g.children[i][usize::from(up)];
                let gain = ratio * if up { h } else { -h };
                self.moves.push(up);
                self.dfs(phase, child, state.step(up), credit + gain, budget)?;
                self.moves.pop();
            }
        }
        Ok(())
    }

    fn sample(&mut self, rng: &mut ChaCha8Rng, max_steps: usize) -> Result<()> {
        self.moves.clear();
        self.stops.clear();
        self.states.clear();
        let p_stop: f64 = rng.gen_range(0.02..0.6);
        let h = self.inst.h();
        let mut phase = 0;
        let mut node = self.inst.root;
        let mut state = PathState::ROOT;
        let mut credit = 0.0;
        loop {
            let g = &self.inst.phases[phase];
            let i = node as usize;
            let stop = g.can_stop[i] && (!g.can_continue[i] || rng.gen_bool(p_stop));
            if stop {
                self.stops.push(self.moves.len());
                self.states.push(state);
                credit += self.pen[phase][i];
                if phase + 1 == self.inst.arity() {
                    return self.finish(credit);
                }
                node = g.stop_target[i];
                phase += 1;
                continue;
            }
            if self.moves.len() >= max_steps {
                return Ok(());
            }
            let up = rng.gen_bool(0.5);
            credit += self.hedge.ratios[phase][i] * if up { h } else { -h };
            self.moves.push(up);
            state = state.step(up);
            node = g.children[i][usize::from(up)];
        }
    }
}

/// Writes `v_k`, the stop-now reward and the action per node as CSV.
pub fn write_grids_csv(inst: &Instance, sol: &MultiStopSolution, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    writeln!(
        out,
        "phase,node,lift,time,level,max_level,min_level,zero_visits,value,stop_value,stop_probability"
    )?;
    for (k, g) in inst.phases.iter().enumerate() {
        for i in 0..g.len() {
            if !g.is_live(i as u32) {
                continue;
            }
            let s = inst.state(k, i as u32);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:e},{:e},{}",
                k + 1,
                i,
                g.lift[i],
                s.time,
                s.level,
                s.max_level,
                s.min_level,
                s.zero_visits,
                sol.grids.values[k][i],
                sol.grids.stop_values[k][i],
                sol.policy.stop_probability[k][i]
            )?;
        }
    }
    crate::report::write_atomic(path.as_ref(), &out)
}

pub fn write_hedge_csv(inst: &Instance, hedge: &HedgeTable, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "phase,node,lift,time,level,max_level,min_level,zero_visits,hedge")?;
    for (k, g) in inst.phases.iter().enumerate() {
        for i in 0..g.len() {
            let r = hedge.ratios[k][i];
            if r.is_nan() {
                continue;
            }
            let s = inst.state(k, i as u32);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:e}",
                k + 1,
                i,
                g.lift[i],
                s.time,
                s.level,
                s.max_level,
                s.min_level,
                s.zero_visits,
                r
            )?;
        }
    }
    crate::report::write_atomic(path.as_ref(), &out)
}
