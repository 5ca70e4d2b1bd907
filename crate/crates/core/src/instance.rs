//! Compiled stopping problems: one transition graph per stop.
//!
//! Phase `k` of an [`Instance`] describes the walk between the `k`-th and the
//! `(k+1)`-th stop. Each phase is a graph over lattice states with masks for
//! where stopping and continuing are admissible, the reward paid when
//! stopping, and the state at which the next phase starts.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Clock, Lattice, PathState, StateSpace, NONE};
use crate::measures::PeacockVector;
use crate::payoffs::{PayoffSpec, COUPLED_MAX_STEPS};

/// Where stops are admissible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Only at atoms of the target marginal: the setting of the embedding
    /// problem, where any other stop would violate the marginal constraint.
    #[default]
    Support,
    /// Anywhere inside the phase window.
    Free,
}

#[derive(Debug, Clone)]
pub struct PhaseGraph {
    /// Underlying lattice state of each node.
    pub base: Vec<u32>,
    /// For lifted phases, index of the first-stop node the path came from.
    pub lift: Vec<u32>,
    pub level: Vec<i64>,
    pub children: Vec<[u32; 2]>,
    pub can_stop: Vec<bool>,
    pub can_continue: Vec<bool>,
    /// Node of the next phase entered on stopping; `NONE` in the last phase.
    pub stop_target: Vec<u32>,
    /// Reward paid on stopping, linear time terms excluded.
    pub stop_reward: Vec<f64>,
    /// Reward per continuation step.
    pub run_reward: f64,
    /// Acyclic part, in time order.
    pub layers: Vec<Vec<u32>>,
    /// Stationary part: blocks sorted by level, later blocks reachable only
    /// from earlier ones.
    pub blocks: Vec<Vec<u32>>,
    pub window: (i64, i64),
}

impl PhaseGraph {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn is_live(&self, node: u32) -> bool {
        let i = node as usize;
        self.can_stop[i] || self.can_continue[i]
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    /// Lattice with the augmentation actually used.
    pub lattice: Lattice,
    pub payoff: PayoffSpec,
    pub space: StateSpace,
    pub phases: Vec<PhaseGraph>,
    /// Admissible stop levels per phase; `None` means anywhere.
    pub stop_levels: Vec<Option<Vec<i64>>>,
    /// Root node of the first phase.
    pub root: u32,
}

impl Instance {
    /// Embedding problem for a marginal vector: phase `k` is confined to the
    /// convex hull of `μ_k`. Any uniformly integrable embedding stops by the
    /// exit from that hull, so the confinement is exact.
    pub fn for_marginals(
        lattice: &Lattice,
        payoff: &PayoffSpec,
        marginals: &PeacockVector,
        rule: StopRule,
    ) -> Result<Self> {
        if marginals.len() != payoff.arity() {
            return Err(Error::ArityMismatch {
                expected: payoff.arity(),
                got: marginals.len(),
            });
        }
        let mut windows = Vec::with_capacity(marginals.len());
        let mut stops = Vec::with_capacity(marginals.len());
        for (phase, m) in marginals.measures().iter().enumerate() {
            let mut levels = Vec::with_capacity(m.len());
            for a in m.atoms() {
                let lvl = lattice.level_of(a.position).ok_or(Error::UnrepresentableAtom {
                    phase,
                    position: a.position,
                })?;
                levels.push(lvl);
            }
            let lo = levels[0].min(0);
            let hi = levels[levels.len() - 1].max(0);
            windows.push((lo, hi));
            stops.push(match rule {
                StopRule::Support => Some(levels),
                StopRule::Free => None,
            });
        }
        Self::new(lattice, payoff, windows, stops)
    }

    /// Problem without marginal information: every phase uses `window`
    /// and may stop anywhere in it.
    pub fn with_window(lattice: &Lattice, payoff: &PayoffSpec, window: (i64, i64)) -> Result<Self> {
        let n = payoff.arity();
        Self::new(lattice, payoff, vec![window; n], vec![None; n])
    }

    /// The whole lattice up to its horizon, for the absorbing clock.
    pub fn unconfined(lattice: &Lattice, payoff: &PayoffSpec) -> Result<Self> {
        if lattice.clock != Clock::Absorbing {
            return Err(Error::InvalidLattice(
                "an unconfined problem needs the absorbing clock".into(),
            ));
        }
        let n = lattice.steps as i64;
        Self::with_window(lattice, payoff, (-n, n))
    }

    pub fn new(
        lattice: &Lattice,
        payoff: &PayoffSpec,
        windows: Vec<(i64, i64)>,
        stop_levels: Vec<Option<Vec<i64>>>,
    ) -> Result<Self> {
        payoff.validate()?;
        let n = payoff.arity();
        if windows.len() != n || stop_levels.len() != n {
            return Err(Error::ArityMismatch {
                expected: n,
                got: windows.len(),
            });
        }
        for &(lo, hi) in &windows {
            if lo > 0 || hi < 0 {
                return Err(Error::InvalidLattice(format!("window [{lo}, {hi}] must contain 0")));
            }
        }
        if !payoff.is_separable() {
            let too_long = match lattice.clock {
                Clock::Absorbing => lattice.steps > COUPLED_MAX_STEPS,
                Clock::Saturating => payoff.time_depth(lattice.dt) > COUPLED_MAX_STEPS,
            };
            if too_long {
                return Err(Error::UnsupportedPayoff(format!(
                    "coupled rewards are limited to {COUPLED_MAX_STEPS} time steps"
                )));
            }
        }

        let mut lattice = lattice.clone();
        let required = payoff.required_augment();
        lattice.augment = lattice.augment.union(required);
        let mut caps = payoff.aug_caps(lattice.h());
        if lattice.clock == Clock::Saturating && lattice.augment.local_time && caps.zero_visits.is_none() {
            if required.local_time {
                return Err(Error::InvalidPayoff(
                    "local-time rewards need a cap under the saturating clock".into(),
                ));
            }
            caps.zero_visits = Some(1);
        }
        let depth = payoff.time_depth(lattice.dt);
        let union = windows
            .iter()
            .fold((0i64, 0i64), |acc, w| (acc.0.min(w.0), acc.1.max(w.1)));
        let space = StateSpace::build(&lattice, union, depth, caps)?;

        let mut phases: Vec<PhaseGraph> = Vec::with_capacity(n);
        let run = payoff.run_rewards(lattice.dt);
        for k in 0..n {
            let graph = if k == 1 && !payoff.is_separable() {
                lifted_phase(
                    &lattice,
                    payoff,
                    &space,
                    &phases[0],
                    windows[k],
                    stop_levels[k].as_deref(),
                    run[k],
                )
            } else {
                plain_phase(
                    &lattice,
                    payoff,
                    &space,
                    k,
                    windows[k],
                    stop_levels[k].as_deref(),
                    run[k],
                )
            };
            phases.push(graph);
        }
        link_targets(&mut phases, &space, payoff.is_separable());
        prune(&mut phases);
        for g in &mut phases {
            order(g, &space);
        }
        let root = phases[0]
            .base
            .iter()
            .position(|&b| b == space.root())
            .expect("the root lies in every window") as u32;
        Ok(Self {
            lattice,
            payoff: payoff.clone(),
            space,
            phases,
            stop_levels,
            root,
        })
    }

    pub fn arity(&self) -> usize {
        self.phases.len()
    }

    pub fn h(&self) -> f64 {
        self.lattice.h()
    }

    /// Lattice statistics at a node; time is the (possibly saturated) index.
    pub fn state(&self, phase: usize, node: u32) -> PathState {
        self.space.state(self.phases[phase].base[node as usize])
    }

    pub fn node_count(&self) -> usize {
        self.phases.iter().map(PhaseGraph::len).sum()
    }

    pub fn root_is_live(&self) -> bool {
        self.phases[0].is_live(self.root)
    }
}

fn in_window(level: i64, w: (i64, i64)) -> bool {
    level >= w.0 && level <= w.1
}

fn stop_allowed(level: i64, stops: Option<&[i64]>) -> bool {
    stops.is_none_or(|s| s.binary_search(&level).is_ok())
}

pub(crate) fn empty_graph(window: (i64, i64), run_reward: f64) -> PhaseGraph {
    PhaseGraph {
        base: Vec::new(),
        lift: Vec::new(),
        level: Vec::new(),
        children: Vec::new(),
        can_stop: Vec::new(),
        can_continue: Vec::new(),
        stop_target: Vec::new(),
        stop_reward: Vec::new(),
        run_reward,
        layers: Vec::new(),
        blocks: Vec::new(),
        window,
    }
}

fn plain_phase(
    lattice: &Lattice,
    payoff: &PayoffSpec,
    space: &StateSpace,
    phase: usize,
    window: (i64, i64),
    stops: Option<&[i64]>,
    run_reward: f64,
) -> PhaseGraph {
    let mut g = empty_graph(window, run_reward);
    let mut node_of = vec![NONE; space.len()];
    for s in 0..space.len() as u32 {
        let lvl = space.level(s);
        if in_window(lvl, window) {
            node_of[s as usize] = g.base.len() as u32;
            g.base.push(s);
            g.lift.push(0);
            g.level.push(lvl);
        }
    }
    fill_nodes(
        &mut g,
        lattice,
        payoff,
        space,
        phase,
        stops,
        |_, s| node_of[s as usize],
        |_| None,
    );
    g
}

fn lifted_phase(
    lattice: &Lattice,
    payoff: &PayoffSpec,
    space: &StateSpace,
    first: &PhaseGraph,
    window: (i64, i64),
    stops: Option<&[i64]>,
    run_reward: f64,
) -> PhaseGraph {
    let mut g = empty_graph(window, run_reward);
    let mut index: HashMap<(u32, u32), u32> = HashMap::new();
    let mut lift_base: Vec<u32> = Vec::new();
    for (i, &s) in first.base.iter().enumerate() {
        if !first.can_stop[i] || !in_window(first.level[i], window) {
            continue;
        }
        let lift = lift_base.len() as u32;
        lift_base.push(s);
        let mut stack = vec![s];
        index.insert((lift, s), g.base.len() as u32);
        g.base.push(s);
        g.lift.push(lift);
        g.level.push(space.level(s));
        while let Some(u) = stack.pop() {
            let lvl = space.level(u);
            if lvl == window.0 || lvl == window.1 {
                continue;
            }
            for c in space.children[u as usize] {
                if c != NONE && in_window(space.level(c), window) && !index.contains_key(&(lift, c)) {
                    index.insert((lift, c), g.base.len() as u32);
                    g.base.push(c);
                    g.lift.push(lift);
                    g.level.push(space.level(c));
                    stack.push(c);
                }
            }
        }
    }
    fill_nodes(
        &mut g,
        lattice,
        payoff,
        space,
        1,
        stops,
        |lift, s| index.get(&(lift, s)).copied().unwrap_or(NONE),
        |lift| Some(space.state(lift_base[lift as usize])),
    );
    g
}

#[allow(clippy::too_many_arguments)]
fn fill_nodes(
    g: &mut PhaseGraph,
    lattice: &Lattice,
    payoff: &PayoffSpec,
    space: &StateSpace,
    phase: usize,
    stops: Option<&[i64]>,
    node_of: impl Fn(u32, u32) -> u32,
    first_stop: impl Fn(u32) -> Option<PathState>,
) {
    let len = g.base.len();
    g.children = vec![[NONE; 2]; len];
    g.can_stop = vec![false; len];
    g.can_continue = vec![false; len];
    g.stop_target = vec![NONE; len];
    g.stop_reward = vec![0.0; len];
    for i in 0..len {
        let s = g.base[i];
        let lift = g.lift[i];
        let lvl = g.level[i];
        let interior = lvl > g.window.0 && lvl < g.window.1;
        let [d, u] = space.children[s as usize];
        if interior && d != NONE && u != NONE {
            let kids = [node_of(lift, d), node_of(lift, u)];
            if kids[0] != NONE && kids[1] != NONE {
                g.children[i] = kids;
                g.can_continue[i] = true;
            }
        }
        g.can_stop[i] = stop_allowed(lvl, stops);
        let state = space.state(s);
        g.stop_reward[i] = match first_stop(lift) {
            Some(first) => payoff.coupled_reward(lattice, &first, &state),
            None => payoff.stop_reward(lattice, phase, &state),
        };
    }
}

/// Points each stop at the node where the next phase starts.
fn link_targets(phases: &mut [PhaseGraph], space: &StateSpace, separable: bool) {
    for k in 0..phases.len().saturating_sub(1) {
        let (head, tail) = phases.split_at_mut(k + 1);
        let cur = &mut head[k];
        let next = &tail[0];
        if separable {
            let mut node_of = vec![NONE; space.len()];
            for (i, &s) in next.base.iter().enumerate() {
                node_of[s as usize] = i as u32;
            }
            for i in 0..cur.len() {
                cur.stop_target[i] = node_of[cur.base[i] as usize];
            }
        } else {
            // Lifted phase: each lift starts at its own first-stop state.
            let mut start: HashMap<u32, u32> = HashMap::new();
            for i in 0..next.len() {
                start.entry(next.lift[i]).or_insert(i as u32);
            }
            let mut lift = 0u32;
            for i in 0..cur.len() {
                if cur.can_stop[i] && in_window(cur.level[i], next.window) {
                    cur.stop_target[i] = start[&lift];
                    lift += 1;
                }
            }
        }
        for i in 0..cur.len() {
            if cur.stop_target[i] == NONE {
                cur.can_stop[i] = false;
            }
        }
    }
}

/// Removes dead ends: a node that can neither stop nor continue into live
/// nodes is unusable, and so is every stop leading into one.
fn prune(phases: &mut [PhaseGraph]) {
    for k in (0..phases.len()).rev() {
        if k + 1 < phases.len() {
            let (head, tail) = phases.split_at_mut(k + 1);
            let next = &tail[0];
            let cur = &mut head[k];
            for i in 0..cur.len() {
                let t = cur.stop_target[i];
                if cur.can_stop[i] && (t == NONE || !next.is_live(t)) {
                    cur.can_stop[i] = false;
                }
            }
        }
        let g = &mut phases[k];
        loop {
            let mut changed = false;
            for i in (0..g.len()).rev() {
                if g.can_continue[i] {
                    let [d, u] = g.children[i];
                    if !g.is_live(d) || !g.is_live(u) {
                        g.can_continue[i] = false;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }
}

pub(crate) fn order(g: &mut PhaseGraph, space: &StateSpace) {
    let mut by_base: HashMap<u32, Vec<u32>> = HashMap::new();
    for i in 0..g.len() {
        if g.is_live(i as u32) {
            by_base.entry(g.base[i]).or_default().push(i as u32);
        }
    }
    for v in by_base.values_mut() {
        v.sort_by_key(|&i| g.lift[i as usize]);
    }
    let collect = |states: &mut dyn Iterator<Item = u32>| -> Vec<u32> {
        let mut out = Vec::new();
        for s in states {
            if let Some(nodes) = by_base.get(&s) {
                out.extend_from_slice(nodes);
            }
        }
        out
    };
    g.layers = space
        .layers
        .iter()
        .map(|r| collect(&mut r.clone().map(|s| s as u32)))
        .filter(|l| !l.is_empty())
        .collect();
    let mut blocks = Vec::new();
    for b in &space.blocks {
        let nodes = collect(&mut b.iter().copied());
        if nodes.is_empty() {
            continue;
        }
        // split by lift, keeping level order within each
        let mut per_lift: Vec<(u32, Vec<u32>)> = Vec::new();
        for n in nodes {
            let l = g.lift[n as usize];
            match per_lift.iter_mut().find(|(x, _)| *x == l) {
                Some((_, v)) => v.push(n),
                None => per_lift.push((l, vec![n])),
            }
        }
        per_lift.sort_by_key(|(l, _)| *l);
        blocks.extend(per_lift.into_iter().map(|(_, v)| v));
    }
    g.blocks = blocks;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Augment;
    use crate::measures::DiscreteMeasure;

    fn two_point() -> PeacockVector {
        PeacockVector::new(vec![DiscreteMeasure::new([(1.0, 0.5), (-1.0, 0.5)]).unwrap()]).unwrap()
    }

    #[test]
    fn two_point_hull_graph() {
        let l = Lattice::new(10, 0.25, Clock::Saturating, Augment::NONE).unwrap();
        let inst = Instance::for_marginals(&l, &PayoffSpec::stop_time(-1.0), &two_point(), StopRule::Support).unwrap();
        let g = &inst.phases[0];
        assert_eq!(g.len(), 5);
        assert!(g.layers.is_empty());
        assert_eq!(g.blocks.len(), 1);
        let stoppable: Vec<i64> = (0..5).filter(|&i| g.can_stop[i]).map(|i| g.level[i]).collect();
        assert_eq!(stoppable, vec![-2, 2]);
        assert!((g.run_reward + 0.25).abs() < 1e-15);
    }

    #[test]
    fn off_grid_atom_is_rejected() {
        let l = Lattice::new(10, 0.09, Clock::Saturating, Augment::NONE).unwrap();
        let err = Instance::for_marginals(&l, &PayoffSpec::stop_time(-1.0), &two_point(), StopRule::Support);
        assert!(matches!(err, Err(Error::UnrepresentableAtom { phase: 0, .. })));
    }

    #[test]
    fn lifted_phase_starts_at_first_stop() {
        let l = Lattice::new(4, 1.0, Clock::Absorbing, Augment::NONE).unwrap();
        let p = PayoffSpec::Coupled {
            coupling: crate::payoffs::Coupling::AbsSpread { cap: 10.0, weight: 1.0 },
        };
        let inst = Instance::unconfined(&l, &p).unwrap();
        let (a, b) = (&inst.phases[0], &inst.phases[1]);
        for i in 0..a.len() {
            if a.can_stop[i] {
                let t = a.stop_target[i] as usize;
                assert_eq!(b.base[t], a.base[i]);
                assert_eq!(b.stop_reward[t], 0.0);
            }
        }
        assert!(b.stop_reward.iter().any(|&r| r > 0.0));
    }

    #[test]
    fn reversed_marginals_leave_dead_stops() {
        let wide = DiscreteMeasure::new([(1.0, 0.5), (-1.0, 0.5)]).unwrap();
        let tight = DiscreteMeasure::new([(0.5, 0.5), (-0.5, 0.5)]).unwrap();
        let p = PeacockVector::unchecked(vec![wide, tight]).unwrap();
        let l = Lattice::new(10, 0.25, Clock::Saturating, Augment::NONE).unwrap();
        let inst = Instance::for_marginals(&l, &PayoffSpec::zero(2), &p, StopRule::Support).unwrap();
        // stopping the first phase at ±1 leaves the second window
        let g = &inst.phases[0];
        assert!((0..g.len()).all(|i| !g.can_stop[i]));
        assert!(!inst.root_is_live());
    }
}
