//! Recombining random-walk lattice with optional path statistics.
//!
//! The walk moves `±√dt` per step with probability ½ each. States optionally
//! carry the running maximum, the running minimum and the number of visits
//! to level zero. Two clocks are supported:
//!
//! * [`Clock::Absorbing`]: time is tracked exactly up to the horizon `N`,
//!   where every remaining phase must stop.
//! * [`Clock::Saturating`]: time is tracked up to a payoff-dependent depth
//!   `T` and then stops advancing, so the layer at `T` is stationary. The walk
//!   is instead confined to a level window whose endpoints force a stop. This
//!   is the natural setting for embeddings, whose stopping times are
//!   unbounded but exit any interval containing the target support.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

/// Marker for a missing child.
pub const NONE: u32 = u32::MAX;

/// Default cap on the number of enumerated states.
pub const DEFAULT_BUDGET: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    Absorbing,
    #[default]
    Saturating,
}

/// Which path statistics a state carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augment {
    pub max: bool,
    pub min: bool,
    pub local_time: bool,
}

impl Augment {
    pub const NONE: Augment = Augment {
        max: false,
        min: false,
        local_time: false,
    };

    pub fn union(self, other: Augment) -> Augment {
        Augment {
            max: self.max || other.max,
            min: self.min || other.min,
            local_time: self.local_time || other.local_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub steps: usize,
    pub dt: f64,
    pub clock: Clock,
    pub augment: Augment,
    pub budget: usize,
}

pub fn build_lattice(steps: usize, dt: f64, augment: Augment) -> Result<Lattice> {
    Lattice::new(steps, dt, Clock::Absorbing, augment)
}

impl Lattice {
    pub fn new(steps: usize, dt: f64, clock: Clock, augment: Augment) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidLattice("steps must be at least 1".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidLattice(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            steps,
            dt,
            clock,
            augment,
            budget: DEFAULT_BUDGET,
        })
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Level spacing `√dt`.
    pub fn h(&self) -> f64 {
        self.dt.sqrt()
    }

    pub fn value(&self, level: i64) -> f64 {
        level as f64 * self.h()
    }

    /// Level of `x` if it is a lattice value, `None` otherwise.
    pub fn level_of(&self, x: f64) -> Option<i64> {
        let r = x / self.h();
        let j = r.round();
        ((r - j).abs() <= 1e-9 * (1.0 + r.abs())).then_some(j as i64)
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Whole reachable lattice up to the horizon, time tracked exactly and
    /// every path stopped at the horizon.
    pub fn full_space(&self) -> Result<StateSpace> {
        let n = self.steps as i64;
        let exact = self.clone().with_clock(Clock::Absorbing);
        StateSpace::build(&exact, (-n, n), self.steps, AugCaps::default())
    }
}

/// Snapshot of the walk at a stop.
///
/// Statistics that are not tracked are reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathState {
    pub time: usize,
    pub level: i64,
    pub max_level: i64,
    pub min_level: i64,
    pub zero_visits: u32,
}

impl PathState {
    pub const ROOT: PathState = PathState {
        time: 0,
        level: 0,
        max_level: 0,
        min_level: 0,
        zero_visits: 1,
    };

    /// Exact successor with all statistics, no saturation.
    pub fn step(&self, up: bool) -> PathState {
        let level = self.level + if up { 1 } else { -1 };
        PathState {
            time: self.time + 1,
            level,
            max_level: self.max_level.max(level),
            min_level: self.min_level.min(level),
            zero_visits: self.zero_visits + u32::from(level == 0),
        }
    }
}

/// Saturation points for the statistics.
///
/// A payoff that is constant in the running maximum beyond some level only
/// needs the maximum up to that level; saturating there is exact and keeps
/// the state space small.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugCaps {
    pub max_level: Option<i64>,
    pub min_level: Option<i64>,
    pub zero_visits: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Key {
    t: u32,
    level: i32,
    max: i32,
    min: i32,
    visits: u32,
}

/// Enumerated states of the walk inside a level window.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub clock: Clock,
    pub augment: Augment,
    pub window: (i64, i64),
    /// Last tracked time index: the horizon for `Absorbing`, the stationary
    /// layer for `Saturating`.
    pub depth: usize,
    keys: Vec<Key>,
    /// `[down, up]` successors, `NONE` at window endpoints and the horizon.
    pub children: Vec<[u32; 2]>,
    /// Acyclic time layers. Under `Absorbing` this covers every state.
    pub layers: Vec<Range<usize>>,
    /// Stationary states (time index `depth`) under `Saturating`.
    pub stationary: Range<usize>,
    /// Stationary states grouped by statistics, each sorted by level. Moves
    /// inside a block change the level by one; moves between blocks only go
    /// to later blocks.
    pub blocks: Vec<Vec<u32>>,
    root: u32,
}

impl StateSpace {
    pub fn build(lattice: &Lattice, window: (i64, i64), depth: usize, caps: AugCaps) -> Result<Self> {
        let (lo, hi) = window;
        if lo > 0 || hi < 0 {
            return Err(Error::InvalidLattice(format!("window [{lo}, {hi}] must contain 0")));
        }
        let augment = lattice.augment;
        let clock = lattice.clock;
        let depth = match clock {
            Clock::Absorbing => lattice.steps,
            Clock::Saturating => depth,
        };
        let space = Builder {
            augment,
            caps,
            clock,
            depth: depth as u32,
            window,
            budget: lattice.budget,
        };
        space.run()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn root(&self) -> u32 {
        self.root
    }

    pub fn state(&self, idx: u32) -> PathState {
        let k = self.keys[idx as usize];
        PathState {
            time: k.t as usize,
            level: k.level as i64,
            max_level: k.max as i64,
            min_level: k.min as i64,
            zero_visits: k.visits,
        }
    }

    pub fn level(&self, idx: u32) -> i64 {
        self.keys[idx as usize].level as i64
    }

    pub fn time(&self, idx: u32) -> usize {
        self.keys[idx as usize].t as usize
    }

    pub fn is_stationary(&self, idx: u32) -> bool {
        self.stationary.contains(&(idx as usize))
    }

    /// Index of the state at `time` (for `Absorbing`, the exact step) with the
    /// given statistics.
    pub fn find(&self, s: &PathState) -> Option<u32> {
        let key = Key {
            t: s.time as u32,
            level: s.level as i32,
            max: s.max_level as i32,
            min: s.min_level as i32,
            visits: s.zero_visits,
        };
        self.keys.binary_search(&key).ok().map(|i| i as u32)
    }

    /// Number of states at the given time index.
    pub fn layer_len(&self, t: usize) -> usize {
        if let Some(r) = self.layers.get(t) {
            r.len()
        } else if t == self.depth {
            self.stationary.len()
        } else {
            0
        }
    }
}

struct Builder {
    augment: Augment,
    caps: AugCaps,
    clock: Clock,
    depth: u32,
    window: (i64, i64),
    budget: usize,
}

impl Builder {
    fn root(&self) -> Key {
        Key {
            t: 0,
            level: 0,
            max: 0,
            min: 0,
            visits: u32::from(self.augment.local_time),
        }
    }

    fn child(&self, k: Key, up: bool) -> Option<Key> {
        let level = k.level + if up { 1 } else { -1 };
        if (level as i64) < self.window.0 || (level as i64) > self.window.1 {
            return None;
        }
        let mut c = k;
        c.level = level;
        c.t = match self.clock {
            Clock::Absorbing => k.t + 1,
            Clock::Saturating => (k.t + 1).min(self.depth),
        };
        if self.augment.max {
            c.max = k.max.max(level);
            if let Some(cap) = self.caps.max_level {
                c.max = c.max.min(cap.max(0) as i32);
            }
        }
        if self.augment.min {
            c.min = k.min.min(level);
            if let Some(cap) = self.caps.min_level {
                c.min = c.min.max(cap.min(0) as i32);
            }
        }
        if self.augment.local_time && level == 0 {
            c.visits = k.visits + 1;
            if let Some(cap) = self.caps.zero_visits {
                c.visits = c.visits.min(cap.max(1));
            }
        }
        Some(c)
    }

    fn expands(&self, k: Key) -> bool {
        let at_edge = k.level as i64 == self.window.0 || k.level as i64 == self.window.1;
        let at_horizon = self.clock == Clock::Absorbing && k.t >= self.depth;
        !at_edge && !at_horizon
    }

    fn run(self) -> Result<StateSpace> {
        // Breadth-first by time index; the stationary layer is closed under
        // its own transitions.
        let mut by_time: Vec<Vec<Key>> = vec![vec![self.root()]];
        let mut seen: std::collections::HashSet<Key> = by_time[0].iter().copied().collect();
        let mut total = 1usize;
        let mut t = 0usize;
        loop {
            let stationary = self.clock == Clock::Saturating && t as u32 == self.depth;
            let mut frontier: Vec<Key> = by_time[t].clone();
            let mut next: Vec<Key> = Vec::new();
            while let Some(k) = frontier.pop() {
                if !self.expands(k) {
                    continue;
                }
                for up in [false, true] {
                    if let Some(c) = self.child(k, up) {
                        if seen.insert(c) {
                            total += 1;
                            if total > self.budget {
                                return Err(Error::BudgetExceeded {
                                    states: total,
                                    budget: self.budget,
                                });
                            }
                            if stationary {
                                by_time[t].push(c);
                                frontier.push(c);
                            } else {
                                next.push(c);
                            }
                        }
                    }
                }
            }
            if stationary || next.is_empty() {
                break;
            }
            by_time.push(next);
            t += 1;
        }

        let mut keys: Vec<Key> = Vec::with_capacity(total);
        for layer in &mut by_time {
            layer.sort();
            keys.extend_from_slice(layer);
        }
        let index: HashMap<Key, u32> = keys.iter().enumerate().map(|(i, k)| (*k, i as u32)).collect();
        let children: Vec<[u32; 2]> = keys
            .iter()
            .map(|&k| {
                if !self.expands(k) {
                    return [NONE, NONE];
                }
                let get = |up| self.child(k, up).map_or(NONE, |c| index[&c]);
                [get(false), get(true)]
            })
            .collect();

        let mut layers = Vec::new();
        let mut start = 0;
        let mut stationary = 0..0;
        for (t, layer) in by_time.iter().enumerate() {
            let r = start..start + layer.len();
            start = r.end;
            if self.clock == Clock::Saturating && t as u32 == self.depth {
                stationary = r;
            } else {
                layers.push(r);
            }
        }

        let blocks = stationary_blocks(&keys, stationary.clone());
        let root = index[&self.root()];
        Ok(StateSpace {
            root,
            clock: self.clock,
            augment: self.augment,
            window: self.window,
            depth: self.depth as usize,
            keys,
            children,
            layers,
            stationary,
            blocks,
        })
    }
}

fn stationary_blocks(keys: &[Key], range: Range<usize>) -> Vec<Vec<u32>> {
    let mut groups: HashMap<(i32, i32, u32), Vec<u32>> = HashMap::new();
    for i in range {
        let k = keys[i];
        groups.entry((k.max, k.min, k.visits)).or_default().push(i as u32);
    }
    let mut blocks: Vec<((i64, i32, i32, u32), Vec<u32>)> = groups
        .into_iter()
        .map(|((max, min, visits), mut members)| {
            members.sort_by_key(|&i| keys[i as usize].level);
            // Every change of statistics raises max - min + visits by one.
            let order = max as i64 - min as i64 + visits as i64;
            ((order, max, min, visits), members)
        })
        .collect();
    blocks.sort_by_key(|b| b.0);
    blocks.into_iter().map(|(_, m)| m).collect()
}

/// Monroe's tail certificate: the smallest `C` with
/// `C^{-1/3} (1 + m₁²) ≤ eps`, where `m₁ = ∫|x| μ_n(dx)`.
pub fn monroe_horizon(mu_n: &DiscreteMeasure, eps: f64) -> f64 {
    monroe_horizon_from_moment(mu_n.first_abs_moment(), eps)
}

pub fn monroe_horizon_from_moment(m1: f64, eps: f64) -> f64 {
    ((1.0 + m1 * m1) / eps).powi(3)
}
