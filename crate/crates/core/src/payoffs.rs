//! Rewards `Φ(ω, θ₁, …, θ_n)` evaluated on the statistics of the stopped walk.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{AugCaps, Augment, Clock, Lattice, PathState};

const LEVEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    /// Constant beyond the end points.
    Flat,
    /// Continue the first and last segments.
    #[default]
    Linear,
}

/// Piecewise-linear function through sorted `(x, y)` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseLinear {
    pub points: Vec<(f64, f64)>,
    #[serde(default)]
    pub extrapolation: Extrapolation,
}

impl PiecewiseLinear {
    pub fn new(mut points: Vec<(f64, f64)>, extrapolation: Extrapolation) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidPayoff("piecewise-linear function needs a point".into()));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidPayoff("non-finite breakpoint".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidPayoff("duplicate breakpoint".into()));
        }
        Ok(Self { points, extrapolation })
    }

    fn validate(&self) -> Result<()> {
        Self::new(self.points.clone(), self.extrapolation).map(|_| ())
    }

    pub fn eval(&self, x: f64) -> f64 {
        let p = &self.points;
        if p.len() == 1 {
            return p[0].1;
        }
        let seg = if x <= p[0].0 {
            if self.extrapolation == Extrapolation::Flat {
                return p[0].1;
            }
            0
        } else if x >= p[p.len() - 1].0 {
            if self.extrapolation == Extrapolation::Flat {
                return p[p.len() - 1].1;
            }
            p.len() - 2
        } else {
            p.partition_point(|q| q.0 <= x) - 1
        };
        let (x0, y0) = p[seg];
        let (x1, y1) = p[seg + 1];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Supremum over `[lo, hi]`.
    fn sup_on(&self, lo: f64, hi: f64) -> f64 {
        let mut best = self.eval(lo).max(self.eval(hi));
        for &(x, y) in &self.points {
            if x >= lo && x <= hi {
                best = best.max(y);
            }
        }
        best
    }

    /// Whether the function grows without bound on the given side.
    fn grows(&self, right: bool) -> bool {
        let p = &self.points;
        if self.extrapolation == Extrapolation::Flat || p.len() < 2 {
            return false;
        }
        if right {
            p[p.len() - 1].1 > p[p.len() - 2].1
        } else {
            p[0].1 > p[1].1
        }
    }
}

/// One building block of a separable reward, evaluated at a single stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Term {
    /// Running maximum of the path at the stop, `min(ω̄_θ, cap)`.
    Lookback {
        #[serde(default)]
        cap: Option<f64>,
    },
    /// Pays `payout` when the barrier status matches `knock_in`.
    Barrier {
        #[serde(default)]
        upper: Option<f64>,
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default = "yes")]
        knock_in: bool,
        #[serde(default = "one")]
        payout: f64,
    },
    /// `slope·θ + shape(θ)`; `shape` is held flat beyond its last breakpoint.
    StopTime {
        #[serde(default)]
        slope: f64,
        #[serde(default)]
        shape: Option<PiecewiseLinear>,
    },
    /// `min(√dt · #visits to 0, cap)`.
    LocalTime {
        #[serde(default)]
        cap: Option<f64>,
    },
    /// `1{θ = 0}`.
    StopIndicator,
    /// `f(ω_θ)`.
    Value {
        function: PiecewiseLinear,
    },
    Constant {
        value: f64,
    },
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

impl Term {
    fn value(&self, lattice: &Lattice, s: &PathState) -> f64 {
        let h = lattice.h();
        match self {
            Term::Lookback { cap } => {
                let m = s.max_level as f64 * h;
                cap.map_or(m, |k| m.min(k))
            }
            Term::Barrier {
                upper,
                lower,
                knock_in,
                payout,
            } => {
                let up = upper.is_some_and(|u| s.max_level as f64 * h >= u - 1e-12);
                let down = lower.is_some_and(|l| s.min_level as f64 * h <= l + 1e-12);
                if (up || down) == *knock_in {
                    *payout
                } else {
                    0.0
                }
            }
            Term::StopTime { slope, shape } => {
                let theta = s.time as f64 * lattice.dt;
                slope * theta + shape.as_ref().map_or(0.0, |f| f.eval(theta))
            }
            Term::LocalTime { cap } => {
                let l = s.zero_visits as f64 * h;
                cap.map_or(l, |k| l.min(k))
            }
            Term::StopIndicator => {
                if s.time == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            Term::Value { function } => function.eval(s.level as f64 * h),
            Term::Constant { value } => *value,
        }
    }

    /// Part of the value that is not linear in the stop time.
    fn stop_value(&self, lattice: &Lattice, s: &PathState) -> f64 {
        match self {
            Term::StopTime { shape, .. } => shape.as_ref().map_or(0.0, |f| f.eval(s.time as f64 * lattice.dt)),
            other => other.value(lattice, s),
        }
    }

    fn slope(&self) -> f64 {
        match self {
            Term::StopTime { slope, .. } => *slope,
            _ => 0.0,
        }
    }

    /// Range `[lo, hi]` of the term on the lattice, `None` ends are unbounded.
    fn range(&self, lattice: &Lattice) -> (Option<f64>, Option<f64>) {
        let reach = lattice.steps as f64 * lattice.h();
        let t_max = match lattice.clock {
            Clock::Absorbing => Some(lattice.horizon()),
            Clock::Saturating => None,
        };
        match self {
            Term::Lookback { cap } => (Some(0.0), cap.map(|k| k.max(0.0))),
            Term::Barrier { payout, .. } => (Some(payout.min(0.0)), Some(payout.max(0.0))),
            Term::StopTime { slope, shape } => {
                let (slo, shi) = shape.as_ref().map_or((0.0, 0.0), |f| {
                    let ys = f.points.iter().map(|p| p.1);
                    (
                        ys.clone().fold(f64::INFINITY, f64::min),
                        ys.fold(f64::NEG_INFINITY, f64::max),
                    )
                });
                let lin_hi = if *slope > 0.0 {
                    t_max.map(|t| slope * t)
                } else {
                    Some(0.0)
                };
                let lin_lo = if *slope < 0.0 {
                    t_max.map(|t| slope * t)
                } else {
                    Some(0.0)
                };
                (lin_lo.map(|v| v + slo), lin_hi.map(|v| v + shi))
            }
            Term::LocalTime { cap } => (Some(0.0), cap.map(|k| k.max(0.0))),
            Term::StopIndicator => (Some(0.0), Some(1.0)),
            Term::Value { function } => {
                let hi = if function.grows(true) || function.grows(false) {
                    if lattice.clock == Clock::Absorbing {
                        Some(function.sup_on(-reach, reach))
                    } else {
                        None
                    }
                } else {
                    Some(function.sup_on(-reach, reach))
                };
                let neg = PiecewiseLinear {
                    points: function.points.iter().map(|&(x, y)| (x, -y)).collect(),
                    extrapolation: function.extrapolation,
                };
                let lo = if lattice.clock == Clock::Absorbing || !(neg.grows(true) || neg.grows(false)) {
                    Some(-neg.sup_on(-reach, reach))
                } else {
                    None
                };
                (lo, hi)
            }
            Term::Constant { value } => (Some(*value), Some(*value)),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Term::StopTime { shape: Some(f), .. } => {
                f.validate()?;
                if f.extrapolation != Extrapolation::Flat {
                    return Err(Error::InvalidPayoff(
                        "stop-time shapes must use flat extrapolation".into(),
                    ));
                }
                Ok(())
            }
            Term::Value { function } => function.validate(),
            _ => Ok(()),
        }
    }
}

/// A term scaled by `weight` and attached to the stop `phase` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub phase: usize,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(flatten)]
    pub term: Term,
}

/// Value table indexed by the time index and level of both stops.
///
/// Time indices beyond the largest one in the table are read as that index,
/// so the table describes rewards that are constant in late stop times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomTable {
    pub rows: Vec<TableRow>,
    #[serde(default)]
    pub default: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub i1: usize,
    pub j1: i64,
    pub i2: usize,
    pub j2: i64,
    pub value: f64,
}

impl CustomTable {
    pub fn from_csv(path: impl AsRef<Path>, default: f64) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<TableRow>, _>>()?;
        Ok(Self { rows, default })
    }

    pub fn max_time(&self) -> usize {
        self.rows.iter().map(|r| r.i1.max(r.i2)).max().unwrap_or(0)
    }

    fn lookup(&self) -> HashMap<(usize, i64, usize, i64), f64> {
        self.rows.iter().map(|r| ((r.i1, r.j1, r.i2, r.j2), r.value)).collect()
    }

    fn value(&self, a: &PathState, b: &PathState) -> f64 {
        let t = self.max_time();
        let key = (a.time.min(t), a.level, b.time.min(t), b.level);
        self.rows
            .iter()
            .find(|r| (r.i1, r.j1, r.i2, r.j2) == key)
            .map_or(self.default, |r| r.value)
    }
}

/// Rewards that depend jointly on two stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coupling {
    Table(CustomTable),
    /// `weight · min(|ω_θ₂ − ω_θ₁|, cap)`, a forward-start straddle.
    AbsSpread {
        cap: f64,
        #[serde(default = "one")]
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffSpec {
    /// `Φ = Σ_k Φ_k(ω, θ_k)`, each `Φ_k` a weighted sum of terms.
    Separable { arity: usize, terms: Vec<WeightedTerm> },
    /// A two-stop reward outside the separable class.
    Coupled { coupling: Coupling },
}

/// Largest lattice size on which coupled rewards are accepted.
pub const COUPLED_MAX_STEPS: usize = 20;

impl PayoffSpec {
    pub fn separable(arity: usize, terms: Vec<WeightedTerm>) -> Result<Self> {
        let p = PayoffSpec::Separable { arity, terms };
        p.validate()?;
        Ok(p)
    }

    fn single(term: Term) -> Self {
        PayoffSpec::Separable {
            arity: 1,
            terms: vec![WeightedTerm {
                phase: 1,
                weight: 1.0,
                term,
            }],
        }
    }

    pub fn zero(arity: usize) -> Self {
        PayoffSpec::Separable { arity, terms: vec![] }
    }

    pub fn stop_indicator() -> Self {
        Self::single(Term::StopIndicator)
    }

    pub fn lookback(cap: f64) -> Self {
        Self::single(Term::Lookback { cap: Some(cap) })
    }

    /// `slope · θ₁`.
    pub fn stop_time(slope: f64) -> Self {
        Self::single(Term::StopTime { slope, shape: None })
    }

    pub fn arity(&self) -> usize {
        match self {
            PayoffSpec::Separable { arity, .. } => *arity,
            PayoffSpec::Coupled { .. } => 2,
        }
    }

    pub fn is_separable(&self) -> bool {
        matches!(self, PayoffSpec::Separable { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PayoffSpec::Separable { arity, terms } => {
                if *arity == 0 {
                    return Err(Error::InvalidPayoff("arity must be at least 1".into()));
                }
                for t in terms {
                    if t.phase == 0 || t.phase > *arity {
                        return Err(Error::InvalidPayoff(format!(
                            "term phase {} outside 1..={arity}",
                            t.phase
                        )));
                    }
                    if !t.weight.is_finite() {
                        return Err(Error::InvalidPayoff("non-finite weight".into()));
                    }
                    t.term.validate()?;
                }
                Ok(())
            }
            PayoffSpec::Coupled { coupling } => match coupling {
                Coupling::Table(_) => Ok(()),
                Coupling::AbsSpread { cap, .. } if *cap >= 0.0 => Ok(()),
                Coupling::AbsSpread { cap, .. } => Err(Error::InvalidPayoff(format!("negative cap {cap}"))),
            },
        }
    }

    /// `Φ` on the snapshots at the `n` stops.
    pub fn evaluate(&self, lattice: &Lattice, states: &[PathState]) -> Result<f64> {
        if states.len() != self.arity() {
            return Err(Error::ArityMismatch {
                expected: self.arity(),
                got: states.len(),
            });
        }
        Ok(match self {
            PayoffSpec::Separable { terms, .. } => terms
                .iter()
                .map(|t| t.weight * t.term.value(lattice, &states[t.phase - 1]))
                .sum(),
            PayoffSpec::Coupled { coupling } => coupled_value(coupling, lattice, &states[0], &states[1]),
        })
    }

    /// Part of `Φ_k` paid at stop `k` (0-based), excluding linear time terms.
    pub(crate) fn stop_reward(&self, lattice: &Lattice, phase: usize, s: &PathState) -> f64 {
        match self {
            PayoffSpec::Separable { terms, .. } => terms
                .iter()
                .filter(|t| t.phase == phase + 1)
                .map(|t| t.weight * t.term.stop_value(lattice, s))
                .sum(),
            PayoffSpec::Coupled { .. } => 0.0,
        }
    }

    pub(crate) fn coupled_reward(&self, lattice: &Lattice, first: &PathState, second: &PathState) -> f64 {
        match self {
            PayoffSpec::Coupled { coupling } => coupled_value(coupling, lattice, first, second),
            PayoffSpec::Separable { .. } => 0.0,
        }
    }

    /// Reward per continuation step in phase `k` (0-based): linear time terms
    /// `a_j θ_j` accrue `dt · a_j` per step for every stop `j ≥ k` still open.
    pub fn run_rewards(&self, dt: f64) -> Vec<f64> {
        let n = self.arity();
        let mut slopes = vec![0.0; n];
        if let PayoffSpec::Separable { terms, .. } = self {
            for t in terms {
                slopes[t.phase - 1] += t.weight * t.term.slope();
            }
        }
        (0..n).map(|k| dt * slopes[k..].iter().sum::<f64>()).collect()
    }

    pub fn required_augment(&self) -> Augment {
        let mut aug = Augment::NONE;
        if let PayoffSpec::Separable { terms, .. } = self {
            for t in terms {
                match &t.term {
                    Term::Lookback { .. } => aug.max = true,
                    Term::Barrier { upper, lower, .. } => {
                        aug.max |= upper.is_some();
                        aug.min |= lower.is_some();
                    }
                    Term::LocalTime { .. } => aug.local_time = true,
                    _ => {}
                }
            }
        }
        aug
    }

    /// Levels beyond which the reward no longer depends on the statistics.
    pub fn aug_caps(&self, h: f64) -> AugCaps {
        let mut caps = AugCaps::default();
        let PayoffSpec::Separable { terms, .. } = self else {
            return caps;
        };
        let mut max_cap: Option<Option<i64>> = None;
        let mut min_cap: Option<Option<i64>> = None;
        let mut visit_cap: Option<Option<u32>> = None;
        let merge_max = |acc: &mut Option<Option<i64>>, v: Option<i64>| {
            *acc = Some(match (*acc, v) {
                (None, v) => v,
                (Some(Some(a)), Some(b)) => Some(a.max(b)),
                _ => None,
            });
        };
        for t in terms {
            match &t.term {
                Term::Lookback { cap } => {
                    merge_max(&mut max_cap, cap.map(|k| (k / h - LEVEL_EPS).ceil().max(0.0) as i64));
                }
                Term::Barrier { upper, lower, .. } => {
                    if let Some(u) = upper {
                        merge_max(&mut max_cap, Some((u / h - LEVEL_EPS).ceil().max(0.0) as i64));
                    }
                    if let Some(l) = lower {
                        // saturate the minimum from below: larger magnitude wins
                        let lvl = (l / h + LEVEL_EPS).floor().min(0.0) as i64;
                        min_cap = Some(match min_cap {
                            None => Some(lvl),
                            Some(Some(a)) => Some(a.min(lvl)),
                            Some(None) => None,
                        });
                    }
                }
                Term::LocalTime { cap } => {
                    let v = cap.map(|k| (k / h - LEVEL_EPS).ceil().max(1.0) as u32);
                    visit_cap = Some(match (visit_cap, v) {
                        (None, v) => v,
                        (Some(Some(a)), Some(b)) => Some(a.max(b)),
                        _ => None,
                    });
                }
                _ => {}
            }
        }
        caps.max_level = max_cap.flatten();
        caps.min_level = min_cap.flatten();
        caps.zero_visits = visit_cap.flatten();
        caps
    }

    /// Number of time steps after which the reward no longer depends on time
    /// other than through linear terms.
    pub fn time_depth(&self, dt: f64) -> usize {
        match self {
            PayoffSpec::Separable { terms, .. } => terms
                .iter()
                .map(|t| match &t.term {
                    Term::StopIndicator => 1,
                    Term::StopTime { shape: Some(f), .. } => {
                        let last = f.points[f.points.len() - 1].0;
                        (last / dt - LEVEL_EPS).ceil().max(0.0) as usize
                    }
                    _ => 0,
                })
                .max()
                .unwrap_or(0),
            PayoffSpec::Coupled { coupling } => match coupling {
                Coupling::Table(t) => t.max_time(),
                Coupling::AbsSpread { .. } => 0,
            },
        }
    }

    /// Same reward with the opposite sign.
    pub fn negated(&self) -> PayoffSpec {
        match self {
            PayoffSpec::Separable { arity, terms } => PayoffSpec::Separable {
                arity: *arity,
                terms: terms
                    .iter()
                    .map(|t| WeightedTerm {
                        weight: -t.weight,
                        ..t.clone()
                    })
                    .collect(),
            },
            PayoffSpec::Coupled { coupling } => PayoffSpec::Coupled {
                coupling: match coupling {
                    Coupling::Table(t) => Coupling::Table(CustomTable {
                        rows: t.rows.iter().map(|r| TableRow { value: -r.value, ..*r }).collect(),
                        default: -t.default,
                    }),
                    Coupling::AbsSpread { cap, weight } => Coupling::AbsSpread {
                        cap: *cap,
                        weight: -weight,
                    },
                },
            },
        }
    }
}

fn coupled_value(c: &Coupling, lattice: &Lattice, a: &PathState, b: &PathState) -> f64 {
    match c {
        Coupling::Table(t) => t.value(a, b),
        Coupling::AbsSpread { cap, weight } => {
            let d = (b.level - a.level).abs() as f64 * lattice.h();
            weight * d.min(*cap)
        }
    }
}

/// Upper bound of `Φ` on the lattice: exact for the bounded term kinds, the
/// cap where one is declared.
pub fn validate_boundedness(p: &PayoffSpec, lattice: &Lattice) -> Result<f64> {
    p.validate()?;
    match p {
        PayoffSpec::Separable { terms, .. } => {
            let mut total = 0.0;
            for t in terms {
                let (lo, hi) = t.term.range(lattice);
                let bound = if t.weight >= 0.0 {
                    hi.map(|v| t.weight * v)
                } else {
                    lo.map(|v| t.weight * v)
                };
                match bound {
                    Some(b) => total += if t.weight == 0.0 { 0.0 } else { b },
                    None => {
                        return Err(Error::UnboundedAbove(format!(
                            "{:?} with weight {} needs a cap",
                            t.term, t.weight
                        )))
                    }
                }
            }
            Ok(total)
        }
        PayoffSpec::Coupled { coupling } => Ok(match coupling {
            Coupling::Table(t) => {
                let lookup = t.lookup();
                lookup.values().copied().fold(t.default, f64::max)
            }
            Coupling::AbsSpread { cap, weight } => (weight * cap).max(0.0),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;

    fn st(time: usize, level: i64, max_level: i64) -> PathState {
        PathState {
            time,
            level,
            max_level,
            min_level: level.min(0),
            zero_visits: 1,
        }
    }

    #[test]
    fn evaluate_examples() {
        let l = build_lattice(8, 0.25, Augment::NONE).unwrap();
        let ind = PayoffSpec::stop_indicator();
        assert_eq!(ind.evaluate(&l, &[PathState::ROOT]).unwrap(), 1.0);
        assert_eq!(ind.evaluate(&l, &[st(2, 0, 1)]).unwrap(), 0.0);

        let lb = PayoffSpec::lookback(1.0);
        assert_eq!(lb.evaluate(&l, &[st(4, 0, 2)]).unwrap(), 1.0);
        assert_eq!(lb.evaluate(&l, &[st(6, 0, 3)]).unwrap(), 1.0);
        assert_eq!(lb.evaluate(&l, &[st(2, 0, 1)]).unwrap(), 0.5);

        let neg = PayoffSpec::stop_time(-1.0);
        assert_eq!(neg.evaluate(&l, &[st(4, 0, 0)]).unwrap(), -1.0);

        assert!(matches!(
            neg.evaluate(&l, &[PathState::ROOT, PathState::ROOT]),
            Err(Error::ArityMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn boundedness_examples() {
        let l = build_lattice(8, 0.25, Augment::NONE).unwrap();
        assert_eq!(validate_boundedness(&PayoffSpec::stop_indicator(), &l).unwrap(), 1.0);
        assert_eq!(validate_boundedness(&PayoffSpec::lookback(0.7), &l).unwrap(), 0.7);
        assert_eq!(validate_boundedness(&PayoffSpec::stop_time(-1.0), &l).unwrap(), 0.0);
        let raw_max = PayoffSpec::separable(
            1,
            vec![WeightedTerm {
                phase: 1,
                weight: 1.0,
                term: Term::Lookback { cap: None },
            }],
        )
        .unwrap();
        assert!(matches!(
            validate_boundedness(&raw_max, &l),
            Err(Error::UnboundedAbove(_))
        ));
        // the negated raw maximum is bounded by 0
        assert_eq!(validate_boundedness(&raw_max.negated(), &l).unwrap(), 0.0);
    }

    #[test]
    fn separable_sum_is_sum_of_parts() {
        let l = build_lattice(6, 0.25, Augment::NONE).unwrap();
        let terms = vec![
            WeightedTerm {
                phase: 1,
                weight: 0.5,
                term: Term::Lookback { cap: Some(1.0) },
            },
            WeightedTerm {
                phase: 2,
                weight: -1.0,
                term: Term::StopTime {
                    slope: 1.0,
                    shape: None,
                },
            },
            WeightedTerm {
                phase: 2,
                weight: 2.0,
                term: Term::Value {
                    function: PiecewiseLinear::new(vec![(-1.0, 0.0), (1.0, 1.0)], Extrapolation::Linear).unwrap(),
                },
            },
        ];
        let p = PayoffSpec::separable(2, terms.clone()).unwrap();
        let a = st(2, 2, 2);
        let b = st(5, -1, 2);
        let total = p.evaluate(&l, &[a, b]).unwrap();
        let parts: f64 = terms
            .iter()
            .map(|t| {
                let q = PayoffSpec::separable(1, vec![WeightedTerm { phase: 1, ..t.clone() }]).unwrap();
                q.evaluate(&l, &[if t.phase == 1 { a } else { b }]).unwrap()
            })
            .sum();
        assert!((total - parts).abs() < 1e-15);
        let r = p.run_rewards(l.dt);
        assert_eq!(r, vec![-0.25, -0.25]);
    }

    #[test]
    fn piecewise_linear_extrapolation() {
        let f = PiecewiseLinear::new(vec![(0.0, 0.0), (1.0, 2.0)], Extrapolation::Linear).unwrap();
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(2.0), 4.0);
        assert_eq!(f.eval(-1.0), -2.0);
        let g = PiecewiseLinear::new(vec![(0.0, 0.0), (1.0, 2.0)], Extrapolation::Flat).unwrap();
        assert_eq!(g.eval(2.0), 2.0);
        assert_eq!(g.eval(-1.0), 0.0);
    }

    #[test]
    fn caps_and_depth() {
        let p = PayoffSpec::lookback(1.0);
        assert_eq!(p.aug_caps(0.05).max_level, Some(20));
        assert_eq!(PayoffSpec::stop_indicator().time_depth(0.01), 1);
        let shaped = PayoffSpec::separable(
            1,
            vec![WeightedTerm {
                phase: 1,
                weight: 1.0,
                term: Term::StopTime {
                    slope: 0.0,
                    shape: Some(PiecewiseLinear::new(vec![(0.0, 0.0), (0.5, 1.0)], Extrapolation::Flat).unwrap()),
                },
            }],
        )
        .unwrap();
        assert_eq!(shaped.time_depth(0.1), 5);
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"type":"separable","arity":1,"terms":[{"phase":1,"kind":"lookback","cap":1.0}]}"#;
        let p: PayoffSpec = serde_json::from_str(text).unwrap();
        assert_eq!(p, PayoffSpec::lookback(1.0));
        let back: PayoffSpec = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        let c = r#"{"type":"coupled","coupling":{"kind":"abs_spread","cap":0.5}}"#;
        let q: PayoffSpec = serde_json::from_str(c).unwrap();
        assert_eq!(q.arity(), 2);
    }

    #[test]
    fn custom_table_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "i1,j1,i2,j2,value\n0,0,1,1,2.5\n1,1,1,1,-1\n").unwrap();
        let t = CustomTable::from_csv(&path, 0.0).unwrap();
        assert_eq!(t.rows.len(), 2);
        let p = PayoffSpec::Coupled {
            coupling: Coupling::Table(t),
        };
        let l = build_lattice(4, 1.0, Augment::NONE).unwrap();
        let a = PathState::ROOT;
        let b = st(1, 1, 1);
        assert_eq!(p.evaluate(&l, &[a, b]).unwrap(), 2.5);
        // late times read as the last tabulated index
        assert_eq!(p.evaluate(&l, &[st(3, 1, 1), st(4, 1, 1)]).unwrap(), -1.0);
        assert_eq!(validate_boundedness(&p, &l).unwrap(), 2.5);
    }
}
