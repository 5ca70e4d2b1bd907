//! Random instance generators shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use skorokhod::payoffs::{Extrapolation, PiecewiseLinear};
use skorokhod::{DiscreteMeasure, PayoffSpec, PeacockVector, Term, WeightedTerm};

/// Spreads each atom of `levels` over `x − a, x + b` with the martingale
/// weights, keeping every level within `±bound`.
fn spread(rng: &mut ChaCha8Rng, levels: &BTreeMap<i64, f64>, bound: i64, p: f64) -> BTreeMap<i64, f64> {
    let mut out = BTreeMap::new();
    for (&x, &w) in levels {
        let a = rng.gen_range(1..=3).min(x + bound);
        let b = rng.gen_range(1..=3).min(bound - x);
        if a < 1 || b < 1 || !rng.gen_bool(p) {
            *out.entry(x).or_insert(0.0) += w;
            continue;
        }
        let s = (a + b) as f64;
        *out.entry(x - a).or_insert(0.0) += w * b as f64 / s;
        *out.entry(x + b).or_insert(0.0) += w * a as f64 / s;
    }
    out
}

fn to_measure(levels: &BTreeMap<i64, f64>, h: f64) -> DiscreteMeasure {
    DiscreteMeasure::new(levels.iter().map(|(&l, &w)| (l as f64 * h, w))).unwrap()
}

/// Centered peacock of `n` marginals on lattice values `j·h`, `|j| ≤ bound`.
pub fn random_peacock(rng: &mut ChaCha8Rng, n: usize, h: f64, bound: i64) -> PeacockVector {
    let mut levels = BTreeMap::from([(0i64, 1.0)]);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let p = if k == 0 { 1.0 } else { 0.7 };
        levels = spread(rng, &levels, bound, p);
        if rng.gen_bool(0.5) {
            levels = spread(rng, &levels, bound, 0.5);
        }
        out.push(to_measure(&levels, h));
    }
    PeacockVector::new(out).unwrap()
}

fn random_function(rng: &mut ChaCha8Rng) -> PiecewiseLinear {
    let mut x = -1.5;
    let points = (0..4)
        .map(|_| {
            x += rng.gen_range(0.2..0.9);
            (x, rng.gen_range(-1.0..1.0))
        })
        .collect();
    PiecewiseLinear::new(points, Extrapolation::Flat).unwrap()
}

/// Bounded separable payoff of arity `n`: capped lookbacks, capped local
/// times, barriers and vanilla terms with random weights.
pub fn random_capped_payoff(rng: &mut ChaCha8Rng, n: usize) -> PayoffSpec {
    let mut terms = Vec::new();
    for phase in 1..=n {
        for _ in 0..rng.gen_range(1..=2) {
            let term = match rng.gen_range(0..4) {
                0 => Term::Lookback {
                    cap: Some(rng.gen_range(0.25..1.5)),
                },
                1 => Term::LocalTime {
                    cap: Some(rng.gen_range(0.25..1.0)),
                },
                2 => Term::Barrier {
                    upper: Some(rng.gen_range(0.25..1.0)),
                    lower: None,
                    knock_in: rng.gen_bool(0.5),
                    payout: 1.0,
                },
                _ => Term::Value {
                    function: random_function(rng),
                },
            };
            terms.push(WeightedTerm {
                phase,
                weight: rng.gen_range(-1.0..1.0),
                term,
            });
        }
    }
    PayoffSpec::separable(n, terms).unwrap()
}

/// Separable payoff whose terms depend only on time and position.
pub fn random_markov_payoff(rng: &mut ChaCha8Rng, n: usize) -> PayoffSpec {
    let mut terms = Vec::new();
    for phase in 1..=n {
        terms.push(WeightedTerm {
            phase,
            weight: rng.gen_range(-1.0..1.0),
            term: Term::Value {
                function: random_function(rng),
            },
        });
        terms.push(WeightedTerm {
            phase,
            weight: rng.gen_range(-1.0..1.0),
            term: Term::StopTime {
                slope: rng.gen_range(-1.0..1.0),
                shape: None,
            },
        });
    }
    PayoffSpec::separable(n, terms).unwrap()
}

/// Random piecewise-linear function through breakpoints of `[lo, hi]`.
pub fn random_values(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
