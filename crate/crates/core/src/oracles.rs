//! Independent reference values.
//!
//! None of these go through the LP or the multiple-stopping solver:
//! hitting-time expectations are computed by forward propagation of the
//! path distribution, the Azéma–Yor law from the barycenter function, and
//! embedding checks by simulation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::lattice::{Clock, Lattice, PathState};
use crate::measures::{wasserstein1, DiscreteMeasure, PeacockVector, MEAN_TOL};
use crate::multistop::StoppingPolicy;
use crate::payoffs::PayoffSpec;

/// Mass allowed to remain unabsorbed at the horizon.
pub const ABSORPTION_TOL: f64 = 1e-9;
/// Largest atom the barycenter construction accepts.
pub const MAX_ATOM_WEIGHT: f64 = 0.05;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// `E[Φ(B, τ)]` for the exit time `τ` of `(−a, b)` on the lattice with step
/// `dt`, propagating the path distribution for at most `steps` steps.
pub fn hitting_time_value(payoff: &PayoffSpec, a: f64, b: f64, dt: f64, steps: usize) -> Result<f64> {
    if payoff.arity() != 1 {
        return Err(Error::ArityMismatch {
            expected: 1,
            got: payoff.arity(),
        });
    }
    payoff.validate()?;
    let lattice = Lattice::new(steps, dt, Clock::Absorbing, payoff.required_augment())?;
    let lo = lattice
        .level_of(-a)
        .filter(|&l| l < 0)
        .ok_or_else(|| Error::InvalidLattice(format!("−{a} is not a negative lattice value")))?;
    let hi = lattice
        .level_of(b)
        .filter(|&l| l > 0)
        .ok_or_else(|| Error::InvalidLattice(format!("{b} is not a positive lattice value")))?;
    let aug = lattice.augment;
    let project = |s: PathState| PathState {
        time: 0,
        level: s.level,
        max_level: if aug.max { s.max_level } else { 0 },
        min_level: if aug.min { s.min_level } else { 0 },
        zero_visits: if aug.local_time { s.zero_visits } else { 0 },
    };
    let key = |s: &PathState| (s.level, s.max_level, s.min_level, s.zero_visits);

    let mut value = 0.0;
    let mut live: BTreeMap<(i64, i64, i64, u32), (PathState, f64)> = BTreeMap::new();
    let root = project(PathState::ROOT);
    live.insert(key(&root), (root, 1.0));
    for t in 1..=steps {
        let mut next: BTreeMap<(i64, i64, i64, u32), (PathState, f64)> = BTreeMap::new();
        for (_, (s, m)) in live {
            for up in [false, true] {
                let c = project(s.step(up));
                let half = 0.5 * m;
                if c.level == lo || c.level == hi {
                    let at = PathState { time: t, ..c };
                    value += half * payoff.evaluate(&lattice, &[at])?;
                } else {
                    next.entry(key(&c)).or_insert((c, 0.0)).1 += half;
                }
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    let unabsorbed: f64 = live.values().map(|v| v.1).sum();
    if unabsorbed > ABSORPTION_TOL {
        return Err(Error::HorizonTooShort { unabsorbed });
    }
    Ok(value)
}

/// Steps after which the exit from `(−k, k)` leaves less than `tol` mass,
/// from the spectral bound `P[τ > t] ≤ (4/π) cos(π/2k)^t`.
pub fn absorption_steps(k: i64, tol: f64) -> usize {
    let rate = (std::f64::consts::PI / (2.0 * k as f64)).cos();
    ((tol * std::f64::consts::PI / 4.0).ln() / rate.ln()).ceil() as usize
}

/// Law of the running maximum at the Azéma–Yor embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxLaw {
    pub law: DiscreteMeasure,
}

impl MaxLaw {
    pub fn mean(&self) -> f64 {
        self.law.mean()
    }

    /// `E[min(M, K)]`.
    pub fn capped_mean(&self, cap: f64) -> f64 {
        self.law.atoms().iter().map(|a| a.weight * a.position.min(cap)).sum()
    }

    /// `E[(M − K)⁺]`.
    pub fn call(&self, strike: f64) -> f64 {
        self.law.call(strike)
    }
}

/// Azéma–Yor law of the maximum: `M = b(X)` with the barycenter
/// `b(x) = E[X | X ≥ x]`, so that `P[M ≥ b(x)] = μ([x, ∞))`.
pub fn azema_yor_law_of_max(mu: &DiscreteMeasure) -> Result<MaxLaw> {
    if mu.mean().abs() > MEAN_TOL {
        return Err(Error::NotCentered {
            index: 0,
            mean: mu.mean(),
        });
    }
    if mu.len() == 1 {
        return Ok(MaxLaw {
            law: DiscreteMeasure::dirac(0.0),
        });
    }
    if let Some(a) = mu.atoms().iter().find(|a| a.weight > MAX_ATOM_WEIGHT) {
        return Err(Error::AtomTooLarge {
            position: a.position,
            weight: a.weight,
        });
    }
    let mut tail_mass = 0.0;
    let mut tail_first = 0.0;
    let mut pieces = Vec::with_capacity(mu.len());
    for a in mu.atoms().iter().rev() {
        tail_mass += a.weight;
        tail_first += a.weight * a.position;
        pieces.push(((tail_first / tail_mass).max(0.0), a.weight));
    }
    Ok(MaxLaw {
        law: DiscreteMeasure::new(pieces)?,
    })
}

/// Smallest concave majorant of the points `(x_i, y_i)`, evaluated at `x`
/// inside their range.
pub fn concave_envelope_at(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let first = pts.first()?;
    let last = pts.last()?;
    if x < first.0 || x > last.0 {
        return None;
    }
    // upper hull by monotone chain
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let mut best = f64::NEG_INFINITY;
    for w in hull.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 <= x && x <= x1 {
            let v = if x1 > x0 {
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            } else {
                y0.max(y1)
            };
            best = best.max(v);
        }
    }
    if hull.len() == 1 {
        best = hull[0].1;
    }
    Some(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalCheck {
    pub w1: f64,
    /// Sampling noise of W1 under exact embedding: mean plus three standard
    /// deviations of the distance between bootstrap resamples and the sample.
    pub band: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub samples: usize,
    pub seed: u64,
    pub marginals: Vec<MarginalCheck>,
    /// Paths cut off by the step guard.
    pub truncated: usize,
}

/// Simulates `policy` on `inst` and compares the empirical stopped laws
/// with `mu` in W1, with bootstrap bands.
pub fn mc_embedding_check(
    inst: &Instance,
    policy: &StoppingPolicy,
    mu: &PeacockVector,
    samples: usize,
    seed: u64,
) -> Result<McReport> {
    let n = inst.arity();
    if mu.len() != n {
        return Err(Error::ArityMismatch {
            expected: n,
            got: mu.len(),
        });
    }
    let h = inst.h();
    let width = inst
        .phases
        .iter()
        .map(|g| (g.window.1 - g.window.0) as usize)
        .max()
        .unwrap_or(1);
    let guard = 1000 * width * width + 10 * inst.lattice.steps + 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stops: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); n];
    let mut truncated = 0;
    for _ in 0..samples {
        let mut node = inst.root as usize;
        'phases: for (k, g) in inst.phases.iter().enumerate() {
            let mut steps = 0;
            loop {
                let p = if !g.can_continue[node] {
                    1.0
                } else if !g.can_stop[node] {
                    0.0
                } else {
                    policy.stop_probability[k][node]
                };
                if p >= 1.0 || (p > 0.0 && rng.gen::<f64>() < p) {
                    stops[k].push(g.level[node] as f64 * h);
                    if k + 1 < n {
                        node = g.stop_target[node] as usize;
                    }
                    break;
                }
                steps += 1;
                if steps > guard {
                    truncated += 1;
                    break 'phases;
                }
                node = g.children[node][usize::from(rng.gen::<bool>())] as usize;
            }
        }
    }
    let mut marginals = Vec::with_capacity(n);
    for (k, xs) in stops.iter().enumerate() {
        if xs.is_empty() {
            marginals.push(MarginalCheck {
                w1: f64::INFINITY,
                band: 0.0,
                within: false,
            });
            continue;
        }
        let empirical = DiscreteMeasure::uniform(xs)?;
        let w1 = wasserstein1(&empirical, mu.get(k));
        let mut boot = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
        let mut buf = vec![0.0; xs.len()];
        for _ in 0..BOOTSTRAP_RESAMPLES {
            for b in buf.iter_mut() {
                *b = xs[rng.gen_range(0..xs.len())];
            }
            boot.push(wasserstein1(&DiscreteMeasure::uniform(&buf)?, &empirical));
        }
        let mean = boot.iter().sum::<f64>() / boot.len() as f64;
        let var = boot.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (boot.len() - 1) as f64;
        let band = mean + 3.0 * var.sqrt();
        marginals.push(MarginalCheck {
            w1,
            band,
            within: w1 <= band,
        });
    }
    Ok(McReport {
        samples,
        seed,
        marginals,
        truncated,
    })
}
