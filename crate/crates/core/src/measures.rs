//! Finite atomic marginals and the convex-order (peacock) feasibility test.
//!
//! Convex order between two measures with equal means is decided through
//! their potential functions `U(x) = ∫|x - y| m(dy)`: `lo ≼ hi` iff
//! `U_lo ≤ U_hi` everywhere. Both potentials are piecewise linear with kinks
//! at the atoms and coincide outside the joint support, so checking the
//! union of the supports is exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the weight sum accepted before renormalization.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Centering tolerance for peacocks.
pub const MEAN_TOL: f64 = 1e-10;
/// Slack allowed in potential-function comparisons.
pub const ORDER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub position: f64,
    pub weight: f64,
}

/// Finite probability measure on the real line, atoms sorted by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct DiscreteMeasure {
    atoms: Vec<Atom>,
    mean: f64,
}

impl DiscreteMeasure {
    /// Builds a measure from `(position, weight)` pairs.
    ///
    /// Duplicate positions are merged and zero weights dropped. Weights are
    /// renormalized only when they already sum to one within `1e-9`.
    pub fn new<I>(atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut raw: Vec<Atom> = Vec::new();
        for (position, weight) in atoms {
            if !position.is_finite() || !weight.is_finite() || weight < 0.0 {
                return Err(Error::InvalidAtom { position, weight });
            }
            if weight > 0.0 {
                raw.push(Atom { position, weight });
            }
        }
        if raw.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        raw.sort_by(|a, b| a.position.total_cmp(&b.position));
        let mut merged: Vec<Atom> = Vec::with_capacity(raw.len());
        for atom in raw {
            match merged.last_mut() {
                Some(last) if same_position(last.position, atom.position) => last.weight += atom.weight,
                _ => merged.push(atom),
            }
        }
        let sum: f64 = merged.iter().map(|a| a.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightSumMismatch { sum });
        }
        for atom in &mut merged {
            atom.weight /= sum;
        }
        let mean = merged.iter().map(|a| a.position * a.weight).sum();
        Ok(Self { atoms: merged, mean })
    }

    pub fn dirac(position: f64) -> Self {
        Self {
            atoms: vec![Atom { position, weight: 1.0 }],
            mean: position,
        }
    }

    /// Equal-weight measure on the given positions.
    pub fn uniform(positions: &[f64]) -> Result<Self> {
        let w = 1.0 / positions.len().max(1) as f64;
        Self::new(positions.iter().map(|&x| (x, w)))
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn min_position(&self) -> f64 {
        self.atoms[0].position
    }

    pub fn max_position(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].position
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.position)
    }

    /// Weight of the atom at `x`, zero if `x` is not in the support.
    pub fn weight_at(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .find(|a| same_position(a.position, x))
            .map_or(0.0, |a| a.weight)
    }

    /// `∫ f dm`, exact for the atomic measure.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let mut total = 0.0;
        for a in &self.atoms {
            let v = f(a.position);
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { x: a.position });
            }
            total += a.weight * v;
        }
        Ok(total)
    }

    /// Potential function `U(x) = ∫|x - y| m(dy)`.
    pub fn potential(&self, x: f64) -> f64 {
        self.atoms.iter().map(|a| a.weight * (x - a.position).abs()).sum()
    }

    pub fn first_abs_moment(&self) -> f64 {
        self.potential(0.0)
    }

    /// `∫ (x - strike)^+ m(dx)`.
    pub fn call(&self, strike: f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * (a.position - strike).max(0.0))
            .sum()
    }

    /// Spreads every atom onto the two neighbouring multiples of `spacing`,
    /// keeping its mass and mean. Returns the snapped measure together with
    /// its W1 distance to `self`.
    ///
    /// Applied to every marginal of a peacock the result is again a peacock:
    /// `snapped(φ) = self(φ̂)` with `φ̂` the grid interpolation of `φ`.
    pub fn snap_to_grid(&self, spacing: f64) -> Result<(Self, f64)> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidLattice(format!("grid spacing {spacing}")));
        }
        let mut pieces = Vec::with_capacity(2 * self.atoms.len());
        for a in &self.atoms {
            let scaled = a.position / spacing;
            let lo = scaled.floor();
            let frac = scaled - lo;
            if frac <= 1e-12 || frac >= 1.0 - 1e-12 {
                pieces.push((scaled.round() * spacing, a.weight));
            } else {
                pieces.push((lo * spacing, a.weight * (1.0 - frac)));
                pieces.push(((lo + 1.0) * spacing, a.weight * frac));
            }
        }
        let snapped = Self::new(pieces)?;
        let err = wasserstein1(self, &snapped);
        Ok((snapped, err))
    }
}

fn same_position(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

impl TryFrom<Vec<(f64, f64)>> for DiscreteMeasure {
    type Error = Error;

    fn try_from(value: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<DiscreteMeasure> for Vec<(f64, f64)> {
    fn from(m: DiscreteMeasure) -> Self {
        m.atoms.iter().map(|a| (a.position, a.weight)).collect()
    }
}

/// Outcome of a convex-order test between two marginals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexOrderCheck {
    pub ordered: bool,
    /// A point where `U_lo > U_hi`, when the order fails.
    pub witness: Option<f64>,
    /// `min (U_hi - U_lo)` over the check points.
    pub margin: f64,
}

pub fn check_convex_order(lo: &DiscreteMeasure, hi: &DiscreteMeasure) -> Result<ConvexOrderCheck> {
    if (lo.mean() - hi.mean()).abs() > MEAN_TOL {
        return Err(Error::MeanMismatch {
            lo: lo.mean(),
            hi: hi.mean(),
        });
    }
    let mut points: Vec<f64> = lo.positions().chain(hi.positions()).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut margin = f64::INFINITY;
    let mut witness = None;
    let mut worst = f64::INFINITY;
    for &x in &points {
        let gap = hi.potential(x) - lo.potential(x);
        margin = margin.min(gap);
        if gap < -ORDER_TOL && gap < worst {
            worst = gap;
            witness = Some(x);
        }
    }
    Ok(ConvexOrderCheck {
        ordered: witness.is_none(),
        witness,
        margin,
    })
}

/// First Wasserstein distance `∫₀¹ |F_a⁻¹(u) - F_b⁻¹(u)| du`, computed by
/// merging the two quantile functions.
pub fn wasserstein1(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    let (xa, xb) = (a.atoms(), b.atoms());
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ca, mut cb) = (xa[0].weight, xb[0].weight);
    let mut u = 0.0;
    let mut total = 0.0;
    loop {
        let next = ca.min(cb);
        total += (next - u) * (xa[i].position - xb[j].position).abs();
        u = next;
        let a_done = ca <= next && i + 1 == xa.len();
        let b_done = cb <= next && j + 1 == xb.len();
        if a_done || b_done {
            break;
        }
        if ca <= next && i + 1 < xa.len() {
            i += 1;
            ca += xa[i].weight;
        }
        if cb <= next && j + 1 < xb.len() {
            j += 1;
            cb += xb[j].weight;
        }
    }
    total
}

/// Pairwise margins of a marginal vector, as reported by `check-peacock`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeacockReport {
    pub means: Vec<f64>,
    pub centered: bool,
    pub pairs: Vec<ConvexOrderCheck>,
    pub valid: bool,
}

/// A vector of marginals `μ_1, …, μ_n`.
///
/// [`PeacockVector::new`] only accepts centered vectors increasing in convex
/// order, which is exactly when an embedding exists.
/// [`PeacockVector::unchecked`] keeps arbitrary vectors so that infeasible
/// instances can still be handed to the primal solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeacockVector {
    measures: Vec<DiscreteMeasure>,
    centered: bool,
}

impl PeacockVector {
    pub fn new(measures: Vec<DiscreteMeasure>) -> Result<Self> {
        if measures.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        for (index, m) in measures.iter().enumerate() {
            if m.mean().abs() > MEAN_TOL {
                return Err(Error::NotCentered { index, mean: m.mean() });
            }
        }
        for (index, pair) in measures.windows(2).enumerate() {
            let check = check_convex_order(&pair[0], &pair[1])?;
            if let Some(witness) = check.witness {
                return Err(Error::NotConvexOrdered { index, witness });
            }
        }
        Ok(Self {
            measures,
            centered: true,
        })
    }

    pub fn unchecked(measures: Vec<DiscreteMeasure>) -> Result<Self> {
        if measures.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let centered = measures.iter().all(|m| m.mean().abs() <= MEAN_TOL);
        Ok(Self { measures, centered })
    }

    pub fn report(measures: &[DiscreteMeasure]) -> PeacockReport {
        let means: Vec<f64> = measures.iter().map(DiscreteMeasure::mean).collect();
        let centered = means.iter().all(|m| m.abs() <= MEAN_TOL);
        let pairs: Vec<ConvexOrderCheck> = measures
            .windows(2)
            .map(|p| {
                check_convex_order(&p[0], &p[1]).unwrap_or(ConvexOrderCheck {
                    ordered: false,
                    witness: None,
                    margin: f64::NEG_INFINITY,
                })
            })
            .collect();
        let valid = centered && pairs.iter().all(|c| c.ordered);
        PeacockReport {
            means,
            centered,
            pairs,
            valid,
        }
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn get(&self, k: usize) -> &DiscreteMeasure {
        &self.measures[k]
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn last(&self) -> &DiscreteMeasure {
        &self.measures[self.measures.len() - 1]
    }

    /// Snaps every marginal onto the grid `spacing·ℤ`; returns the snapped
    /// vector and the per-marginal W1 snapping errors.
    pub fn snap_to_grid(&self, spacing: f64) -> Result<(Self, Vec<f64>)> {
        let mut measures = Vec::with_capacity(self.len());
        let mut errors = Vec::with_capacity(self.len());
        for m in &self.measures {
            let (s, e) = m.snap_to_grid(spacing)?;
            measures.push(s);
            errors.push(e);
        }
        let centered = measures.iter().all(|m| m.mean().abs() <= MEAN_TOL);
        Ok((Self { measures, centered }, errors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> DiscreteMeasure {
        DiscreteMeasure::new([(1.0, 0.5), (-1.0, 0.5)]).unwrap()
    }

    #[test]
    fn construction_examples() {
        let d = DiscreteMeasure::new([(0.0, 1.0)]).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.mean(), 0.0);

        let m = two_point();
        assert_eq!(m.atoms()[0].position, -1.0);
        assert_eq!(m.mean(), 0.0);

        let three = DiscreteMeasure::new([(0.0, 0.4), (1.0, 0.3), (-1.0, 0.3)]).unwrap();
        assert_eq!(three.len(), 3);
        assert!(three.mean().abs() < 1e-15);
    }

    #[test]
    fn merges_and_drops() {
        let m = DiscreteMeasure::new([(1.0, 0.25), (1.0, 0.25), (-1.0, 0.5), (3.0, 0.0)]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.weight_at(1.0), 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            DiscreteMeasure::new(Vec::<(f64, f64)>::new()),
            Err(Error::EmptyMeasure)
        ));
        assert!(matches!(DiscreteMeasure::new([(0.0, 0.0)]), Err(Error::EmptyMeasure)));
        assert!(matches!(
            DiscreteMeasure::new([(0.0, 0.5), (1.0, 0.4)]),
            Err(Error::WeightSumMismatch { .. })
        ));
        assert!(matches!(
            DiscreteMeasure::new([(0.0, -1.0)]),
            Err(Error::InvalidAtom { .. })
        ));
        // within tolerance: renormalized
        let m = DiscreteMeasure::new([(0.0, 0.5 + 4e-10), (1.0, 0.5)]).unwrap();
        let s: f64 = m.atoms().iter().map(|a| a.weight).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn convex_order_examples() {
        let d0 = DiscreteMeasure::dirac(0.0);
        let m = two_point();
        assert!(check_convex_order(&d0, &m).unwrap().ordered);
        let rev = check_convex_order(&m, &d0).unwrap();
        assert!(!rev.ordered);
        assert_eq!(rev.witness, Some(0.0));
        assert_eq!(m.potential(0.0), 1.0);
        assert_eq!(d0.potential(0.0), 0.0);
        assert!(check_convex_order(&m, &m).unwrap().ordered);
        let shifted = DiscreteMeasure::dirac(0.5);
        assert!(matches!(
            check_convex_order(&d0, &shifted),
            Err(Error::MeanMismatch { .. })
        ));
    }

    #[test]
    fn integrate_examples() {
        assert_eq!(two_point().integrate(f64::abs).unwrap(), 1.0);
        assert_eq!(DiscreteMeasure::dirac(0.0).integrate(|x| 3.0 + x).unwrap(), 3.0);
        let grid: Vec<f64> = (0..201).map(|i| -1.0 + i as f64 / 100.0).collect();
        let u = DiscreteMeasure::uniform(&grid).unwrap();
        // Riemann-sum oracle: mean of x² over the grid.
        let oracle: f64 = grid.iter().map(|x| x * x).sum::<f64>() / 201.0;
        let got = u.integrate(|x| x * x).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 1.0 / 3.0).abs() < 1e-2);
        assert!(matches!(
            two_point().integrate(|x| 1.0 / (x - 1.0)),
            Err(Error::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn wasserstein_examples() {
        let m = two_point();
        assert_eq!(wasserstein1(&m, &m), 0.0);
        assert_eq!(
            wasserstein1(&DiscreteMeasure::dirac(0.0), &DiscreteMeasure::dirac(1.0)),
            1.0
        );
        assert_eq!(wasserstein1(&m, &DiscreteMeasure::dirac(0.0)), 1.0);
        let a = DiscreteMeasure::new([(0.0, 0.3), (2.0, 0.7)]).unwrap();
        let b = DiscreteMeasure::new([(1.0, 0.6), (3.0, 0.4)]).unwrap();
        // CDF-difference oracle: ∫|F_a - F_b| on [0,3].
        let oracle = 1.0 * 0.3 + 1.0 * (0.6 - 0.3) + 1.0 * (1.0 - 0.6);
        assert!((wasserstein1(&a, &b) - oracle).abs() < 1e-14);
        assert!((wasserstein1(&b, &a) - oracle).abs() < 1e-14);
    }

    #[test]
    fn snapping_keeps_mean_and_order() {
        let m = DiscreteMeasure::new([(-0.33, 0.5), (0.33, 0.5)]).unwrap();
        let wide = DiscreteMeasure::new([(-0.71, 0.5), (0.71, 0.5)]).unwrap();
        let p = PeacockVector::new(vec![m, wide]).unwrap();
        let (snapped, errs) = p.snap_to_grid(0.1).unwrap();
        assert!(snapped.is_centered());
        assert!(errs.iter().all(|&e| e > 0.0 && e < 0.1));
        PeacockVector::new(snapped.measures().to_vec()).unwrap();
        for a in snapped.get(0).atoms() {
            let r = a.position / 0.1;
            assert!((r - r.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn peacock_validation() {
        let d0 = DiscreteMeasure::dirac(0.0);
        let m = two_point();
        assert!(PeacockVector::new(vec![d0.clone(), m.clone()]).is_ok());
        assert!(matches!(
            PeacockVector::new(vec![m.clone(), d0.clone()]),
            Err(Error::NotConvexOrdered { index: 0, .. })
        ));
        let off = DiscreteMeasure::new([(1.0, 0.5), (0.0, 0.5)]).unwrap();
        assert!(matches!(PeacockVector::new(vec![off]), Err(Error::NotCentered { .. })));
        let report = PeacockVector::report(&[m, d0]);
        assert!(!report.valid);
        assert!(report.pairs[0].margin < 0.0);
    }

    #[test]
    fn json_pairs() {
        let m: DiscreteMeasure = serde_json::from_str("[[1.0, 0.5], [-1.0, 0.5]]").unwrap();
        assert_eq!(m, two_point());
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[-1.0,0.5],[1.0,0.5]]");
        assert!(serde_json::from_str::<DiscreteMeasure>("[[1.0, 0.2]]").is_err());
    }
}
