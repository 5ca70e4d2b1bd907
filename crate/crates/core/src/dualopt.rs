//! Minimization of the dual objective
//! `f(λ) = sup_τ E[Φ(B, τ) − Σ_k λ_k(B_{τ_k})] + Σ_k μ_k(λ_k)`
//! over piecewise-linear potentials.
//!
//! `f` is a pointwise supremum of affine functions of `λ`, hence convex, and
//! `μ_k − ν_k` is a subgradient when `ν_k` is the `k`-th stopped law of an
//! optimal inner rule. Adding a constant to `λ_k` leaves `f` unchanged.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::measures::PeacockVector;
use crate::multistop::{forward_masses, multi_stopping_value, stopped_laws, MultiStopSolution};

/// `λ = (λ_1, …, λ_n)`, each piecewise linear through its strikes and
/// extended linearly beyond them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPotential {
    pub strikes: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl DualPotential {
    pub fn new(strikes: Vec<Vec<f64>>, values: Vec<Vec<f64>>) -> Result<Self> {
        if strikes.len() != values.len() {
            return Err(Error::InvalidPotential(
                "strike and value lists differ in length".into(),
            ));
        }
        for (k, (s, v)) in strikes.iter().zip(&values).enumerate() {
            if s.is_empty() || s.len() != v.len() {
                return Err(Error::InvalidPotential(format!("marginal {k}: bad strike grid")));
            }
            if s.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidPotential(format!("marginal {k}: strikes not increasing")));
            }
            if s.iter().chain(v).any(|x| !x.is_finite()) {
                return Err(Error::InvalidPotential(format!("marginal {k}: non-finite entry")));
            }
        }
        Ok(Self { strikes, values })
    }

    pub fn zeros(strikes: Vec<Vec<f64>>) -> Self {
        let values = strikes.iter().map(|s| vec![0.0; s.len()]).collect();
        Self { strikes, values }
    }

    /// Zero potential on the default strike grid of `inst`.
    pub fn zeros_for(inst: &Instance) -> Self {
        Self::zeros(strike_grid(inst))
    }

    /// Samples `f(k, x)` on the default strike grid of `inst`.
    pub fn from_fn(inst: &Instance, f: impl Fn(usize, f64) -> f64) -> Self {
        let strikes = strike_grid(inst);
        let values = strikes
            .iter()
            .enumerate()
            .map(|(k, s)| s.iter().map(|&x| f(k, x)).collect())
            .collect();
        Self { strikes, values }
    }

    pub fn arity(&self) -> usize {
        self.strikes.len()
    }

    pub fn dimension(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// Interpolation weights `(strike index, weight)` of `x`; they sum to one
    /// and reproduce `λ_k(x)` linearly, extrapolation included.
    pub fn hat_weights(&self, k: usize, x: f64) -> [(usize, f64); 2] {
        let s = &self.strikes[k];
        if s.len() == 1 {
            return [(0, 1.0), (0, 0.0)];
        }
        let seg = if x <= s[0] {
            0
        } else if x >= s[s.len() - 1] {
            s.len() - 2
        } else {
            s.partition_point(|&q| q <= x) - 1
        };
        let t = (x - s[seg]) / (s[seg + 1] - s[seg]);
        if t == 0.0 {
            return [(seg, 1.0), (seg + 1, 0.0)];
        }
        if t == 1.0 {
            return [(seg, 0.0), (seg + 1, 1.0)];
        }
        [(seg, 1.0 - t), (seg + 1, t)]
    }

    pub fn eval(&self, k: usize, x: f64) -> f64 {
        let v = &self.values[k];
        let [(i, a), (j, b)] = self.hat_weights(k, x);
        if b == 0.0 {
            return v[i];
        }
        if a == 0.0 {
            return v[j];
        }
        a * v[i] + b * v[j]
    }

    /// `Σ_k μ_k(λ_k)`.
    pub fn integrate(&self, mu: &PeacockVector) -> f64 {
        (0..self.arity())
            .map(|k| {
                mu.get(k)
                    .atoms()
                    .iter()
                    .map(|a| a.weight * self.eval(k, a.position))
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn shifted(&self, k: usize, c: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values[k] {
            *v += c;
        }
        out
    }

    /// Moves each `λ_k` by a constant so that its smallest value is zero.
    /// The objective is unchanged, so this is the projection onto `Λ⁺` that
    /// does not move the iterate in objective space.
    pub fn normalize_nonnegative(&mut self) {
        for v in &mut self.values {
            let m = v.iter().copied().fold(f64::INFINITY, f64::min);
            for x in v.iter_mut() {
                *x -= m;
            }
        }
    }

    fn axpy(&mut self, a: f64, g: &[Vec<f64>]) {
        for (v, d) in self.values.iter_mut().zip(g) {
            for (x, y) in v.iter_mut().zip(d) {
                *x += a * y;
            }
        }
    }
}

/// Strike grid: the admissible stop levels of each phase.
pub fn strike_grid(inst: &Instance) -> Vec<Vec<f64>> {
    let h = inst.h();
    inst.phases
        .iter()
        .zip(&inst.stop_levels)
        .map(|(g, stops)| match stops {
            Some(levels) => levels.iter().map(|&l| l as f64 * h).collect(),
            None => (g.window.0..=g.window.1).map(|l| l as f64 * h).collect(),
        })
        .collect()
}

fn check_arity(inst: &Instance, lam: &DualPotential, mu: &PeacockVector) -> Result<()> {
    if lam.arity() != inst.arity() || mu.len() != inst.arity() {
        return Err(Error::ArityMismatch {
            expected: inst.arity(),
            got: lam.arity().min(mu.len()),
        });
    }
    Ok(())
}

pub fn dual_objective(inst: &Instance, lam: &DualPotential, mu: &PeacockVector) -> Result<f64> {
    check_arity(inst, lam, mu)?;
    Ok(multi_stopping_value(inst, lam)?.value + lam.integrate(mu))
}

/// Objective, subgradient and the inner solution at one potential.
#[derive(Debug, Clone)]
pub struct DualEvaluation {
    pub objective: f64,
    pub inner: MultiStopSolution,
    /// `μ_k(hat_i) − ν_k(hat_i)` per marginal and strike.
    pub subgradient: Vec<Vec<f64>>,
    /// Stopped laws of the inner optimizer by level.
    pub laws: Vec<Vec<(i64, f64)>>,
}

pub fn evaluate(inst: &Instance, lam: &DualPotential, mu: &PeacockVector) -> Result<DualEvaluation> {
    check_arity(inst, lam, mu)?;
    let inner = multi_stopping_value(inst, lam)?;
    let masses = forward_masses(inst, &inner.policy);
    let laws = stopped_laws(inst, &masses);
    let h = inst.h();
    let mut g: Vec<Vec<f64>> = lam.strikes.iter().map(|s| vec![0.0; s.len()]).collect();
    for k in 0..inst.arity() {
        for a in mu.get(k).atoms() {
            for (i, w) in lam.hat_weights(k, a.position) {
                g[k][i] += a.weight * w;
            }
        }
        for &(level, mass) in &laws[k] {
            for (i, w) in lam.hat_weights(k, level as f64 * h) {
                g[k][i] -= mass * w;
            }
        }
    }
    Ok(DualEvaluation {
        objective: inner.value + lam.integrate(mu),
        inner,
        subgradient: g,
        laws,
    })
}

pub fn subgradient(inst: &Instance, lam: &DualPotential, mu: &PeacockVector) -> Result<Vec<Vec<f64>>> {
    Ok(evaluate(inst, lam, mu)?.subgradient)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepRule {
    /// `a / √k` along the raw subgradient, with
    /// `a = scale · max(|f(λ₀)|, 1) / ‖g₀‖`.
    InvSqrt {
        #[serde(default = "unit")]
        scale: f64,
    },
    /// Polyak's step `(f − target) / ‖g‖²` towards a known lower bound of the
    /// optimum, such as the primal LP value.
    Polyak { target: f64 },
}

fn unit() -> f64 {
    1.0
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::InvSqrt { scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualConfig {
    pub iterations: usize,
    pub step: StepRule,
    /// Keep every `λ_k ≥ 0` on its strikes.
    pub nonnegative: bool,
    /// Stop once the subgradient norm or the Polyak gap drops below this.
    pub tolerance: f64,
    #[serde(skip)]
    pub initial: Option<DualPotential>,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            step: StepRule::default(),
            nonnegative: true,
            tolerance: 1e-12,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub objective: f64,
    pub best: f64,
}

#[derive(Debug, Clone)]
pub struct DualResult {
    /// Smallest objective seen: an upper bound on the optimal value.
    pub best_value: f64,
    pub best_lambda: DualPotential,
    pub history: Vec<HistoryRow>,
}

/// Projected subgradient descent with running-best tracking.
pub fn minimize_dual(inst: &Instance, mu: &PeacockVector, config: &DualConfig) -> Result<DualResult> {
    let mut lam = config.initial.clone().unwrap_or_else(|| DualPotential::zeros_for(inst));
    if config.nonnegative {
        lam.normalize_nonnegative();
    }
    let mut best_value = f64::INFINITY;
    let mut best_lambda = lam.clone();
    let mut history = Vec::with_capacity(config.iterations);
    let mut a0 = None;
    for it in 1..=config.iterations.max(1) {
        let e = evaluate(inst, &lam, mu)?;
        if e.objective < best_value {
            best_value = e.objective;
            best_lambda = lam.clone();
        }
        history.push(HistoryRow {
            iteration: it,
            objective: e.objective,
            best: best_value,
        });
        log::info!(
            "dual iteration {it}: objective {:.12} best {:.12}",
            e.objective,
            best_value
        );
        let norm2: f64 = e.subgradient.iter().flatten().map(|x| x * x).sum();
        if norm2.sqrt() <= config.tolerance {
            break;
        }
        let step = match config.step {
            StepRule::InvSqrt { scale } => {
                let a = *a0.get_or_insert_with(|| scale * e.objective.abs().max(1.0) / norm2.sqrt());
                a / (it as f64).sqrt()
            }
            StepRule::Polyak { target } => {
                let gap = e.objective - target;
                if gap <= config.tolerance {
                    break;
                }
                gap / norm2
            }
        };
        // descend: f decreases along -g
        lam.axpy(-step, &e.subgradient);
        if config.nonnegative {
            lam.normalize_nonnegative();
        }
    }
    Ok(DualResult {
        best_value,
        best_lambda,
        history,
    })
}

pub fn write_history_csv(history: &[HistoryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "iteration,objective,best")?;
    for r in history {
        writeln!(out, "{},{:e},{:e}", r.iteration, r.objective, r.best)?;
    }
    crate::report::write_atomic(path.as_ref(), &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::StopRule;
    use crate::lattice::{Augment, Clock, Lattice};
    use crate::measures::DiscreteMeasure;
    use crate::payoffs::PayoffSpec;

    fn three_atom() -> (Instance, PeacockVector) {
        let mu = PeacockVector::new(vec![DiscreteMeasure::new([
            (-1.0, 1.0 / 3.0),
            (0.0, 1.0 / 3.0),
            (1.0, 1.0 / 3.0),
        ])
        .unwrap()])
        .unwrap();
        let l = Lattice::new(400, 1.0 / 100.0, Clock::Saturating, Augment::NONE).unwrap();
        let inst = Instance::for_marginals(&l, &PayoffSpec::stop_indicator(), &mu, StopRule::Support).unwrap();
        (inst, mu)
    }

    #[test]
    fn interpolation() {
        let lam = DualPotential::new(vec![vec![-1.0, 0.0, 2.0]], vec![vec![1.0, 0.0, 4.0]]).unwrap();
        assert_eq!(lam.eval(0, -0.5), 0.5);
        assert_eq!(lam.eval(0, 1.0), 2.0);
        assert_eq!(lam.eval(0, 3.0), 6.0);
        assert_eq!(lam.eval(0, -2.0), 2.0);
        assert!(DualPotential::new(vec![vec![0.0, 0.0]], vec![vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn objective_examples() {
        let (inst, mu) = three_atom();
        let zero = DualPotential::zeros_for(&inst);
        assert_eq!(dual_objective(&inst, &zero, &mu).unwrap(), 1.0);
        let shifted = zero.shifted(0, 0.7);
        assert!((dual_objective(&inst, &shifted, &mu).unwrap() - 1.0).abs() < 1e-12);

        let l = Lattice::new(100, 0.01, Clock::Saturating, Augment::NONE).unwrap();
        let z = Instance::for_marginals(&l, &PayoffSpec::zero(1), &mu, StopRule::Support).unwrap();
        assert_eq!(dual_objective(&z, &DualPotential::zeros_for(&z), &mu).unwrap(), 0.0);
    }

    #[test]
    fn subgradient_at_zero_for_the_indicator() {
        let (inst, mu) = three_atom();
        let lam = DualPotential::zeros_for(&inst);
        let g = subgradient(&inst, &lam, &mu).unwrap();
        let strikes = &lam.strikes[0];
        let at0 = strikes.iter().position(|&x| x == 0.0).unwrap();
        assert!((g[0][at0] + 2.0 / 3.0).abs() < 1e-12);
        for (i, v) in g[0].iter().enumerate() {
            if i != at0 {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_payoff_stays_at_zero() {
        let (_, mu) = three_atom();
        let l = Lattice::new(100, 0.01, Clock::Saturating, Augment::NONE).unwrap();
        let inst = Instance::for_marginals(&l, &PayoffSpec::zero(1), &mu, StopRule::Support).unwrap();
        let res = minimize_dual(&inst, &mu, &DualConfig::default()).unwrap();
        assert!(res.best_value.abs() < 1e-6);
        assert!(res.history.windows(2).all(|w| w[1].best <= w[0].best));
    }

    #[test]
    fn indicator_dual_approaches_one_third() {
        let (inst, mu) = three_atom();
        let cfg = DualConfig {
            iterations: 3000,
            ..DualConfig::default()
        };
        let res = minimize_dual(&inst, &mu, &cfg).unwrap();
        assert!((res.best_value - 1.0 / 3.0).abs() < 1e-2, "{}", res.best_value);
        assert!(res.best_value >= 1.0 / 3.0 - 1e-9);
    }
}
