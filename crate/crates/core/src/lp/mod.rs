//! Linear programs in equality form and a revised simplex solver.
//!
//! Problems are `max cᵀx  s.t.  Ax = b, x ≥ 0` with sparse columns. The
//! solver keeps the basis as a sparse LU factorization plus a product-form
//! eta file, refactoring periodically. Phase one minimizes the sum of
//! artificial variables; when it stops short of zero its duals form a
//! Farkas certificate `Aᵀy ≤ 0, bᵀy > 0`.

mod format;
mod lu;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::write_lp_format;
pub use lu::SparseLu;

/// Marker for "no column".
pub const NO_COLUMN: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub cost: f64,
    /// `(row, coefficient)` pairs.
    pub entries: Vec<(usize, f64)>,
}

/// `max cᵀx` subject to `Ax = b`, `x ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub row_names: Vec<String>,
    pub rhs: Vec<f64>,
    pub columns: Vec<Column>,
}

impl LinearProgram {
    pub fn add_row(&mut self, name: impl Into<String>, rhs: f64) -> usize {
        self.row_names.push(name.into());
        self.rhs.push(rhs);
        self.rhs.len() - 1
    }

    pub fn add_column(&mut self, name: impl Into<String>, cost: f64, entries: Vec<(usize, f64)>) -> usize {
        self.columns.push(Column {
            name: name.into(),
            cost,
            entries,
        });
        self.columns.len() - 1
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn nonzeros(&self) -> usize {
        self.columns.iter().map(|c| c.entries.len()).sum()
    }

    /// `Aᵀy` for a row vector `y`.
    pub fn transpose_product(&self, y: &[f64]) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| c.entries.iter().map(|&(i, v)| v * y[i]).sum())
            .collect()
    }

    /// `Ax − b`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.rhs.iter().map(|b| -b).collect();
        for (c, &xj) in self.columns.iter().zip(x) {
            if xj != 0.0 {
                for &(i, v) in &c.entries {
                    r[i] += v * xj;
                }
            }
        }
        r
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.columns.iter().zip(x).map(|(c, xj)| c.cost * xj).sum()
    }
}

/// Proof of infeasibility: `Aᵀy ≤ 0` and `bᵀy > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarkasCertificate {
    pub y: Vec<f64>,
    /// `bᵀy`, positive for a valid certificate.
    pub bty: f64,
    /// `max_j (Aᵀy)_j⁺`, zero up to rounding for a valid certificate.
    pub residual: f64,
}

impl FarkasCertificate {
    pub fn from_ray(lp: &LinearProgram, y: Vec<f64>) -> Self {
        let bty = lp.rhs.iter().zip(&y).map(|(b, y)| b * y).sum();
        let residual = lp.transpose_product(&y).into_iter().fold(0.0, f64::max);
        Self { y, bty, residual }
    }

    /// Whether the certificate proves infeasibility with margin `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        self.bty > tol && self.residual <= tol * self.bty.max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    pub tolerance: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500_000,
            refactor_every: 64,
            bland_after: 50,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// Row duals of the maximization: `Aᵀy ≥ c` and `bᵀy` equals the value.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub phase_one_iterations: usize,
    /// Basic column per row; `NO_COLUMN` where an artificial stayed basic
    /// on a redundant row.
    pub basis: Vec<usize>,
}

const PIVOT_TOL: f64 = 1e-9;
const DRIVE_OUT_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
struct Eta {
    pos: usize,
    pivot: f64,
    others: Vec<(usize, f64)>,
}

enum Outcome {
    Optimal,
    Unbounded,
}

struct Simplex<'a> {
    lp: &'a LinearProgram,
    opts: SimplexOptions,
    m: usize,
    n: usize,
    art_sign: Vec<f64>,
    basis: Vec<usize>,
    position: Vec<usize>,
    xb: Vec<f64>,
    lu: SparseLu,
    etas: Vec<Eta>,
    iterations: usize,
}

impl<'a> Simplex<'a> {
    fn column(&self, j: usize) -> Vec<(usize, f64)> {
        if j < self.n {
            self.lp.columns[j].entries.clone()
        } else {
            vec![(j - self.n, self.art_sign[j - self.n])]
        }
    }

    fn dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            self.lp.columns[j].entries.iter().map(|&(i, v)| v * y[i]).sum()
        } else {
            self.art_sign[j - self.n] * y[j - self.n]
        }
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.n
    }

    fn set_basis(&mut self, basis: Vec<usize>) {
        self.position = vec![NO_COLUMN; self.n + self.m];
        for (p, &j) in basis.iter().enumerate() {
            self.position[j] = p;
        }
        self.basis = basis;
    }

    fn refactor(&mut self) -> Result<()> {
        let cols: Vec<Vec<(usize, f64)>> = self.basis.iter().map(|&j| self.column(j)).collect();
        self.lu = SparseLu::factor(self.m, &cols)?;
        self.etas.clear();
        let b = self.lp.rhs.clone();
        self.xb = self.ftran_dense(b);
        let tol = self.opts.tolerance;
        for v in &mut self.xb {
            if *v < 0.0 && *v > -tol {
                *v = 0.0;
            }
        }
        Ok(())
    }

    fn ftran_dense(&self, mut b: Vec<f64>) -> Vec<f64> {
        let mut x = vec![0.0; self.m];
        self.lu.solve(&mut b, &mut x);
        for e in &self.etas {
            let xr = x[e.pos] / e.pivot;
            if xr != 0.0 {
                for &(i, a) in &e.others {
                    x[i] -= a * xr;
                }
            }
            x[e.pos] = xr;
        }
        x
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let mut b = vec![0.0; self.m];
        for (i, v) in self.column(j) {
            b[i] += v;
        }
        self.ftran_dense(b)
    }

    fn btran(&self, mut d: Vec<f64>) -> Vec<f64> {
        for e in self.etas.iter().rev() {
            let mut s = d[e.pos];
            for &(i, a) in &e.others {
                s -= a * d[i];
            }
            d[e.pos] = s / e.pivot;
        }
        let mut y = vec![0.0; self.m];
        self.lu.solve_transpose(&mut d, &mut y);
        y
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        self.btran(self.basis.iter().map(|&j| cost[j]).collect())
    }

    fn pivot(&mut self, q: usize, r: usize, alpha: Vec<f64>) -> Result<()> {
        let t = self.xb[r] / alpha[r];
        let tol = self.opts.tolerance;
        for (i, a) in alpha.iter().enumerate() {
            if *a != 0.0 && i != r {
                self.xb[i] -= t * a;
                if self.xb[i] < 0.0 && self.xb[i] > -tol {
                    self.xb[i] = 0.0;
                }
            }
        }
        self.xb[r] = t;
        let leaving = self.basis[r];
        self.position[leaving] = NO_COLUMN;
        self.position[q] = r;
        self.basis[r] = q;
        let others = alpha
            .iter()
            .enumerate()
            .filter(|&(i, a)| i != r && *a != 0.0)
            .map(|(i, &a)| (i, a))
            .collect();
        self.etas.push(Eta {
            pos: r,
            pivot: alpha[r],
            others,
        });
        self.iterations += 1;
        if self.etas.len() >= self.opts.refactor_every {
            self.refactor()?;
        }
        Ok(())
    }

    /// Minimizes `cost` over the current basis. Only structural columns
    /// may enter; basic artificials are held at zero when `pin` is set.
    fn run(&mut self, cost: &[f64], pin: bool) -> Result<Outcome> {
        let tol = self.opts.tolerance;
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return Err(Error::IterationLimit(self.iterations));
            }
            let y = self.duals(cost);
            let bland = degenerate >= self.opts.bland_after;
            let mut entering = None;
            let mut best = -tol;
            for j in 0..self.n {
                if self.position[j] != NO_COLUMN {
                    continue;
                }
                let d = cost[j] - self.dot(j, &y);
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(q) = entering else {
                return Ok(Outcome::Optimal);
            };
            let alpha = self.ftran(q);
            let mut leave: Option<(usize, f64)> = None;
            for (i, &a) in alpha.iter().enumerate() {
                let pinned = pin && self.is_artificial(self.basis[i]);
                let t = if pinned && a.abs() > PIVOT_TOL {
                    0.0
                } else if a > PIVOT_TOL {
                    self.xb[i].max(0.0) / a
                } else {
                    continue;
                };
                let better = match leave {
                    None => true,
                    Some((r, tr)) => {
                        if t < tr - 1e-12 * (1.0 + tr) {
                            true
                        } else if t <= tr + 1e-12 * (1.0 + tr) {
                            if bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                a.abs() > alpha[r].abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    leave = Some((i, t));
                }
            }
            let Some((r, t)) = leave else {
                return Ok(Outcome::Unbounded);
            };
            if t <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(q, r, alpha)?;
        }
    }

    /// Replaces basic artificials on nonredundant rows by structural columns.
    fn drive_out_artificials(&mut self) -> Result<()> {
        for r in 0..self.m {
            if !self.is_artificial(self.basis[r]) {
                continue;
            }
            let mut e = vec![0.0; self.m];
            e[r] = 1.0;
            let rho = self.btran(e);
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n {
                if self.position[j] != NO_COLUMN {
                    continue;
                }
                let a = self.dot(j, &rho).abs();
                if a > DRIVE_OUT_TOL && best.is_none_or(|(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            if let Some((q, _)) = best {
                let alpha = self.ftran(q);
                if alpha[r].abs() > DRIVE_OUT_TOL {
                    self.pivot(q, r, alpha)?;
                }
            }
        }
        Ok(())
    }
}

/// Solves `lp`. `crash` optionally names a structural column per row to
/// start from; rows without one, or an unusable crash, fall back to
/// artificials.
pub fn solve(lp: &LinearProgram, opts: &SimplexOptions, crash: Option<&[usize]>) -> Result<LpSolution> {
    let m = lp.num_rows();
    let n = lp.num_columns();
    let mut s = Simplex {
        lp,
        opts: *opts,
        m,
        n,
        art_sign: lp.rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect(),
        basis: Vec::new(),
        position: Vec::new(),
        xb: Vec::new(),
        lu: SparseLu::factor(0, &[])?,
        etas: Vec::new(),
        iterations: 0,
    };
    let artificial: Vec<usize> = (0..m).map(|i| n + i).collect();
    let mut started = false;
    if let Some(crash) = crash {
        if crash.len() == m && try_crash(&mut s, crash)? {
            started = true;
        } else {
            log::debug!("crash basis rejected, starting from artificials");
        }
    }
    if !started {
        s.art_sign = lp.rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
        s.set_basis(artificial);
        s.refactor()?;
    }

    // phase one
    let mut cost1 = vec![0.0; n + m];
    for c in cost1.iter_mut().skip(n) {
        *c = 1.0;
    }
    s.run(&cost1, false)?;
    let phase_one_iterations = s.iterations;
    let infeasibility: f64 = s
        .basis
        .iter()
        .zip(&s.xb)
        .filter(|(&j, _)| j >= n)
        .map(|(_, &x)| x)
        .sum();
    let scale = lp.rhs.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    if infeasibility > opts.tolerance * scale {
        let y = s.duals(&cost1);
        let cert = FarkasCertificate::from_ray(lp, y);
        log::info!(
            "infeasible: phase-one objective {infeasibility:.3e}, certificate bᵀy = {:.3e}, residual {:.1e}",
            cert.bty,
            cert.residual
        );
        return Err(Error::Infeasible(Box::new(cert)));
    }
    s.drive_out_artificials()?;

    // phase two
    let mut cost2 = vec![0.0; n + m];
    for (j, c) in lp.columns.iter().enumerate() {
        cost2[j] = -c.cost;
    }
    if let Outcome::Unbounded = s.run(&cost2, true)? {
        return Err(Error::Unbounded);
    }
    s.refactor()?;
    let mut x = vec![0.0; n];
    for (p, &j) in s.basis.iter().enumerate() {
        if j < n {
            x[j] = s.xb[p].max(0.0);
        }
    }
    let duals: Vec<f64> = s.duals(&cost2).into_iter().map(|v| -v).collect();
    let objective = lp.objective(&x);
    log::debug!(
        "simplex: {} rows, {} columns, {} iterations ({} in phase one), value {objective}",
        m,
        n,
        s.iterations,
        phase_one_iterations
    );
    Ok(LpSolution {
        x,
        duals,
        objective,
        iterations: s.iterations,
        phase_one_iterations,
        basis: s.basis.iter().map(|&j| if j < n { j } else { NO_COLUMN }).collect(),
    })
}

fn try_crash(s: &mut Simplex<'_>, crash: &[usize]) -> Result<bool> {
    let (n, m) = (s.n, s.m);
    let mut used = vec![false; n];
    let mut basis = Vec::with_capacity(m);
    for (i, &j) in crash.iter().enumerate() {
        if j < n && !used[j] {
            used[j] = true;
            basis.push(j);
        } else {
            basis.push(n + i);
        }
    }
    s.art_sign = vec![1.0; m];
    s.set_basis(basis);
    match s.refactor() {
        Ok(()) => {}
        Err(Error::SingularBasis) => return Ok(false),
        Err(e) => return Err(e),
    }
    let mut flipped = false;
    for p in 0..m {
        let j = s.basis[p];
        if s.xb[p] < -s.opts.tolerance {
            if j >= n {
                s.art_sign[j - n] = -1.0;
                flipped = true;
            } else {
                return Ok(false);
            }
        }
    }
    if flipped {
        s.refactor()?;
        if s.xb.iter().any(|&v| v < -s.opts.tolerance) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LinearProgram {
        // max x + y  s.t.  x + 2y + s1 = 4, 3x + y + s2 = 6
        let mut lp = LinearProgram::default();
        let r0 = lp.add_row("a", 4.0);
        let r1 = lp.add_row("b", 6.0);
        lp.add_column("x", 1.0, vec![(r0, 1.0), (r1, 3.0)]);
        lp.add_column("y", 1.0, vec![(r0, 2.0), (r1, 1.0)]);
        lp.add_column("s1", 0.0, vec![(r0, 1.0)]);
        lp.add_column("s2", 0.0, vec![(r1, 1.0)]);
        lp
    }

    #[test]
    fn textbook_optimum_and_duals() {
        let lp = small();
        let sol = solve(&lp, &SimplexOptions::default(), None).unwrap();
        assert!((sol.objective - 2.8).abs() < 1e-12);
        assert!((sol.x[0] - 1.6).abs() < 1e-12 && (sol.x[1] - 1.2).abs() < 1e-12);
        let by: f64 = lp.rhs.iter().zip(&sol.duals).map(|(b, y)| b * y).sum();
        assert!((by - sol.objective).abs() < 1e-12);
        for (c, a) in lp.columns.iter().zip(lp.transpose_product(&sol.duals)) {
            assert!(a >= c.cost - 1e-12);
        }
    }

    #[test]
    fn crash_basis_gives_same_answer() {
        let lp = small();
        let sol = solve(&lp, &SimplexOptions::default(), Some(&[2, 3])).unwrap();
        assert!((sol.objective - 2.8).abs() < 1e-12);
        // singular crash falls back
        let sol = solve(&lp, &SimplexOptions::default(), Some(&[2, 2])).unwrap();
        assert!((sol.objective - 2.8).abs() < 1e-12);
    }

    #[test]
    fn infeasible_has_certificate() {
        // x + y = 1, x + y = 2
        let mut lp = LinearProgram::default();
        let a = lp.add_row("a", 1.0);
        let b = lp.add_row("b", 2.0);
        lp.add_column("x", 1.0, vec![(a, 1.0), (b, 1.0)]);
        lp.add_column("y", 0.0, vec![(a, 1.0), (b, 1.0)]);
        match solve(&lp, &SimplexOptions::default(), None) {
            Err(Error::Infeasible(cert)) => assert!(cert.is_valid(1e-9), "{cert:?}"),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn unbounded_is_reported() {
        // max x  s.t.  x − y = 1
        let mut lp = LinearProgram::default();
        let a = lp.add_row("a", 1.0);
        lp.add_column("x", 1.0, vec![(a, 1.0)]);
        lp.add_column("y", 0.0, vec![(a, -1.0)]);
        assert!(matches!(
            solve(&lp, &SimplexOptions::default(), None),
            Err(Error::Unbounded)
        ));
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let mut lp = LinearProgram::default();
        let a = lp.add_row("a", 1.0);
        let b = lp.add_row("b", 1.0);
        lp.add_column("x", 2.0, vec![(a, 1.0), (b, 1.0)]);
        lp.add_column("y", 1.0, vec![(a, 1.0), (b, 1.0)]);
        let sol = solve(&lp, &SimplexOptions::default(), None).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_lps_satisfy_strong_duality() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let m = rng.gen_range(2..8);
            let n = rng.gen_range(m..3 * m);
            let mut lp = LinearProgram::default();
            // feasible by construction: b = A x0 with x0 ≥ 0; bounded by a budget row
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
            for i in 0..m {
                for c in cols.iter_mut() {
                    if rng.gen_bool(0.5) {
                        c.push((i, rng.gen_range(-1.0..1.0)));
                    }
                }
            }
            for c in cols.iter_mut() {
                c.push((m, 1.0));
            }
            let mut b = vec![0.0; m + 1];
            for (c, x) in cols.iter().zip(&x0) {
                for &(i, v) in c {
                    b[i] += v * x;
                }
            }
            for (i, bi) in b.iter().enumerate() {
                lp.add_row(format!("r{i}"), *bi);
            }
            for (j, c) in cols.into_iter().enumerate() {
                lp.add_column(format!("x{j}"), rng.gen_range(-1.0..1.0), c);
            }
            let sol = solve(&lp, &SimplexOptions::default(), None).unwrap();
            let res = lp.residual(&sol.x).into_iter().fold(0.0f64, |a, r| a.max(r.abs()));
            assert!(res < 1e-9);
            assert!(sol.objective >= lp.objective(&x0) - 1e-9);
            let by: f64 = lp.rhs.iter().zip(&sol.duals).map(|(b, y)| b * y).sum();
            assert!((by - sol.objective).abs() < 1e-8);
            for (c, a) in lp.columns.iter().zip(lp.transpose_product(&sol.duals)) {
                assert!(a >= c.cost - 1e-8);
            }
        }
    }
}
