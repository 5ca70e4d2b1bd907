//! Sparse LU factorization with Markowitz pivot selection.
//!
//! Right-looking elimination on the active submatrix. Pivots are chosen
//! among the few sparsest columns, subject to threshold partial pivoting
//! `|a_pq| ≥ u · max_i |a_iq|`, minimizing `(r_p − 1)(c_q − 1)`.

use crate::error::{Error, Result};

const THRESHOLD: f64 = 0.1;
const SEARCH_COLUMNS: usize = 4;
const SINGULAR_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
struct Step {
    row: usize,
    col: usize,
    pivot: f64,
    /// Row multipliers applied below the pivot.
    lower: Vec<(usize, f64)>,
    /// Remaining entries of the pivot row.
    upper: Vec<(usize, f64)>,
}

/// Factorization of a square sparse matrix given by columns.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    steps: Vec<Step>,
}

impl SparseLu {
    pub fn factor(n: usize, columns: &[Vec<(usize, f64)>]) -> Result<Self> {
        debug_assert_eq!(columns.len(), n);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, col) in columns.iter().enumerate() {
            for &(i, v) in col {
                if v != 0.0 {
                    rows[i].push((j, v));
                    col_rows[j].push(i);
                }
            }
        }
        let mut col_count: Vec<usize> = col_rows.iter().map(Vec::len).collect();
        let mut row_active = vec![true; n];
        let mut col_active = vec![true; n];
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n + 2];
        for j in 0..n {
            buckets[col_count[j].min(n + 1)].push(j);
        }
        let mut lowest = 0usize;
        let mut pos = vec![usize::MAX; n];
        let mut steps = Vec::with_capacity(n);

        for _ in 0..n {
            // pivot search over the sparsest columns
            let mut best: Option<(usize, usize, f64, usize)> = None; // row, col, value, cost
            let mut examined = 0;
            let mut c = lowest;
            'search: while c <= n + 1 {
                let mut idx = 0;
                while idx < buckets[c].len() {
                    let j = buckets[c][idx];
                    if !col_active[j] || col_count[j] != c {
                        buckets[c].swap_remove(idx);
                        continue;
                    }
                    idx += 1;
                    if c == 0 {
                        return Err(Error::SingularBasis);
                    }
                    let entries: Vec<(usize, f64)> = col_rows[j]
                        .iter()
                        .filter(|&&i| row_active[i])
                        .map(|&i| (i, rows[i].iter().find(|e| e.0 == j).map_or(0.0, |e| e.1)))
                        .collect();
                    let max = entries.iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
                    if max < SINGULAR_TOL {
                        continue;
                    }
                    for &(i, v) in &entries {
                        if v.abs() >= THRESHOLD * max {
                            let cost = (rows[i].len() - 1) * (c - 1);
                            let better = match best {
                                None => true,
                                Some((_, _, bv, bc)) => cost < bc || (cost == bc && v.abs() > bv.abs()),
                            };
                            if better {
                                best = Some((i, j, v, cost));
                            }
                        }
                    }
                    examined += 1;
                    if matches!(best, Some((_, _, _, 0))) || examined >= SEARCH_COLUMNS {
                        break 'search;
                    }
                }
                if best.is_some() && c >= 2 {
                    break;
                }
                c += 1;
            }
            let Some((p, q, a, _)) = best else {
                return Err(Error::SingularBasis);
            };
            lowest = lowest.saturating_sub(1);

            let upper: Vec<(usize, f64)> = rows[p].iter().copied().filter(|e| e.0 != q).collect();
            row_active[p] = false;
            col_active[q] = false;
            for &(cj, _) in &upper {
                col_count[cj] -= 1;
            }
            let mut lower = Vec::new();
            let targets: Vec<usize> = col_rows[q].iter().copied().filter(|&i| row_active[i]).collect();
            for i in targets {
                let Some(k) = rows[i].iter().position(|e| e.0 == q) else {
                    continue;
                };
                let v = rows[i].swap_remove(k).1;
                let m = v / a;
                lower.push((i, m));
                for (idx, e) in rows[i].iter().enumerate() {
                    pos[e.0] = idx;
                }
                for &(cj, u) in &upper {
                    if pos[cj] != usize::MAX {
                        rows[i][pos[cj]].1 -= m * u;
                    } else {
                        rows[i].push((cj, -m * u));
                        col_rows[cj].push(i);
                        col_count[cj] += 1;
                    }
                }
                for e in &rows[i] {
                    pos[e.0] = usize::MAX;
                }
            }
            for &(cj, _) in &upper {
                let cnt = col_count[cj].min(n + 1);
                buckets[cnt].push(cj);
                lowest = lowest.min(cnt);
            }
            rows[p].clear();
            col_rows[q].clear();
            steps.push(Step {
                row: p,
                col: q,
                pivot: a,
                lower,
                upper,
            });
        }
        Ok(Self { n, steps })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `B x = b`; `b` is indexed by row and consumed, `x` by column.
    pub fn solve(&self, b: &mut [f64], x: &mut [f64]) {
        for s in &self.steps {
            let xp = b[s.row];
            if xp != 0.0 {
                for &(i, m) in &s.lower {
                    b[i] -= m * xp;
                }
            }
        }
        for s in self.steps.iter().rev() {
            let mut v = b[s.row];
            for &(c, u) in &s.upper {
                v -= u * x[c];
            }
            x[s.col] = v / s.pivot;
        }
    }

    /// Solves `Bᵀ y = d`; `d` is indexed by column and consumed, `y` by row.
    pub fn solve_transpose(&self, d: &mut [f64], y: &mut [f64]) {
        for s in &self.steps {
            let w = d[s.col] / s.pivot;
            y[s.row] = w;
            if w != 0.0 {
                for &(c, u) in &s.upper {
                    d[c] -= u * w;
                }
            }
        }
        for s in self.steps.iter().rev() {
            let mut acc = 0.0;
            for &(i, m) in &s.lower {
                acc += m * y[i];
            }
            y[s.row] -= acc;
        }
    }

    pub fn fill(&self) -> usize {
        self.steps.iter().map(|s| 1 + s.lower.len() + s.upper.len()).sum()
    }
}
