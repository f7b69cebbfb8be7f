//! Dense two-phase tableau simplex over non-negative variables.
//!
//! Sized for the mechanism programs here (a few hundred rows at most). Rows
//! are equilibrated before pivoting, pricing is Dantzig with a switch to
//! Bland's rule on degenerate runs, and the final basic solution is
//! recomputed from the original rows to shed accumulated pivoting error.
//! Everything is sequential, so a given system always yields the same point.

use super::{Relation, Row};
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;
const PHASE1_TOL: f64 = 1e-11;
const DEGENERATE_RUN: usize = 50;
const MAX_PIVOTS: usize = 200_000;

pub(crate) enum Outcome {
    Optimal(Vec<f64>),
    Infeasible,
}

struct Tableau {
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// Original row id of every tableau row.
    origin: Vec<usize>,
    rhs: usize,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) -> Result<()> {
        self.pivots += 1;
        if self.pivots > MAX_PIVOTS {
            return Err(Error::NumericalFailure(format!("simplex exceeded {MAX_PIVOTS} pivots")));
        }
        let inv = 1.0 / self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v *= inv;
        }
        self.t[r][c] = 1.0;
        let prow = std::mem::take(&mut self.t[r]);
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f == 0.0 {
                continue;
            }
            for (v, &p) in row.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            row[c] = 0.0;
        }
        self.t[r] = prow;
        self.basis[r] = c;
        Ok(())
    }

    /// Minimizes `cost · columns` over the allowed columns.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<()> {
        let ncols = self.rhs;
        let mut degenerate = 0;
        loop {
            let mut reduced = cost.to_vec();
            for (r, row) in self.t.iter().enumerate() {
                let cb = cost[self.basis[r]];
                if cb != 0.0 {
                    for (d, &v) in reduced.iter_mut().zip(&row[..ncols]) {
                        *d -= cb * v;
                    }
                }
            }
            for &b in &self.basis {
                reduced[b] = 0.0;
            }
            let bland = degenerate > DEGENERATE_RUN;
            let mut enter = None;
            let mut best = -COST_TOL;
            for j in (0..ncols).filter(|&j| allowed[j]) {
                if reduced[j] < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = reduced[j];
                }
            }
            let Some(c) = enter else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.t.len() {
                let a = self.t[r][c];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.t[r][self.rhs].max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((br, bv)) => {
                        let tie = (ratio - bv).abs() <= 1e-12 * (1.0 + bv.abs());
                        if (!tie && ratio < bv) || (tie && self.basis[r] < self.basis[br]) {
                            Some((r, ratio))
                        } else {
                            Some((br, bv))
                        }
                    }
                };
            }
            let Some((r, step)) = leave else {
                return Err(Error::NumericalFailure("linear program is unbounded".into()));
            };
            degenerate = if step <= 1e-12 { degenerate + 1 } else { 0 };
            self.pivot(r, c)?;
        }
    }
}

/// Minimizes `cost · x` (or finds any feasible point when `cost` is `None`)
/// subject to `rows` and `x ≥ 0`.
pub(crate) fn solve(num_vars: usize, rows: &[Row], cost: Option<&[f64]>) -> Result<Outcome> {
    let n = num_vars;
    let mut a = Vec::with_capacity(rows.len());
    let mut b = Vec::with_capacity(rows.len());
    let mut rel = Vec::with_capacity(rows.len());
    for row in rows {
        let s = row.coeffs.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
        if s == 0.0 {
            let ok = match row.relation {
                Relation::Le => row.bound >= -1e-12,
                Relation::Ge => row.bound <= 1e-12,
            };
            if ok {
                continue;
            }
            return Ok(Outcome::Infeasible);
        }
        let mut coeffs: Vec<f64> = row.coeffs.iter().map(|&c| c / s).collect();
        let mut bound = row.bound / s;
        let mut r = row.relation;
        if bound < 0.0 || (bound == 0.0 && r == Relation::Ge) {
            coeffs.iter_mut().for_each(|c| *c = -*c);
            bound = -bound;
            r = r.flip();
        }
        a.push(coeffs);
        b.push(bound);
        rel.push(r);
    }
    let m = a.len();
    let arts: Vec<usize> = (0..m).filter(|&i| rel[i] == Relation::Ge).collect();
    let ncols = n + m + arts.len();
    let rhs = ncols;

    let mut t = vec![vec![0.0; ncols + 1]; m];
    let mut basis = vec![0; m];
    for i in 0..m {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][rhs] = b[i];
        match rel[i] {
            Relation::Le => {
                t[i][n + i] = 1.0;
                basis[i] = n + i;
            }
            Relation::Ge => t[i][n + i] = -1.0,
        }
    }
    for (l, &i) in arts.iter().enumerate() {
        t[i][n + m + l] = 1.0;
        basis[i] = n + m + l;
    }
    let original = t.clone();
    let mut tab = Tableau { t, basis, origin: (0..m).collect(), rhs, pivots: 0 };
    let is_art = |j: usize| j >= n + m;

    if !arts.is_empty() {
        let mut cost1 = vec![0.0; ncols];
        cost1[n + m..].iter_mut().for_each(|c| *c = 1.0);
        tab.optimize(&cost1, &vec![true; ncols])?;
        let w: f64 = (0..tab.t.len()).filter(|&r| is_art(tab.basis[r])).map(|r| tab.t[r][rhs]).sum();
        if w > PHASE1_TOL {
            return Ok(Outcome::Infeasible);
        }
        // drive remaining artificials out, dropping rows that turn out redundant
        let mut r = 0;
        while r < tab.t.len() {
            if !is_art(tab.basis[r]) {
                r += 1;
                continue;
            }
            let pick = (0..n + m)
                .filter(|&j| tab.t[r][j].abs() > 1e-9)
                .max_by(|&x, &y| tab.t[r][x].abs().total_cmp(&tab.t[r][y].abs()).then(y.cmp(&x)));
            match pick {
                Some(c) => {
                    tab.pivot(r, c)?;
                    r += 1;
                }
                None => {
                    tab.t.remove(r);
                    tab.basis.remove(r);
                    tab.origin.remove(r);
                }
            }
        }
    }

    if let Some(c) = cost {
        let mut cost2 = vec![0.0; ncols];
        cost2[..n].copy_from_slice(c);
        let allowed: Vec<bool> = (0..ncols).map(|j| !is_art(j)).collect();
        tab.optimize(&cost2, &allowed)?;
    }

    let mut x = vec![0.0; n];
    let values = refine(&original, &tab).unwrap_or_else(|| tab.t.iter().map(|row| row[rhs]).collect());
    for (r, &j) in tab.basis.iter().enumerate() {
        if j < n {
            x[j] = values[r].max(0.0);
        }
    }
    Ok(Outcome::Optimal(x))
}

/// Re-solves `B x_B = b` against the untouched rows.
fn refine(original: &[Vec<f64>], tab: &Tableau) -> Option<Vec<f64>> {
    let m = tab.basis.len();
    let mut mat: Vec<Vec<f64>> = tab
        .origin
        .iter()
        .map(|&i| {
            let mut row: Vec<f64> = tab.basis.iter().map(|&j| original[i][j]).collect();
            row.push(original[i][tab.rhs]);
            row
        })
        .collect();
    for col in 0..m {
        let p = (col..m).max_by(|&x, &y| mat[x][col].abs().total_cmp(&mat[y][col].abs()))?;
        if mat[p][col].abs() < 1e-12 {
            return None;
        }
        mat.swap(col, p);
        let (top, rest) = mat.split_at_mut(col + 1);
        let pivot = &top[col];
        for row in rest.iter_mut() {
            let f = row[col] / pivot[col];
            if f != 0.0 {
                row[col..=m].iter_mut().zip(&pivot[col..=m]).for_each(|(x, y)| *x -= f * y);
            }
        }
    }
    let mut out = vec![0.0; m];
    for r in (0..m).rev() {
        let s: f64 = (r + 1..m).map(|c| mat[r][c] * out[c]).sum();
        out[r] = (mat[r][m] - s) / mat[r][r];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}
