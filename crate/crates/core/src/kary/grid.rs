//! Exhaustive grid search over small mechanisms.
//!
//! Used only to check the LP solver. Constraints are tested directly on the
//! matrix (pairwise LDP, both truthfulness directions, row sums, utility), so
//! nothing here shares code with the constraint assembly. Off-diagonals are
//! gridded over `[0, 1/2]`: row truthfulness gives `q_ij ≤ q_ii` and the two
//! sum to at most one.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{var_index, SolverConfig};
use crate::dist::JointDistribution;
use crate::error::{Error, Result};
use crate::mechanisms::check_epsilon;
use crate::rng::record_rng;

const MAX_K: usize = 3;
const MAX_STEPS: usize = 25;
const KEEP: usize = 6;
const STENCIL_BUDGET: usize = 20_000;
/// Random probes per seed and level, once in the box and once on the face.
const RANDOM_PROBES: usize = 20_000;
const PATTERN_ROUNDS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub entries: Vec<Vec<f64>>,
    pub objective: f64,
    /// Spacing of the coarsest grid.
    pub cell: f64,
}

struct Space<'a> {
    dist: &'a JointDistribution,
    k: usize,
    bound: f64,
    zeta: f64,
    tol: f64,
    /// Gradient of every slack with respect to the off-diagonals; slacks are
    /// affine in them, so differencing at the origin is exact.
    normals: Vec<Vec<f64>>,
}

impl<'a> Space<'a> {
    fn new(dist: &'a JointDistribution, bound: f64, zeta: f64) -> Self {
        let k = dist.k();
        let n = k * (k - 1);
        let mut space = Space { dist, k, bound, zeta, tol: 1e-12, normals: Vec::new() };
        let origin = space.slacks(&vec![0.0; n]);
        let columns: Vec<Vec<f64>> = (0..n)
            .map(|v| {
                let mut e = vec![0.0; n];
                e[v] = 1.0;
                space.slacks(&e).iter().zip(&origin).map(|(a, b)| a - b).collect()
            })
            .collect();
        space.normals = (0..origin.len()).map(|c| columns.iter().map(|col| col[c]).collect()).collect();
        space
    }

    /// Row-stochastic completion of the off-diagonals, unchecked.
    fn raw(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let k = self.k;
        let mut q = vec![vec![0.0; k]; k];
        for (i, row) in q.iter_mut().enumerate() {
            for j in (0..k).filter(|&j| j != i) {
                row[j] = x[var_index(k, i, j)];
            }
            row[i] = 1.0 - row.iter().sum::<f64>();
        }
        q
    }

    /// Feeds every constraint slack (non-negative when satisfied) to `f`,
    /// stopping early when `f` returns false: box bounds on off-diagonals,
    /// non-negative diagonals, both truthfulness directions, pairwise LDP
    /// and the utility floor.
    fn visit_slacks(&self, q: &[Vec<f64>], mut f: impl FnMut(f64) -> bool) -> bool {
        let k = self.k;
        for i in 0..k {
            if !f(q[i][i]) {
                return false;
            }
            for j in (0..k).filter(|&j| j != i) {
                let v = q[i][j];
                if !(f(v) && f(0.5 - v) && f(q[i][i] - v) && f(q[j][j] - v)) {
                    return false;
                }
            }
        }
        for (i, row) in q.iter().enumerate() {
            for (_, other) in q.iter().enumerate().filter(|&(i2, _)| i2 != i) {
                for (&a, &b) in row.iter().zip(other) {
                    if !f(self.bound * b - a) {
                        return false;
                    }
                }
            }
        }
        let hit: f64 = (0..k).map(|i| self.dist.group_probs()[i] * q[i][i]).sum();
        f(hit - (1.0 - self.zeta))
    }

    fn slacks(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_slacks(&self.raw(x), |s| {
            out.push(s);
            true
        });
        out
    }

    fn matrix(&self, x: &[f64]) -> Option<Vec<Vec<f64>>> {
        let q = self.raw(x);
        self.visit_slacks(&q, |s| s >= -self.tol).then_some(q)
    }

    /// Probe directions at `x` for step `h`: an orthonormal basis of the
    /// subspace that keeps every nearly active constraint (within `h` of its
    /// boundary) fixed, and for each such constraint a unit direction that
    /// leaves it while holding the others.
    fn face(&self, x: &[f64], h: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = x.len();
        let active: Vec<&Vec<f64>> = self
            .slacks(x)
            .iter()
            .zip(&self.normals)
            .filter(|(s, g)| norm(g) > 0.0 && **s <= h * norm(g))
            .map(|(_, g)| g)
            .collect();
        let span = orthonormalize(active.iter().map(|g| g.to_vec()));
        let identity = (0..n).map(|v| (0..n).map(|w| f64::from(u8::from(v == w))).collect());
        let free = orthonormalize(span.iter().cloned().chain(identity)).split_off(span.len());
        let leave = (0..active.len())
            .filter_map(|a| {
                let others = orthonormalize(active.iter().enumerate().filter(|&(b, _)| b != a).map(|(_, g)| g.to_vec()));
                let r = residual(active[a], &others);
                let len = norm(&r);
                (len > 1e-9 * norm(active[a])).then(|| r.iter().map(|v| v / len).collect())
            })
            .collect();
        (free, leave)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Part of `v` orthogonal to the orthonormal set `basis`.
fn residual(v: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut r = v.to_vec();
    for b in basis {
        let dot: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
        r.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
    }
    r
}

/// Gram–Schmidt, dropping vectors already (numerically) in the span.
fn orthonormalize(vs: impl Iterator<Item = Vec<f64>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let scale = norm(&v);
        // twice, for stability
        let r = residual(&residual(&v, &basis), &basis);
        let len = norm(&r);
        if len > 1e-9 * scale {
            basis.push(r.iter().map(|a| a / len).collect());
        }
    }
    basis
}

/// Best few points seen, ordered by `(score, x)`.
#[derive(Clone)]
struct Top(Vec<(f64, Vec<f64>)>);

impl Top {
    fn offer(mut self, score: f64, x: &[f64]) -> Self {
        let before = |a: &(f64, Vec<f64>)| {
            a.0.total_cmp(&score).then_with(|| cmp_vec(&a.1, x)).is_lt()
        };
        let pos = self.0.partition_point(before);
        if pos < KEEP && self.0.get(pos).is_none_or(|e| e.1 != x) {
            self.0.insert(pos, (score, x.to_vec()));
            self.0.truncate(KEEP);
        }
        self
    }

    fn merge(self, other: Top) -> Top {
        other.0.iter().fold(self, |acc, (s, x)| acc.offer(*s, x))
    }
}

fn cmp_vec(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

/// Minimizes `score` over admissible matrices whose off-diagonals lie on the
/// grid `{0, h, …, 1/2}` with `steps` points per axis. Returns `None` when no
/// grid point is admissible.
pub fn grid_search<F>(
    dist: &JointDistribution,
    epsilon: f64,
    zeta: f64,
    steps: usize,
    score: F,
) -> Result<Option<GridResult>>
where
    F: Fn(&[Vec<f64>]) -> f64 + Sync,
{
    refined_grid_search(dist, epsilon, zeta, steps, 0, score)
}

/// [`grid_search`] followed by `levels` rounds of local refinement. Around
/// each of the best few points, a lattice stencil of half-width `h` (at least
/// five points per axis) is searched together with seeded random probes, both
/// uniform in the same box and confined to the face of nearly active
/// constraints. `h` starts at one grid cell, doubles (up to a cell) after a
/// round that improves the best point and halves after one that does not.
///
/// The objectives of interest are quasiconvex on a convex feasible set, so
/// there are no spurious minima, but optima sit where several constraints
/// meet and the descent cone there can be too thin for lattice directions
/// alone. Points exactly on a face are never hit by lattice or box probes,
/// hence the face probes; pattern moves after each improving round then
/// follow the valleys they open up.
pub fn refined_grid_search<F>(
    dist: &JointDistribution,
    epsilon: f64,
    zeta: f64,
    steps: usize,
    levels: usize,
    score: F,
) -> Result<Option<GridResult>>
where
    F: Fn(&[Vec<f64>]) -> f64 + Sync,
{
    check_epsilon(epsilon)?;
    let k = dist.k();
    if k > MAX_K || steps > MAX_STEPS {
        return Err(Error::TooLarge(format!("k = {k}, grid_steps = {steps} (limits {MAX_K}, {MAX_STEPS})")));
    }
    if steps < 2 {
        return Err(Error::InvalidConfig("grid needs at least two steps".into()));
    }
    let space = Space::new(dist, epsilon.exp(), zeta);
    let cell = 0.5 / (steps - 1) as f64;
    let axis: Vec<f64> = (0..steps).map(|s| s as f64 * cell).collect();

    // per-row candidates: (k−1)-tuples with Σ ≤ 1 and max ≤ 1 − Σ
    let mut rows: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..k - 1 {
        rows = rows.into_iter().flat_map(|r| axis.iter().map(move |&v| [r.as_slice(), &[v]].concat())).collect();
    }
    rows.retain(|r| {
        let s: f64 = r.iter().sum();
        r.iter().all(|&v| v <= 1.0 - s + 1e-12)
    });
    let per_row = rows.len();
    let total = per_row.pow(k as u32);
    let m = k - 1;

    let top = (0..total)
        .into_par_iter()
        .fold(
            || Top(Vec::new()),
            |top, mut code| {
                let mut x = vec![0.0; k * m];
                for i in 0..k {
                    x[i * m..(i + 1) * m].copy_from_slice(&rows[code % per_row]);
                    code /= per_row;
                }
                match space.matrix(&x) {
                    Some(q) => top.offer(score(&q), &x),
                    None => top,
                }
            },
        )
        .reduce(|| Top(Vec::new()), Top::merge);
    if top.0.is_empty() {
        return Ok(None);
    }

    let n = k * m;
    let mut top = top;
    let mut h = cell;
    let per_axis = stencil_width(n);
    let spacing = 2.0 / (per_axis - 1) as f64;
    let stencil = per_axis.pow(n as u32);
    for level in 0..levels {
        let seeds = top.0.clone();
        let incumbent = seeds[0].0;
        let faces: Vec<_> = seeds.iter().map(|(_, x)| space.face(x, h)).collect();
        let per_seed = stencil + 2 * RANDOM_PROBES;
        top = seeds
            .par_iter()
            .enumerate()
            .flat_map(|(s, (_, base))| (0..per_seed).into_par_iter().map(move |code| (s, base, code)))
            .fold(
                || Top(Vec::new()),
                |acc, (s, base, mut code)| {
                    let mut x = base.clone();
                    if code < stencil {
                        for v in x.iter_mut() {
                            *v += ((code % per_axis) as f64 * spacing - 1.0) * h;
                            code /= per_axis;
                        }
                    } else {
                        let stream = ((level * KEEP + s) * per_seed + code) as u64;
                        let mut rng = record_rng(0x6772_6964, stream);
                        if code < stencil + RANDOM_PROBES {
                            for v in x.iter_mut() {
                                *v += rng.random_range(-1.0..1.0) * h;
                            }
                        } else {
                            // stay on the current face, optionally stepping off some of it
                            let (free, leave) = &faces[s];
                            for u in free {
                                let t = rng.random_range(-1.0..1.0) * h;
                                x.iter_mut().zip(u).for_each(|(v, d)| *v += t * d);
                            }
                            for u in leave {
                                if rng.random() {
                                    let t = rng.random::<f64>() * h;
                                    x.iter_mut().zip(u).for_each(|(v, d)| *v += t * d);
                                }
                            }
                        }
                    }
                    match space.matrix(&x) {
                        Some(q) => acc.offer(score(&q), &x),
                        None => acc,
                    }
                },
            )
            .reduce(|| Top(Vec::new()), Top::merge)
            .merge(top);
        if top.0[0].0 < incumbent {
            top = pattern_moves(&space, &score, top, &seeds[0].1);
            h = (2.0 * h).min(cell);
        } else {
            h *= 0.5;
        }
    }

    let (objective, x) = top.0.swap_remove(0);
    let entries = space.matrix(&x).expect("kept points are admissible");
    Ok(Some(GridResult { entries, objective, cell }))
}

/// Hooke–Jeeves extrapolation: after the best point moves from `from`, keep
/// stepping along that displacement at geometric multiples while it pays off.
/// Lets the search slide along thin valleys where several constraints are
/// tight, which lattice and random probes only crawl along.
fn pattern_moves<F>(space: &Space<'_>, score: &F, mut top: Top, from: &[f64]) -> Top
where
    F: Fn(&[Vec<f64>]) -> f64 + Sync,
{
    let mut prev = from.to_vec();
    for _ in 0..PATTERN_ROUNDS {
        let (best_score, best) = top.0[0].clone();
        let dir: Vec<f64> = best.iter().zip(&prev).map(|(b, p)| b - p).collect();
        let probes = (-4..=12).filter_map(|j| {
            let t = 2f64.powi(j);
            let x: Vec<f64> = best.iter().zip(&dir).map(|(b, d)| b + t * d).collect();
            space.matrix(&x).map(|q| (score(&q), x))
        });
        top = probes.fold(top, |acc, (v, x)| acc.offer(v, &x));
        if top.0[0].0 >= best_score {
            break;
        }
        prev = best;
    }
    top
}

/// Largest odd number of points per axis keeping the stencil at or below
/// `STENCIL_BUDGET` points, never fewer than five.
fn stencil_width(dims: usize) -> usize {
    let mut w = 5;
    while (w + 2usize).pow(dims as u32) <= STENCIL_BUDGET {
        w += 2;
    }
    w
}

/// `Δ` of the induced distribution, written out directly from the matrix.
pub fn delta_of(dist: &JointDistribution, q: &[Vec<f64>]) -> f64 {
    let k = dist.k();
    let (p, r, py) = (dist.group_probs(), dist.pos_rates(), dist.pos_marginal());
    (0..k)
        .map(|a| {
            let den: f64 = (0..k).map(|j| p[j] * q[j][a]).sum();
            let num: f64 = (0..k).map(|j| r[j] * p[j] * q[j][a]).sum();
            (num / den / py - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Grid minimum of `Δ(D_M)` under the constraints of `cfg`, at most `k = 3`
/// and 25 steps per axis.
pub fn brute_force_opt_k(dist: &JointDistribution, cfg: &SolverConfig, grid_steps: usize) -> Result<GridResult> {
    grid_search(dist, cfg.epsilon, cfg.zeta, grid_steps, |q| delta_of(dist, q))?
        .ok_or(Error::InfeasibleBudget { epsilon: cfg.epsilon, zeta: cfg.zeta })
}
