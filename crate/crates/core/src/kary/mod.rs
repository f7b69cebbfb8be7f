//! Optimal mechanism for a `k`-ary sensitive attribute.
//!
//! The design variables are the `k(k−1)` off-diagonal entries of `Q`, stored
//! row-major with the diagonal skipped; each diagonal is eliminated as
//! `q_ii = 1 − Σ_{j≠i} q_ij`. For a fixed level `t` the condition
//! `|Pr(Y=1 | Z=a)/Pr(Y=1) − 1| ≤ t` is linear in those variables, and the
//! feasible set grows with `t`, so the min–max objective is found by
//! bisecting on `t` with an LP feasibility check at each step.

mod grid;
mod simplex;

pub use grid::{brute_force_opt_k, delta_of, grid_search, refined_grid_search, GridResult};

use serde::{Deserialize, Serialize};

use crate::dist::{delta, JointDistribution};
use crate::error::{Error, Result};
use crate::mechanisms::{check_epsilon, induced_distribution, verify_ldp, MechanismMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
}

impl Relation {
    fn flip(self) -> Self {
        match self {
            Relation::Le => Relation::Ge,
            Relation::Ge => Relation::Le,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `q_ii ≥ q_ij`
    TruthRow,
    /// `q_jj ≥ q_ij`
    TruthColumn,
    /// `q_jj ≤ e^ε q_ij`
    Ldp,
    RowMass,
    NonNegative,
    Utility,
    FairUpper,
    FairLower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub bound: f64,
    pub kind: ConstraintKind,
}

impl Row {
    /// Non-negative when the row holds.
    pub fn slack(&self, x: &[f64]) -> f64 {
        let lhs: f64 = self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
        match self.relation {
            Relation::Le => self.bound - lhs,
            Relation::Ge => lhs - self.bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraintSystem {
    pub num_vars: usize,
    pub rows: Vec<Row>,
}

impl LinearConstraintSystem {
    pub fn new(num_vars: usize) -> Self {
        LinearConstraintSystem { num_vars, rows: Vec::new() }
    }

    pub fn push(&mut self, coeffs: Vec<f64>, relation: Relation, bound: f64, kind: ConstraintKind) {
        debug_assert_eq!(coeffs.len(), self.num_vars);
        self.rows.push(Row { coeffs, relation, bound, kind });
    }

    pub fn with_rows(&self, extra: impl IntoIterator<Item = Row>) -> Self {
        let mut out = self.clone();
        out.rows.extend(extra);
        out
    }

    pub fn slacks(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.slack(x)).collect()
    }

    /// Largest amount by which any row is violated (zero if none).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.rows.iter().map(|r| (-r.slack(x)).max(0.0)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub zeta: f64,
    #[serde(default = "defaults::objective_tol")]
    pub objective_tol: f64,
    #[serde(default = "defaults::feasibility_tol")]
    pub feasibility_tol: f64,
    #[serde(default = "defaults::max_bisection_iters")]
    pub max_bisection_iters: usize,
}

mod defaults {
    pub fn objective_tol() -> f64 {
        1e-6
    }
    pub fn feasibility_tol() -> f64 {
        1e-9
    }
    pub fn max_bisection_iters() -> usize {
        60
    }
}

impl SolverConfig {
    pub fn new(epsilon: f64, zeta: f64) -> Self {
        SolverConfig {
            epsilon,
            zeta,
            objective_tol: defaults::objective_tol(),
            feasibility_tol: defaults::feasibility_tol(),
            max_bisection_iters: defaults::max_bisection_iters(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(Error::InvalidConfig(format!("zeta must lie in [0, 1], got {}", self.zeta)));
        }
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.objective_tol) || !pos(self.feasibility_tol) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_bisection_iters == 0 {
            return Err(Error::InvalidConfig("max_bisection_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Position of `q_ij` (`i ≠ j`) in the variable vector.
pub fn var_index(k: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < k && j < k);
    i * (k - 1) + if j < i { j } else { j - 1 }
}

/// Off-diagonal entries of `q` in variable order.
pub fn offdiagonal(q: &MechanismMatrix) -> Vec<f64> {
    let k = q.k();
    let mut x = vec![0.0; k * (k - 1)];
    for i in 0..k {
        for j in (0..k).filter(|&j| j != i) {
            x[var_index(k, i, j)] = q.get(i, j);
        }
    }
    x
}

/// Rebuilds `Q` from its off-diagonal entries.
pub fn matrix_from_offdiagonal(k: usize, x: &[f64]) -> Result<MechanismMatrix> {
    let mut q = vec![vec![0.0; k]; k];
    for (i, row) in q.iter_mut().enumerate() {
        let mut off = 0.0;
        for j in (0..k).filter(|&j| j != i) {
            row[j] = x[var_index(k, i, j)].max(0.0);
            off += row[j];
        }
        row[i] = (1.0 - off).max(0.0);
    }
    MechanismMatrix::new(q)
}

/// Rows in canonical order: row truthfulness, column truthfulness and
/// reduced LDP (each over pairs `(i, j)`, `i ≠ j`, row-major), row mass,
/// non-negativity, utility.
pub fn assemble_constraints(dist: &JointDistribution, cfg: &SolverConfig) -> LinearConstraintSystem {
    let k = dist.k();
    let n = k * (k - 1);
    let e = cfg.epsilon.exp();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let mut sys = LinearConstraintSystem::new(n);

    // q_ii ≥ q_ij  ⇔  Σ_a x_ia + x_ij ≤ 1
    for &(i, j) in &pairs {
        let mut c = vec![0.0; n];
        (0..k).filter(|&a| a != i).for_each(|a| c[var_index(k, i, a)] += 1.0);
        c[var_index(k, i, j)] += 1.0;
        sys.push(c, Relation::Le, 1.0, ConstraintKind::TruthRow);
    }
    // q_jj ≥ q_ij  ⇔  Σ_a x_ja + x_ij ≤ 1
    for &(i, j) in &pairs {
        let mut c = vec![0.0; n];
        (0..k).filter(|&a| a != j).for_each(|a| c[var_index(k, j, a)] += 1.0);
        c[var_index(k, i, j)] += 1.0;
        sys.push(c, Relation::Le, 1.0, ConstraintKind::TruthColumn);
    }
    // (1 − Σ_a x_ja) − e^ε x_ij ≤ 0  ⇔  Σ_a x_ja + e^ε x_ij ≥ 1
    for &(i, j) in &pairs {
        let mut c = vec![0.0; n];
        (0..k).filter(|&a| a != j).for_each(|a| c[var_index(k, j, a)] += 1.0);
        c[var_index(k, i, j)] += e;
        sys.push(c, Relation::Ge, 1.0, ConstraintKind::Ldp);
    }
    for i in 0..k {
        let mut c = vec![0.0; n];
        (0..k).filter(|&a| a != i).for_each(|a| c[var_index(k, i, a)] = 1.0);
        sys.push(c, Relation::Le, 1.0, ConstraintKind::RowMass);
    }
    for v in 0..n {
        let mut c = vec![0.0; n];
        c[v] = 1.0;
        sys.push(c, Relation::Ge, 0.0, ConstraintKind::NonNegative);
    }
    sys.push(error_weights(dist), Relation::Le, cfg.zeta, ConstraintKind::Utility);
    sys
}

/// `Σ_i p_i Σ_{a≠i} x_ia`, the probability that the report differs from the
/// true value.
fn error_weights(dist: &JointDistribution) -> Vec<f64> {
    let k = dist.k();
    let mut c = vec![0.0; k * (k - 1)];
    for i in 0..k {
        (0..k).filter(|&a| a != i).for_each(|a| c[var_index(k, i, a)] = dist.group_probs()[i]);
    }
    c
}

/// The `2k` rows encoding `|N_a/D_a − 1| ≤ t`, where `N_a = Σ_j p1|j p_j q_ja`
/// and `D_a = Pr(Y=1) Σ_j p_j q_ja`.
pub fn fairness_rows_at(dist: &JointDistribution, t: f64) -> Vec<Row> {
    let k = dist.k();
    let n = k * (k - 1);
    let (p, r, py) = (dist.group_probs(), dist.pos_rates(), dist.pos_marginal());
    let mut rows = Vec::with_capacity(2 * k);
    // Σ_j p_j w_j q_ja ≤ 0 with q_aa = 1 − Σ_b x_ab
    let row = |a: usize, w: &dyn Fn(usize) -> f64, kind| {
        let mut c = vec![0.0; n];
        for j in (0..k).filter(|&j| j != a) {
            c[var_index(k, j, a)] = p[j] * w(j);
        }
        let own = p[a] * w(a);
        (0..k).filter(|&b| b != a).for_each(|b| c[var_index(k, a, b)] = -own);
        Row { coeffs: c, relation: Relation::Le, bound: -own, kind }
    };
    for a in 0..k {
        rows.push(row(a, &|j| r[j] - (1.0 + t) * py, ConstraintKind::FairUpper));
        rows.push(row(a, &|j| (1.0 - t) * py - r[j], ConstraintKind::FairLower));
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible(Vec<f64>),
    Infeasible,
}

/// Finds a point satisfying every row (variables non-negative) or reports
/// that none exists. A point is only returned after it has been checked
/// against the rows within `feasibility_tol`.
pub fn lp_feasible(system: &LinearConstraintSystem, feasibility_tol: f64) -> Result<Feasibility> {
    lp_minimize(system, None, feasibility_tol)
}

/// Like [`lp_feasible`], returning a minimizer of `cost · x` when one is given.
pub fn lp_minimize(system: &LinearConstraintSystem, cost: Option<&[f64]>, feasibility_tol: f64) -> Result<Feasibility> {
    match simplex::solve(system.num_vars, &system.rows, cost)? {
        simplex::Outcome::Infeasible => Ok(Feasibility::Infeasible),
        simplex::Outcome::Optimal(x) => {
            let v = system.max_violation(&x);
            if v > feasibility_tol {
                return Err(Error::NumericalFailure(format!("LP point violates a row by {v:e}")));
            }
            Ok(Feasibility::Feasible(x))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub lo: f64,
    pub hi: f64,
    pub t: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub iterations: Vec<BisectionStep>,
    /// Slack of every row of the final system (static rows, then fairness
    /// rows at `t_star`), in canonical order.
    pub slacks: Vec<f64>,
    pub kinds: Vec<ConstraintKind>,
    pub t_star: f64,
    /// Smallest slack over the full pairwise LDP conditions.
    pub min_ldp_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaryDesignResult {
    pub k: usize,
    pub epsilon: f64,
    pub zeta: f64,
    /// `Δ` of the induced distribution, with the original `Pr(Y=1)`.
    pub objective: f64,
    pub entries: Vec<Vec<f64>>,
    pub certificate: Certificate,
}

impl KaryDesignResult {
    pub fn matrix(&self) -> Result<MechanismMatrix> {
        MechanismMatrix::new(self.entries.clone())
    }
}

fn feasible_at(stat: &LinearConstraintSystem, dist: &JointDistribution, t: f64, tol: f64) -> Result<bool> {
    Ok(matches!(lp_feasible(&stat.with_rows(fairness_rows_at(dist, t)), tol)?, Feasibility::Feasible(_)))
}

pub fn solve_opt_k(dist: &JointDistribution, cfg: &SolverConfig) -> Result<KaryDesignResult> {
    cfg.validate()?;
    let py = dist.pos_marginal();
    if py == 0.0 {
        return Err(Error::ZeroPositiveRate);
    }
    let tol = cfg.feasibility_tol;
    let infeasible = || Error::InfeasibleBudget { epsilon: cfg.epsilon, zeta: cfg.zeta };
    let stat = assemble_constraints(dist, cfg);
    if lp_feasible(&stat, tol)? == Feasibility::Infeasible {
        return Err(infeasible());
    }
    let t_max = (1.0 / py - 1.0).max(1.0);
    let mut trace = Vec::new();
    let (mut lo, mut hi) = (0.0, t_max);
    if feasible_at(&stat, dist, 0.0, tol)? {
        hi = 0.0;
        trace.push(BisectionStep { lo, hi, t: 0.0, feasible: true });
    } else {
        if !feasible_at(&stat, dist, t_max, tol)? {
            return Err(infeasible());
        }
        while hi - lo > cfg.objective_tol {
            if trace.len() >= cfg.max_bisection_iters {
                return Err(Error::NumericalFailure(format!(
                    "bisection width {:e} above tolerance after {} iterations",
                    hi - lo,
                    trace.len()
                )));
            }
            let t = 0.5 * (lo + hi);
            let feasible = feasible_at(&stat, dist, t, tol)?;
            if feasible {
                hi = t;
            } else {
                lo = t;
            }
            trace.push(BisectionStep { lo, hi, t, feasible });
        }
    }

    let full = stat.with_rows(fairness_rows_at(dist, hi));
    let x = match lp_minimize(&full, Some(&error_weights(dist)), tol)? {
        Feasibility::Feasible(x) => x,
        Feasibility::Infeasible => {
            return Err(Error::NumericalFailure(format!("feasible level {hi} rejected on the utility pass")))
        }
    };
    let q = matrix_from_offdiagonal(dist.k(), &x)?;
    let ldp = verify_ldp(&q, cfg.epsilon, tol);
    if !ldp.satisfied {
        return Err(Error::NumericalFailure(format!("design violates LDP by {:e}", ldp.max_violation)));
    }
    let objective = delta(&induced_distribution(dist, &q)?)?;
    Ok(KaryDesignResult {
        k: dist.k(),
        epsilon: cfg.epsilon,
        zeta: cfg.zeta,
        objective,
        entries: q.entries().to_vec(),
        certificate: Certificate {
            iterations: trace,
            slacks: full.slacks(&x),
            kinds: full.rows.iter().map(|r| r.kind).collect(),
            t_star: hi,
            min_ldp_slack: -ldp.max_violation,
        },
    })
}

/// Smallest `Pr(Z ≠ A)` over truthful ε-LDP mechanisms; utility budgets
/// below it are infeasible.
pub fn min_achievable_error(dist: &JointDistribution, epsilon: f64) -> Result<f64> {
    let cfg = SolverConfig::new(epsilon, 1.0);
    cfg.validate()?;
    let stat = assemble_constraints(dist, &cfg);
    let w = error_weights(dist);
    match lp_minimize(&stat, Some(&w), cfg.feasibility_tol)? {
        Feasibility::Feasible(x) => Ok(w.iter().zip(&x).map(|(a, b)| a * b).sum()),
        Feasibility::Infeasible => Err(Error::NumericalFailure("truthful LDP system reported empty".into())),
    }
}

#[cfg(test)]
mod tests;
