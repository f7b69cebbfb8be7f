//! Optimal mechanism for a binary sensitive attribute.
//!
//! Over the feasible square the normalized unfairness `Δ′(D_M)/Δ′(D)` has the
//! closed form computed by [`objective_ratio`]; its minimizer under ε-LDP sits
//! at one end of the privacy boundary and is returned by [`opt_binary`].
//! [`boundary_oracle`] re-derives it by brute force along both boundary curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::JointDistribution;
use crate::error::{Error, Result};
use crate::mechanisms::{check_epsilon, BinaryMechanism};

const TIE_TOL: f64 = 1e-12;

/// Which branch produced the optimum, in terms of the group probabilities
/// `p0 = Pr(A=0)` and `p1 = Pr(A=1)` after normalizing labels so that the
/// positive rate of group 0 is the smaller one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryCase {
    P0LessP1,
    P1LessP0,
    /// `p0 = p1`: both ends of the boundary give the same value; the first is
    /// returned.
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryDesignResult {
    pub p: f64,
    pub q: f64,
    pub epsilon: f64,
    pub objective: f64,
    pub case: BinaryCase,
    /// Groups were swapped internally because group 0 had the larger
    /// positive rate.
    pub relabeled: bool,
}

impl BinaryDesignResult {
    pub fn mechanism(&self) -> BinaryMechanism {
        BinaryMechanism { p: self.p, q: self.q }
    }
}

fn check_binary(dist: &JointDistribution) -> Result<()> {
    if dist.k() != 2 {
        return Err(Error::NotBinary(dist.k()));
    }
    if dist.pos_rates()[0] == dist.pos_rates()[1] {
        return Err(Error::ZeroBaseUnfairness);
    }
    Ok(())
}

/// `Δ′(D_M)/Δ′(D)` for the binary mechanism `(p, q)`:
///
/// `p0 p1 (pq − (1−p)(1−q)) / ((p0(1−p) + p1 q)(p0 p + p1(1−q)))`.
pub fn objective_ratio(dist: &JointDistribution, p: f64, q: f64) -> Result<f64> {
    check_binary(dist)?;
    BinaryMechanism::new(p, q)?;
    let (p0, p1) = (dist.group_probs()[0], dist.group_probs()[1]);
    Ok(ratio(p0, p1, p, q))
}

fn ratio(p0: f64, p1: f64, p: f64, q: f64) -> f64 {
    p0 * p1 * (p * q - (1.0 - p) * (1.0 - q)) / ((p0 * (1.0 - p) + p1 * q) * (p0 * p + p1 * (1.0 - q)))
}

pub fn opt_binary(dist: &JointDistribution, epsilon: f64) -> Result<BinaryDesignResult> {
    check_epsilon(epsilon)?;
    check_binary(dist)?;
    Ok(closed_form(dist, epsilon))
}

/// The closed-form point without the unfairness check. When both groups
/// already share a positive rate every mechanism keeps `Δ′ = 0`, so the
/// point is as good as any; its `objective` is then reported as 0.
pub fn opt_binary_lenient(dist: &JointDistribution, epsilon: f64) -> Result<BinaryDesignResult> {
    check_epsilon(epsilon)?;
    if dist.k() != 2 {
        return Err(Error::NotBinary(dist.k()));
    }
    let mut r = closed_form(dist, epsilon);
    if !r.objective.is_finite() || dist.pos_rates()[0] == dist.pos_rates()[1] {
        r.objective = 0.0;
    }
    Ok(r)
}

fn closed_form(dist: &JointDistribution, epsilon: f64) -> BinaryDesignResult {
    let relabeled = dist.pos_rates()[0] > dist.pos_rates()[1];
    let (mut p0, mut p1) = (dist.group_probs()[0], dist.group_probs()[1]);
    if relabeled {
        std::mem::swap(&mut p0, &mut p1);
    }
    let far = 1.0 - (-epsilon).exp() / 2.0;
    let case = if (p0 - p1).abs() <= TIE_TOL {
        BinaryCase::Tie
    } else if p0 < p1 {
        BinaryCase::P0LessP1
    } else {
        BinaryCase::P1LessP0
    };
    let (mut p, mut q) = match case {
        BinaryCase::P0LessP1 | BinaryCase::Tie => (far, 0.5),
        BinaryCase::P1LessP0 => (0.5, far),
    };
    if relabeled {
        std::mem::swap(&mut p, &mut q);
    }
    let objective = ratio(dist.group_probs()[0], dist.group_probs()[1], p, q);
    BinaryDesignResult { p, q, epsilon, objective, case, relabeled }
}

/// Grid search along the two privacy-boundary curves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryResult {
    pub p: f64,
    pub q: f64,
    pub objective: f64,
    /// Minimum on `q = e^ε(1−p)` and on `p = e^ε(1−q)`, in that order.
    pub curve_minima: [f64; 2],
}

/// Evaluates the objective at `grid_n` evenly spaced points (endpoints
/// included) on each boundary curve within `[1/2, 1]²` and returns the
/// smallest, ties broken by the lexicographically smallest `(p, q)`.
pub fn boundary_oracle(dist: &JointDistribution, epsilon: f64, grid_n: usize) -> Result<BoundaryResult> {
    check_epsilon(epsilon)?;
    check_binary(dist)?;
    if grid_n < 1000 {
        return Err(Error::InvalidConfig(format!("grid_n must be at least 1000, got {grid_n}")));
    }
    let (p0, p1) = (dist.group_probs()[0], dist.group_probs()[1]);
    let e = epsilon.exp();
    let lo = e / (e + 1.0);
    let hi = 1.0 - 0.5 / e;
    let step = (hi - lo) / (grid_n - 1) as f64;
    let at = |i: usize| if i + 1 == grid_n { hi } else { lo + step * i as f64 };

    let best = |curve: usize| {
        (0..grid_n)
            .into_par_iter()
            .map(|i| {
                let s = at(i);
                let t = (e * (1.0 - s)).clamp(0.5, 1.0);
                let (p, q) = if curve == 0 { (s, t) } else { (t, s) };
                (ratio(p0, p1, p, q), p, q)
            })
            .reduce(|| (f64::INFINITY, f64::INFINITY, f64::INFINITY), |a, b| if key_lt(b, a) { b } else { a })
    };
    let (a, b) = (best(0), best(1));
    let win = if key_lt(b, a) { b } else { a };
    Ok(BoundaryResult { p: win.1, q: win.2, objective: win.0, curve_minima: [a.0, b.0] })
}

fn key_lt(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)).is_lt()
}
