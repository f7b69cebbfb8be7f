//! Distribution summaries `(p_i, p_{1|i}, Pr(Y=1))` and the two data
//! unfairness metrics.

use serde::{Deserialize, Serialize};

use crate::dataset::{SensitiveColumn, TabularDataset};
use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-9;

/// Joint law of the sensitive attribute and the label, summarized by group
/// masses, per-group positive rates and the positive marginal.
///
/// The marginal is stored rather than recomputed so that a perturbed
/// distribution can carry the original `Pr(Y = 1)` explicitly; it is still
/// checked against the law of total probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJoint")]
pub struct JointDistribution {
    group_probs: Vec<f64>,
    pos_rates: Vec<f64>,
    pos_marginal: f64,
}

#[derive(Deserialize)]
struct RawJoint {
    group_probs: Vec<f64>,
    pos_rates: Vec<f64>,
    pos_marginal: f64,
}

impl TryFrom<RawJoint> for JointDistribution {
    type Error = Error;

    fn try_from(r: RawJoint) -> Result<Self> {
        JointDistribution::with_marginal(r.group_probs, r.pos_rates, r.pos_marginal)
    }
}

impl JointDistribution {
    /// Builds a distribution, deriving `Pr(Y = 1) = Σ p_i p_{1|i}`.
    pub fn new(group_probs: Vec<f64>, pos_rates: Vec<f64>) -> Result<Self> {
        let pos_marginal = group_probs.iter().zip(&pos_rates).map(|(p, r)| p * r).sum();
        Self::with_marginal(group_probs, pos_rates, pos_marginal)
    }

    pub fn with_marginal(group_probs: Vec<f64>, pos_rates: Vec<f64>, pos_marginal: f64) -> Result<Self> {
        let k = group_probs.len();
        if k < 2 {
            return Err(Error::InvalidDistribution(format!("need k >= 2 groups, got {k}")));
        }
        if pos_rates.len() != k {
            return Err(Error::InvalidDistribution(format!(
                "{} positive rates for {k} groups",
                pos_rates.len()
            )));
        }
        if let Some(i) = group_probs.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidDistribution(format!("group {i} mass {} not in (0, 1]", group_probs[i])));
        }
        let total: f64 = group_probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidDistribution(format!("group masses sum to {total}")));
        }
        if let Some(i) = pos_rates.iter().position(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::InvalidDistribution(format!("positive rate {} of group {i} not in [0, 1]", pos_rates[i])));
        }
        let implied: f64 = group_probs.iter().zip(&pos_rates).map(|(p, r)| p * r).sum();
        if !(0.0..=1.0).contains(&pos_marginal) || (implied - pos_marginal).abs() > PROB_TOL {
            return Err(Error::InvalidDistribution(format!(
                "Pr(Y=1) = {pos_marginal} but the groups imply {implied}"
            )));
        }
        Ok(JointDistribution { group_probs, pos_rates, pos_marginal })
    }

    pub fn k(&self) -> usize {
        self.group_probs.len()
    }

    /// `p_i = Pr(A = i)`.
    pub fn group_probs(&self) -> &[f64] {
        &self.group_probs
    }

    /// `p_{1|i} = Pr(Y = 1 | A = i)`.
    pub fn pos_rates(&self) -> &[f64] {
        &self.pos_rates
    }

    /// `Pr(Y = 1)`.
    pub fn pos_marginal(&self) -> f64 {
        self.pos_marginal
    }
}

/// Plug-in estimate from record counts. No smoothing: an empty group is an
/// error because every downstream formula weights by `p_i`.
pub fn estimate_distribution(dataset: &TabularDataset) -> Result<JointDistribution> {
    let groups = match &dataset.sensitive {
        SensitiveColumn::Values(v) => v,
        SensitiveColumn::Subsets(_) => return Err(Error::SubsetOutput),
    };
    let k = dataset.k();
    let mut counts = vec![0usize; k];
    let mut positives = vec![0usize; k];
    for (&a, &y) in groups.iter().zip(&dataset.labels) {
        if y > 1 {
            return Err(Error::NonBinaryLabel(y.to_string()));
        }
        counts[a] += 1;
        positives[a] += y as usize;
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroup(i));
    }
    let n = groups.len() as f64;
    let group_probs = counts.iter().map(|&c| c as f64 / n).collect();
    let pos_rates = positives.iter().zip(&counts).map(|(&p, &c)| p as f64 / c as f64).collect();
    let pos_marginal = positives.iter().sum::<usize>() as f64 / n;
    JointDistribution::with_marginal(group_probs, pos_rates, pos_marginal)
}

/// `Δ(D) = max_a |p_{1|a} / Pr(Y=1) − 1|`.
pub fn delta(dist: &JointDistribution) -> Result<f64> {
    let py = dist.pos_marginal();
    if py <= 0.0 {
        return Err(Error::ZeroPositiveRate);
    }
    Ok(dist.pos_rates().iter().map(|r| (r / py - 1.0).abs()).fold(0.0, f64::max))
}

/// `Δ'(D) = max_{a,a'} |p_{1|a} − p_{1|a'}|`.
pub fn delta_prime(dist: &JointDistribution) -> f64 {
    let (lo, hi) = dist
        .pos_rates()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    hi - lo
}

/// Constants with `Δ ≤ c1·Δ'` and `Δ' ≤ c2·Δ`: `c1 = 1/Pr(Y=1)`, `c2 = 2·Pr(Y=1)`.
pub fn equivalence_bounds(dist: &JointDistribution) -> Result<(f64, f64)> {
    let py = dist.pos_marginal();
    if py <= 0.0 {
        return Err(Error::ZeroPositiveRate);
    }
    Ok((1.0 / py, 2.0 * py))
}
