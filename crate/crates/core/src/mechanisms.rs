//! Local randomizers for the sensitive attribute.
//!
//! A mechanism over `[k]` is a row-stochastic matrix `Q` with
//! `Q[i][j] = Pr(Z = j | A = i)`. Subset selection is the exception: it
//! reports a set, so it is carried as [`SsParams`] and applied record by
//! record with [`ss_perturb`].

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{SensitiveColumn, TabularDataset};
use crate::dist::JointDistribution;
use crate::error::{Error, Result};
use crate::rng::record_rng;

const ROW_TOL: f64 = 1e-9;

/// Default absolute tolerance of [`verify_ldp`].
pub const LDP_TOL: f64 = 1e-9;

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(epsilon))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismMatrix {
    entries: Vec<Vec<f64>>,
}

impl MechanismMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let k = entries.len();
        if k < 2 {
            return Err(Error::InvalidMechanism(format!("need k >= 2, got {k}")));
        }
        for (i, row) in entries.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidMechanism(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            if let Some(j) = row.iter().position(|&q| !(0.0..=1.0).contains(&q)) {
                return Err(Error::InvalidMechanism(format!("entry ({i},{j}) = {} not in [0, 1]", row[j])));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidMechanism(format!("row {i} sums to {s}")));
            }
        }
        Ok(MechanismMatrix { entries })
    }

    pub fn identity(k: usize) -> Result<Self> {
        Self::new((0..k).map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect()).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![vec![1.0 / k as f64; k]; k])
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    /// Draws an output for input `a` by inverting the row CDF at `u ∈ [0, 1)`.
    pub fn sample_with(&self, a: usize, u: f64) -> usize {
        let row = &self.entries[a];
        let mut cum = 0.0;
        for (j, &q) in row.iter().enumerate() {
            cum += q;
            if u < cum {
                return j;
            }
        }
        // u landed in the rounding gap above the last cumulative sum
        row.iter().rposition(|&q| q > 0.0).unwrap_or(a)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    k: usize,
    entries: Vec<Vec<f64>>,
    epsilon_star: Option<f64>,
}

impl Serialize for MechanismMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let eps = privacy_level(self);
        MatrixJson { k: self.k(), entries: self.entries.clone(), epsilon_star: eps.is_finite().then_some(eps) }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MechanismMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(d)?;
        if raw.k != raw.entries.len() {
            return Err(serde::de::Error::custom(format!("k = {} but {} rows", raw.k, raw.entries.len())));
        }
        MechanismMatrix::new(raw.entries).map_err(serde::de::Error::custom)
    }
}

/// Binary mechanism: `p = Pr(Z=0 | A=0)`, `q = Pr(Z=1 | A=1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMechanism {
    pub p: f64,
    pub q: f64,
}

impl BinaryMechanism {
    /// Restricted to the non-trivial-utility square `[1/2, 1]²`.
    pub fn new(p: f64, q: f64) -> Result<Self> {
        let ok = |x: f64| (0.5..=1.0).contains(&x);
        if ok(p) && ok(q) {
            Ok(BinaryMechanism { p, q })
        } else {
            Err(Error::InvalidMechanism(format!("(p, q) = ({p}, {q}) outside [1/2, 1]^2")))
        }
    }
}

/// A reported subset `Ω ⊆ [k]`, members kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<usize>", into = "Vec<usize>")]
pub struct SubsetReport {
    pub omega: usize,
    pub members: Vec<usize>,
}

impl From<Vec<usize>> for SubsetReport {
    fn from(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        SubsetReport { omega: members.len(), members }
    }
}

impl From<SubsetReport> for Vec<usize> {
    fn from(r: SubsetReport) -> Self {
        r.members
    }
}

impl SubsetReport {
    pub fn contains(&self, v: usize) -> bool {
        self.members.binary_search(&v).is_ok()
    }
}

/// Subset-selection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsParams {
    pub k: usize,
    pub epsilon: f64,
    pub omega: usize,
    /// Probability that the true value is in the report.
    pub p_true: f64,
}

impl SsParams {
    /// `Pr(b ∈ Ω | A = a)` for any `b ≠ a`.
    pub fn off_inclusion_prob(&self) -> f64 {
        let (k, w) = (self.k as f64, self.omega as f64);
        (self.p_true * (w - 1.0) + (1.0 - self.p_true) * w) / (k - 1.0)
    }
}

/// A perturbation to apply to a dataset's sensitive column.
#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    Matrix(MechanismMatrix),
    Subset(SsParams),
}

impl Mechanism {
    pub fn k(&self) -> usize {
        match self {
            Mechanism::Matrix(m) => m.k(),
            Mechanism::Subset(s) => s.k,
        }
    }
}

/// Generalized randomized response: diagonal `e^ε/(e^ε+k−1)`, off-diagonal
/// `1/(e^ε+k−1)`.
pub fn grr_matrix(k: usize, epsilon: f64) -> Result<MechanismMatrix> {
    check_epsilon(epsilon)?;
    if k < 2 {
        return Err(Error::InvalidMechanism(format!("need k >= 2, got {k}")));
    }
    let e = epsilon.exp();
    let denom = e + (k as f64 - 1.0);
    let (on, off) = (e / denom, 1.0 / denom);
    MechanismMatrix::new((0..k).map(|i| (0..k).map(|j| if i == j { on } else { off }).collect()).collect())
}

/// Randomized response, `p = q = e^ε/(e^ε+1)`.
pub fn rr_mechanism(epsilon: f64) -> Result<BinaryMechanism> {
    check_epsilon(epsilon)?;
    let p = 1.0 / (1.0 + (-epsilon).exp());
    BinaryMechanism::new(p, p)
}

/// Subset size `ω = round(k/(e^ε+1))` (half away from zero, clamped to
/// `[1, k−1]`) and inclusion probability `ωe^ε/(ωe^ε+k−ω)`.
pub fn ss_params(k: usize, epsilon: f64) -> Result<SsParams> {
    check_epsilon(epsilon)?;
    if k < 2 {
        return Err(Error::InvalidMechanism(format!("need k >= 2, got {k}")));
    }
    let e = epsilon.exp();
    let omega = ((k as f64 / (e + 1.0)).round() as usize).clamp(1, k - 1);
    let w = omega as f64;
    let p_true = w * e / (w * e + k as f64 - w);
    Ok(SsParams { k, epsilon, omega, p_true })
}

/// One subset-selection report for true value `a`.
pub fn ss_perturb<R: Rng + ?Sized>(a: usize, params: &SsParams, rng: &mut R) -> SubsetReport {
    let k = params.k;
    let include = rng.random::<f64>() < params.p_true;
    let fill = if include { params.omega - 1 } else { params.omega };
    let mut members: Vec<usize> = index::sample(rng, k - 1, fill)
        .into_iter()
        .map(|i| if i >= a { i + 1 } else { i })
        .collect();
    if include {
        members.push(a);
    }
    SubsetReport::from(members)
}

pub fn matrix_of_binary(m: &BinaryMechanism) -> MechanismMatrix {
    MechanismMatrix { entries: vec![vec![m.p, 1.0 - m.p], vec![1.0 - m.q, m.q]] }
}

/// Outcome of an exact ε-LDP check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdpReport {
    pub satisfied: bool,
    /// `max_{j,i,i'} Q[i][j] / Q[i'][j]`; infinite when a column mixes zero
    /// and non-zero entries.
    pub worst_ratio: f64,
    /// Column attaining the worst ratio.
    pub worst_column: usize,
    /// `max_{j,i,i'} Q[i][j] − e^ε Q[i'][j]`.
    pub max_violation: f64,
}

/// Checks `Q[i][j] ≤ e^ε Q[i'][j] + tol` for every column and row pair.
pub fn verify_ldp(q: &MechanismMatrix, epsilon: f64, tol: f64) -> LdpReport {
    let k = q.k();
    let bound = epsilon.exp();
    let mut worst_ratio = 1.0f64;
    let mut worst_column = 0;
    let mut max_violation = f64::NEG_INFINITY;
    for j in 0..k {
        let (lo, hi) = (0..k).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| (lo.min(q.get(i, j)), hi.max(q.get(i, j))));
        let ratio = if hi == 0.0 {
            1.0
        } else if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        };
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_column = j;
        }
        max_violation = max_violation.max(hi - bound * lo);
    }
    LdpReport { satisfied: max_violation <= tol, worst_ratio, worst_column, max_violation }
}

/// `ε⋆(Q)`: the smallest ε for which `Q` is ε-LDP.
pub fn privacy_level(q: &MechanismMatrix) -> f64 {
    verify_ldp(q, 0.0, 0.0).worst_ratio.ln()
}

/// Law of `(Z, Y)` after pushing `A` through `Q`. `Pr(Y = 1)` is unchanged
/// because the perturbation depends on `A` only.
pub fn induced_distribution(dist: &JointDistribution, q: &MechanismMatrix) -> Result<JointDistribution> {
    let k = dist.k();
    if q.k() != k {
        return Err(Error::AlphabetMismatch { mechanism: q.k(), dataset: k });
    }
    let (p, r) = (dist.group_probs(), dist.pos_rates());
    let mut mass = vec![0.0; k];
    let mut rates = vec![0.0; k];
    for a in 0..k {
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..k {
            den += p[j] * q.get(j, a);
            num += r[j] * p[j] * q.get(j, a);
        }
        if den <= 0.0 {
            return Err(Error::DegenerateOutput(a));
        }
        mass[a] = den;
        rates[a] = (num / den).clamp(0.0, 1.0);
    }
    JointDistribution::with_marginal(mass, rates, dist.pos_marginal())
}

/// Independent mechanism draws for a column of true values. Record `i` uses
/// the random stream `(seed, i)`, so the output is reproducible and
/// independent of evaluation order.
pub fn perturb_values(values: &[usize], mech: &Mechanism, seed: u64) -> SensitiveColumn {
    match mech {
        Mechanism::Matrix(q) => SensitiveColumn::Values(
            values
                .par_iter()
                .enumerate()
                .map(|(i, &a)| q.sample_with(a, record_rng(seed, i as u64).random::<f64>()))
                .collect(),
        ),
        Mechanism::Subset(ss) => SensitiveColumn::Subsets(
            values
                .par_iter()
                .enumerate()
                .map(|(i, &a)| ss_perturb(a, ss, &mut record_rng(seed, i as u64)))
                .collect(),
        ),
    }
}

/// Replaces every record's sensitive value with a draw from the mechanism.
pub fn perturb_dataset(dataset: &TabularDataset, mech: &Mechanism, seed: u64) -> Result<TabularDataset> {
    let values = dataset.sensitive_indices().ok_or(Error::SubsetOutput)?;
    if mech.k() != dataset.k() {
        return Err(Error::AlphabetMismatch { mechanism: mech.k(), dataset: dataset.k() });
    }
    Ok(TabularDataset { sensitive: perturb_values(values, mech, seed), ..dataset.clone() })
}
