//! Run configuration and the `design` / `perturb` / `evaluate` / `sweep` /
//! `verify` commands.
//!
//! Every command is a pure function of its configuration and input data, so
//! output bytes are fixed by `(config, input files)`. Trial `t` of a run with
//! seed `s` uses seed `s ^ t` for its train/test split and, shared across all
//! mechanisms, for the perturbation streams: two mechanisms evaluated with the
//! same seed see the same splits and the same per-record uniforms.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binary::{opt_binary_lenient, BinaryCase};
use crate::classify::{evaluate, train_logistic, Calibration, EvalOptions, FairnessReport, TrainParams};
use crate::dataset::{hex_digest, ingest_csv, ColumnsConfig, RawTable, TabularDataset};
use crate::dist::{delta, delta_prime, estimate_distribution, JointDistribution};
use crate::error::{Error, Result};
use crate::kary::{min_achievable_error, solve_opt_k, Certificate, SolverConfig};
use crate::mechanisms::{
    grr_matrix, induced_distribution, matrix_of_binary, perturb_dataset, perturb_values, privacy_level, rr_mechanism,
    ss_params, verify_ldp, Mechanism, MechanismMatrix, SsParams, LDP_TOL,
};
use crate::rng::{split_rng, trial_seed};
use crate::SensitiveColumn;

pub const SCHEMA_VERSION: u32 = 1;

/// Tolerance for recomputed quantities in [`cmd_verify`].
const RECOMPUTE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    NonPrivate,
    Rr,
    Grr,
    Ss,
    OptBinary,
    OptKary,
}

impl MechanismKind {
    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::NonPrivate => "non_private",
            MechanismKind::Rr => "rr",
            MechanismKind::Grr => "grr",
            MechanismKind::Ss => "ss",
            MechanismKind::OptBinary => "opt_binary",
            MechanismKind::OptKary => "opt_kary",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::InvalidConfig(format!("unknown mechanism {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub trials: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_fraction: 0.8, trials: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub calibration: Calibration,
    pub sensitive_as_feature: bool,
    pub skip_undefined_groups: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { calibration: Calibration::default(), sensitive_as_feature: true, skip_undefined_groups: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverTolerances {
    pub objective_tol: f64,
    pub feasibility_tol: f64,
    pub max_bisection_iters: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        let d = SolverConfig::new(1.0, 1.0);
        SolverTolerances {
            objective_tol: d.objective_tol,
            feasibility_tol: d.feasibility_tol,
            max_bisection_iters: d.max_bisection_iters,
        }
    }
}

impl SolverTolerances {
    fn config(&self, epsilon: f64, zeta: f64) -> SolverConfig {
        SolverConfig {
            epsilon,
            zeta,
            objective_tol: self.objective_tol,
            feasibility_tol: self.feasibility_tol,
            max_bisection_iters: self.max_bisection_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub mechanisms: Vec<MechanismKind>,
}

/// One declarative run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Input CSV; command-line flags may supply or override it.
    #[serde(default)]
    pub data: Option<String>,
    pub mechanism: MechanismKind,
    /// Required by every mechanism except `non_private`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Utility budget; required exactly when `opt_kary` is used.
    #[serde(default)]
    pub zeta: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub columns: ColumnsConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub training: TrainParams,
    #[serde(default)]
    pub solver: SolverTolerances,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    /// Run trials on the thread pool. Output is identical either way.
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn yes() -> bool {
    true
}

impl RunConfig {
    pub fn new(mechanism: MechanismKind, epsilon: Option<f64>, columns: ColumnsConfig) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            data: None,
            mechanism,
            epsilon,
            zeta: None,
            seed: 0,
            columns,
            split: SplitConfig::default(),
            eval: EvalConfig::default(),
            training: TrainParams::default(),
            solver: SolverTolerances::default(),
            sweep: None,
            parallel: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn uses(&self, kind: MechanismKind) -> bool {
        self.mechanism == kind || self.sweep.as_ref().is_some_and(|s| s.mechanisms.contains(&kind))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.split.train_fraction));
        }
        if self.split.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        match self.epsilon {
            Some(e) if !(e.is_finite() && e > 0.0) => return Err(Error::InvalidEpsilon(e)),
            None if self.mechanism != MechanismKind::NonPrivate && self.sweep.is_none() => {
                return bad(format!("mechanism {} needs epsilon", self.mechanism.name()))
            }
            _ => {}
        }
        match (self.uses(MechanismKind::OptKary), self.zeta) {
            (true, None) => return bad("opt_kary needs zeta".into()),
            (false, Some(_)) => return bad("zeta is only meaningful for opt_kary".into()),
            (true, Some(z)) if !(0.0..=1.0).contains(&z) => return bad(format!("zeta must lie in [0, 1], got {z}")),
            _ => {}
        }
        if let Calibration::Fixed(t) = self.eval.calibration {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("threshold must lie in (0, 1), got {t}"));
            }
        }
        if !(self.training.learning_rate > 0.0 && self.training.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        if let Some(s) = &self.sweep {
            if let Some(&e) = s.epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
                return Err(Error::InvalidEpsilon(e));
            }
        }
        self.solver.config(1.0, 1.0).validate()
    }

    fn train_params(&self) -> TrainParams {
        TrainParams { sensitive_as_feature: self.eval.sensitive_as_feature, ..self.training.clone() }
    }

    /// Reads the configured CSV.
    pub fn load_dataset(&self) -> Result<TabularDataset> {
        ingest_csv(Path::new(self.data_path()?), &self.columns)
    }

    pub fn data_path(&self) -> Result<&str> {
        self.data.as_deref().ok_or_else(|| Error::InvalidConfig("no input data given".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unfairness {
    pub delta: f64,
    pub delta_prime: f64,
}

impl Unfairness {
    fn of(dist: &JointDistribution) -> Result<Self> {
        Ok(Unfairness { delta: delta(dist)?, delta_prime: delta_prime(dist) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryDetails {
    pub p: f64,
    pub q: f64,
    pub case: BinaryCase,
    pub relabeled: bool,
    /// `Δ′` after perturbation over `Δ′` before.
    pub objective_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaryDetails {
    pub objective: f64,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub matrix: MechanismMatrix,
    pub predicted: Unfairness,
    /// `Pr(Z ≠ A)`.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub grr: Baseline,
    pub ss: SsParams,
}

/// Output of `design`; also the input of `perturb` and `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub schema_version: u32,
    pub mechanism: MechanismKind,
    pub k: usize,
    pub epsilon: Option<f64>,
    pub zeta: Option<f64>,
    pub sensitive_values: Vec<String>,
    /// Law of `(A, Y)` the design was computed from.
    pub distribution: JointDistribution,
    pub original: Unfairness,
    /// Present for every mechanism except subset selection.
    pub matrix: Option<MechanismMatrix>,
    pub subset: Option<SsParams>,
    pub epsilon_star: Option<f64>,
    pub predicted: Option<Unfairness>,
    /// `Pr(Z ≠ A)` under the designed mechanism.
    pub error: Option<f64>,
    pub min_achievable_error: Option<f64>,
    pub binary: Option<BinaryDetails>,
    pub kary: Option<KaryDetails>,
    pub comparison: Option<Comparison>,
}

impl DesignReport {
    pub fn as_mechanism(&self) -> Result<Mechanism> {
        match (&self.matrix, &self.subset) {
            (Some(m), None) => Ok(Mechanism::Matrix(m.clone())),
            (None, Some(s)) => Ok(Mechanism::Subset(*s)),
            _ => Err(Error::InvalidMechanism("report must hold exactly one of matrix and subset".into())),
        }
    }

    /// Hex SHA-256 of the report's JSON encoding.
    pub fn digest(&self) -> Result<String> {
        Ok(hex_digest(&serde_json::to_vec(self)?))
    }
}

struct Designed {
    mech: Mechanism,
    binary: Option<BinaryDetails>,
    kary: Option<KaryDetails>,
}

fn error_rate(dist: &JointDistribution, q: &MechanismMatrix) -> f64 {
    1.0 - dist.group_probs().iter().enumerate().map(|(i, p)| p * q.get(i, i)).sum::<f64>()
}

fn design_mechanism(
    kind: MechanismKind,
    dist: &JointDistribution,
    epsilon: Option<f64>,
    zeta: Option<f64>,
    tol: &SolverTolerances,
) -> Result<Designed> {
    let eps = || epsilon.ok_or_else(|| Error::InvalidConfig(format!("mechanism {} needs epsilon", kind.name())));
    let k = dist.k();
    let plain = |mech| Designed { mech, binary: None, kary: None };
    Ok(match kind {
        MechanismKind::NonPrivate => plain(Mechanism::Matrix(MechanismMatrix::identity(k)?)),
        MechanismKind::Grr => plain(Mechanism::Matrix(grr_matrix(k, eps()?)?)),
        MechanismKind::Ss => plain(Mechanism::Subset(ss_params(k, eps()?)?)),
        MechanismKind::Rr => {
            if k != 2 {
                return Err(Error::NotBinary(k));
            }
            plain(Mechanism::Matrix(matrix_of_binary(&rr_mechanism(eps()?)?)))
        }
        MechanismKind::OptBinary => {
            let r = opt_binary_lenient(dist, eps()?)?;
            Designed {
                mech: Mechanism::Matrix(matrix_of_binary(&r.mechanism())),
                binary: Some(BinaryDetails {
                    p: r.p,
                    q: r.q,
                    case: r.case,
                    relabeled: r.relabeled,
                    objective_ratio: r.objective,
                }),
                kary: None,
            }
        }
        MechanismKind::OptKary => {
            let zeta = zeta.ok_or_else(|| Error::InvalidConfig("opt_kary needs zeta".into()))?;
            let r = solve_opt_k(dist, &tol.config(eps()?, zeta))?;
            Designed {
                mech: Mechanism::Matrix(r.matrix()?),
                binary: None,
                kary: Some(KaryDetails { objective: r.objective, certificate: r.certificate }),
            }
        }
    })
}

/// Designs the configured mechanism for the dataset's `(A, Y)` law and
/// reports it next to the GRR and SS baselines at the same ε.
pub fn cmd_design(cfg: &RunConfig, data: &TabularDataset) -> Result<DesignReport> {
    cfg.validate()?;
    let dist = estimate_distribution(data)?;
    design_report(cfg.mechanism, &dist, cfg.epsilon, cfg.zeta, &cfg.solver, data.sensitive_values.clone())
}

pub fn design_report(
    kind: MechanismKind,
    dist: &JointDistribution,
    epsilon: Option<f64>,
    zeta: Option<f64>,
    tol: &SolverTolerances,
    sensitive_values: Vec<String>,
) -> Result<DesignReport> {
    let epsilon = if kind == MechanismKind::NonPrivate { None } else { epsilon };
    let designed = design_mechanism(kind, dist, epsilon, zeta, tol)?;
    let (matrix, subset) = match designed.mech {
        Mechanism::Matrix(m) => (Some(m), None),
        Mechanism::Subset(s) => (None, Some(s)),
    };
    if let (Some(m), Some(e)) = (&matrix, epsilon) {
        let check = verify_ldp(m, e, LDP_TOL);
        if !check.satisfied {
            return Err(Error::VerificationFailed(format!(
                "designed mechanism violates {e}-LDP by {}",
                check.max_violation
            )));
        }
    }
    let predicted = match &matrix {
        Some(m) => Some(Unfairness::of(&induced_distribution(dist, m)?)?),
        None => None,
    };
    let comparison = match epsilon {
        Some(e) => {
            let grr = grr_matrix(dist.k(), e)?;
            Some(Comparison {
                grr: Baseline {
                    predicted: Unfairness::of(&induced_distribution(dist, &grr)?)?,
                    error: error_rate(dist, &grr),
                    matrix: grr,
                },
                ss: ss_params(dist.k(), e)?,
            })
        }
        None => None,
    };
    Ok(DesignReport {
        schema_version: SCHEMA_VERSION,
        mechanism: kind,
        k: dist.k(),
        epsilon,
        zeta: if kind == MechanismKind::OptKary { zeta } else { None },
        sensitive_values,
        distribution: dist.clone(),
        original: Unfairness::of(dist)?,
        epsilon_star: matrix.as_ref().map(privacy_level).filter(|e| e.is_finite()),
        error: matrix.as_ref().map(|m| error_rate(dist, m)),
        min_achievable_error: epsilon.map(|e| min_achievable_error(dist, e)).transpose()?,
        predicted,
        matrix,
        subset,
        binary: designed.binary,
        kary: designed.kary,
        comparison,
    })
}

/// Perturbs the sensitive column of a CSV with the mechanism in `design`.
/// Every other cell is copied verbatim. Subset reports become `k` indicator
/// columns `<sensitive>=<value>` in place of the sensitive column. The first
/// line is a `#` comment naming the seed and the report digest.
pub fn cmd_perturb(table: &RawTable, columns: &ColumnsConfig, design: &DesignReport, seed: u64) -> Result<String> {
    let mech = design.as_mechanism()?;
    if let (Mechanism::Matrix(m), Some(e)) = (&mech, design.epsilon) {
        if !verify_ldp(m, e, LDP_TOL).satisfied {
            return Err(Error::VerificationFailed(format!("mechanism is not {e}-LDP")));
        }
    }
    if mech.k() != design.sensitive_values.len() {
        return Err(Error::InvalidMechanism("value map and mechanism sizes differ".into()));
    }
    if columns.sensitive_order.as_ref().is_some_and(|o| *o != design.sensitive_values) {
        return Err(Error::SchemaMismatch("sensitive_order differs from the mechanism's value map".into()));
    }
    let s_col = table.column(&columns.sensitive)?;
    let mut seen: Vec<&str> = Vec::new();
    for row in &table.rows {
        if !seen.contains(&row[s_col].as_str()) {
            seen.push(&row[s_col]);
        }
    }
    let lookup = |v: &str| design.sensitive_values.iter().position(|s| s == v);
    if seen.len() > mech.k() || seen.iter().any(|v| lookup(v).is_none()) {
        return Err(Error::AlphabetMismatch { mechanism: mech.k(), dataset: seen.len() });
    }
    let values: Vec<usize> = table.rows.iter().map(|r| lookup(&r[s_col]).expect("checked above")).collect();
    let perturbed = perturb_values(&values, &mech, seed);

    let mut out = format!("# seed={seed} mechanism_sha256={}\n", design.digest()?).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let splice = |row: &[String], middle: Vec<String>| -> Vec<String> {
            row[..s_col].iter().cloned().chain(middle).chain(row[s_col + 1..].iter().cloned()).collect()
        };
        let header_mid = match &perturbed {
            SensitiveColumn::Values(_) => vec![table.header[s_col].clone()],
            SensitiveColumn::Subsets(_) => {
                design.sensitive_values.iter().map(|v| format!("{}={v}", table.header[s_col])).collect()
            }
        };
        w.write_record(splice(&table.header, header_mid))?;
        for (i, row) in table.rows.iter().enumerate() {
            let mid = match &perturbed {
                SensitiveColumn::Values(z) => vec![design.sensitive_values[z[i]].clone()],
                SensitiveColumn::Subsets(s) => {
                    (0..mech.k()).map(|v| u8::from(s[i].contains(v)).to_string()).collect()
                }
            };
            w.write_record(splice(row, mid))?;
        }
        w.flush()?;
    }
    String::from_utf8(out).map_err(|e| Error::Io(e.to_string()))
}

pub const METRICS: [&str; 5] = ["accuracy", "sp_gap", "eo_gap", "meo_gap", "eod_gap"];

fn metric_values(r: &FairnessReport) -> [f64; 5] {
    [r.accuracy, r.sp_gap, r.eo_gap, r.meo_gap, r.eod_gap]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub train_records: usize,
    pub test_records: usize,
    pub report: FairnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MetricSummary {
    /// Mean and normal-approximation 95% interval. Values are sorted before
    /// summing so the result does not depend on trial completion order.
    pub fn of(metric: &str, values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let stderr = if v.len() > 1 {
            let mut dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
            dev.sort_by(f64::total_cmp);
            (dev.iter().sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        MetricSummary { metric: metric.to_owned(), mean, stderr, ci_low: mean - 1.96 * stderr, ci_high: mean + 1.96 * stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub schema_version: u32,
    pub mechanism: MechanismKind,
    pub epsilon: Option<f64>,
    pub zeta: Option<f64>,
    pub seed: u64,
    pub trials: usize,
    pub train_fraction: f64,
    pub source: String,
    pub summary: Vec<MetricSummary>,
    pub per_trial: Vec<TrialResult>,
}

impl EvaluateReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|m| m.metric == name)
    }

    pub fn per_trial_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["trial".to_owned(), "seed".to_owned()];
        header.extend(METRICS.iter().map(|m| (*m).to_owned()));
        header.push("threshold".into());
        w.write_record(&header)?;
        for t in &self.per_trial {
            let mut row = vec![t.trial.to_string(), t.seed.to_string()];
            row.extend(metric_values(&t.report).iter().map(f64::to_string));
            row.push(t.report.threshold.to_string());
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

fn summarize(trials: &[TrialResult]) -> Vec<MetricSummary> {
    METRICS
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let v: Vec<f64> = trials.iter().map(|t| metric_values(&t.report)[m]).collect();
            MetricSummary::of(name, &v)
        })
        .collect()
}

/// Shuffled `(train, test)` index split for one trial.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut split_rng(seed));
    let cut = ((n as f64 * train_fraction).floor() as usize).clamp(1, n.saturating_sub(1).max(1));
    let test = idx.split_off(cut);
    (idx, test)
}

fn run_trial(
    cfg: &RunConfig,
    kind: MechanismKind,
    epsilon: Option<f64>,
    data: &TabularDataset,
    trial: usize,
) -> Result<TrialResult> {
    let seed = trial_seed(cfg.seed, trial as u64);
    let (tr, te) = split_indices(data.len(), cfg.split.train_fraction, seed);
    let mut train = data.select(&tr);
    let test = data.select(&te);
    if kind != MechanismKind::NonPrivate {
        // designs only ever see the training split
        let dist = match kind {
            MechanismKind::OptBinary | MechanismKind::OptKary => estimate_distribution(&train)?,
            _ => JointDistribution::new(vec![1.0 / data.k() as f64; data.k()], vec![0.5; data.k()])?,
        };
        let designed = design_mechanism(kind, &dist, epsilon, cfg.zeta, &cfg.solver)?;
        train = perturb_dataset(&train, &designed.mech, seed)?;
    }
    let model = train_logistic(&train, &cfg.train_params(), cfg.eval.calibration)?;
    let report = evaluate(&model, &test, EvalOptions { skip_undefined_groups: cfg.eval.skip_undefined_groups })?;
    Ok(TrialResult { trial, seed, train_records: tr.len(), test_records: te.len(), report })
}

fn evaluate_mechanism(
    cfg: &RunConfig,
    kind: MechanismKind,
    epsilon: Option<f64>,
    data: &TabularDataset,
) -> Result<EvaluateReport> {
    if data.len() < 2 {
        return Err(Error::EmptyFile);
    }
    let epsilon = if kind == MechanismKind::NonPrivate { None } else { epsilon };
    let trials = cfg.split.trials;
    let per_trial: Vec<TrialResult> = if cfg.parallel {
        (0..trials).into_par_iter().map(|t| run_trial(cfg, kind, epsilon, data, t)).collect::<Result<_>>()?
    } else {
        (0..trials).map(|t| run_trial(cfg, kind, epsilon, data, t)).collect::<Result<_>>()?
    };
    Ok(EvaluateReport {
        schema_version: SCHEMA_VERSION,
        mechanism: kind,
        epsilon,
        zeta: if kind == MechanismKind::OptKary { cfg.zeta } else { None },
        seed: cfg.seed,
        trials,
        train_fraction: cfg.split.train_fraction,
        source: data.provenance.source.clone(),
        summary: summarize(&per_trial),
        per_trial,
    })
}

/// Trains on perturbed training splits and scores on the untouched test
/// splits, `trials` times.
pub fn cmd_evaluate(cfg: &RunConfig, data: &TabularDataset) -> Result<EvaluateReport> {
    cfg.validate()?;
    evaluate_mechanism(cfg, cfg.mechanism, cfg.epsilon, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub metric: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub schema_version: u32,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["mechanism", "epsilon", "metric", "mean", "ci_low", "ci_high"])?;
        for r in &self.rows {
            w.write_record([
                r.mechanism.name().to_owned(),
                r.epsilon.to_string(),
                r.metric.clone(),
                r.mean.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

/// `evaluate` for every `(mechanism, ε)` pair, flattened to one row per
/// metric. An empty mechanism list means the configured one.
pub fn cmd_sweep(
    cfg: &RunConfig,
    data: &TabularDataset,
    epsilons: &[f64],
    mechanisms: &[MechanismKind],
) -> Result<SweepTable> {
    if epsilons.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one epsilon".into()));
    }
    if let Some(&e) = epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Error::InvalidEpsilon(e));
    }
    let kinds = if mechanisms.is_empty() { vec![cfg.mechanism] } else { mechanisms.to_vec() };
    let cfg = &RunConfig { sweep: Some(SweepConfig { epsilons: epsilons.to_vec(), mechanisms: kinds.clone() }), ..cfg.clone() };
    cfg.validate()?;
    let mut rows = Vec::new();
    for kind in kinds {
        // the non-private run does not depend on ε
        let fixed = match kind {
            MechanismKind::NonPrivate => Some(evaluate_mechanism(cfg, kind, None, data)?),
            _ => None,
        };
        for &eps in epsilons {
            let report = match &fixed {
                Some(r) => r.clone(),
                None => evaluate_mechanism(cfg, kind, Some(eps), data)?,
            };
            rows.extend(report.summary.into_iter().map(|m| SweepRow {
                mechanism: kind,
                epsilon: eps,
                metric: m.metric,
                mean: m.mean,
                ci_low: m.ci_low,
                ci_high: m.ci_high,
            }));
        }
    }
    Ok(SweepTable { schema_version: SCHEMA_VERSION, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub passed: bool,
    pub checks: Vec<Check>,
}

struct Checks(Vec<Check>);

impl Checks {
    fn add(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.0.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    fn close(&mut self, name: impl Into<String>, got: f64, want: f64, tol: f64) {
        let diff = (got - want).abs();
        self.add(name, diff <= tol, format!("reported {got}, recomputed {want}, |diff| = {diff:e}"));
    }

    fn unfairness(&mut self, name: &str, got: &Unfairness, want: &Unfairness) {
        self.close(format!("{name}.delta"), got.delta, want.delta, RECOMPUTE_TOL);
        self.close(format!("{name}.delta_prime"), got.delta_prime, want.delta_prime, RECOMPUTE_TOL);
    }
}

fn verify_design(c: &mut Checks, d: &DesignReport) -> Result<()> {
    let dist = &d.distribution;
    c.add("k", d.k == dist.k() && d.k == d.sensitive_values.len(), format!("k = {}", d.k));
    c.unfairness("original", &d.original, &Unfairness::of(dist)?);
    match (&d.matrix, &d.subset) {
        (Some(m), None) => {
            if let Some(e) = d.epsilon {
                let r = verify_ldp(m, e, LDP_TOL);
                c.add("ldp", r.satisfied, format!("max violation {:e} at column {}", r.max_violation, r.worst_column));
            }
            let lvl = privacy_level(m);
            match d.epsilon_star {
                Some(s) => c.close("epsilon_star", s, lvl, RECOMPUTE_TOL),
                None => c.add("epsilon_star", lvl.is_infinite(), format!("recomputed {lvl}")),
            }
            match &d.predicted {
                Some(p) => c.unfairness("predicted", p, &Unfairness::of(&induced_distribution(dist, m)?)?),
                None => c.add("predicted", false, "missing for a matrix mechanism"),
            }
            if let Some(err) = d.error {
                c.close("error", err, error_rate(dist, m), RECOMPUTE_TOL);
            }
        }
        (None, Some(s)) => {
            let want = ss_params(s.k, s.epsilon)?;
            let ok = s.omega == want.omega && (s.p_true - want.p_true).abs() <= 1e-12 && Some(s.epsilon) == d.epsilon;
            c.add("subset", ok, format!("omega {} p_true {} vs {} {}", s.omega, s.p_true, want.omega, want.p_true));
        }
        _ => c.add("mechanism", false, "report must hold exactly one of matrix and subset"),
    }
    if let (Some(b), Some(e)) = (&d.binary, d.epsilon) {
        let r = opt_binary_lenient(dist, e)?;
        c.close("binary.p", b.p, r.p, 1e-12);
        c.close("binary.q", b.q, r.q, 1e-12);
    }
    Ok(())
}

fn verify_evaluation(c: &mut Checks, e: &EvaluateReport) {
    c.add("trials", e.per_trial.len() == e.trials, format!("{} rows for {} trials", e.per_trial.len(), e.trials));
    for t in &e.per_trial {
        let r = &t.report;
        let (sp, eo, meo, eod) = r.gaps_from_table();
        let worst = [sp - r.sp_gap, eo - r.eo_gap, meo - r.meo_gap, eod - r.eod_gap].iter().fold(0.0f64, |m, d| m.max(d.abs()));
        c.add(format!("trial {} gaps", t.trial), worst <= 1e-12, format!("largest gap discrepancy {worst:e}"));
        let acc = r.correct as f64 / r.total as f64;
        c.add(format!("trial {} accuracy", t.trial), (acc - r.accuracy).abs() <= 1e-12, format!("{}/{}", r.correct, r.total));
    }
    let want = summarize(&e.per_trial);
    for (got, want) in e.summary.iter().zip(&want) {
        c.close(format!("summary {}", want.metric), got.mean, want.mean, 1e-12);
        c.close(format!("summary {} ci_low", want.metric), got.ci_low, want.ci_low, 1e-12);
    }
    c.add("summary metrics", e.summary.len() == want.len(), format!("{} metrics", e.summary.len()));
}

/// Re-checks a design report (LDP at the declared ε, recomputed unfairness
/// figures) and/or an evaluation report (gaps from the per-group tables,
/// summary statistics from the trials).
pub fn cmd_verify(design: Option<&DesignReport>, evaluation: Option<&EvaluateReport>) -> Result<VerifyReport> {
    if design.is_none() && evaluation.is_none() {
        return Err(Error::InvalidConfig("nothing to verify".into()));
    }
    let mut c = Checks(Vec::new());
    if let Some(d) = design {
        verify_design(&mut c, d)?;
    }
    if let Some(e) = evaluation {
        verify_evaluation(&mut c, e);
    }
    Ok(VerifyReport { schema_version: SCHEMA_VERSION, passed: c.0.iter().all(|x| x.passed), checks: c.0 })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}
