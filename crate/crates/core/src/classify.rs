//! Logistic-regression baseline and classifier fairness gaps.
//!
//! Gaps are maxima over group pairs of differences in per-group rates:
//! positive-prediction rate (statistical parity), true-positive rate (equal
//! opportunity) and the `(TPR, FPR)` pair (mean equalized odds and equalized
//! odds).

use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop once the gradient's Euclidean norm falls below this.
    pub grad_tol: f64,
    pub l2: f64,
    /// Append a one-hot encoding of the sensitive value to the features.
    /// Run configurations set this from their evaluation section.
    #[serde(skip)]
    pub sensitive_as_feature: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { learning_rate: 0.5, max_epochs: 2000, grad_tol: 1e-6, l2: 0.0, sensitive_as_feature: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Predict positive when the score exceeds this probability.
    Fixed(f64),
    /// Pick the threshold on the evaluation set so the positive-prediction
    /// rate matches the label base rate, ties resolved toward fewer positives.
    BaseRateMatch,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration::Fixed(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    /// Feature weights, then sensitive one-hot weights (if used), then bias.
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub k: usize,
    pub sensitive_as_feature: bool,
    pub calibration: Calibration,
    pub epochs_run: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LinearClassifier {
    pub fn num_features(&self) -> usize {
        self.means.len()
    }

    fn design_row(&self, features: &[f64], sensitive: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(features.iter().zip(&self.means).zip(&self.scales).map(|((x, m), s)| (x - m) / s));
        if self.sensitive_as_feature {
            out.extend_from_slice(sensitive);
        }
        out.push(1.0);
    }

    /// Predicted `Pr(Y = 1)` for every record, using the record's own
    /// sensitive column.
    pub fn predict_proba(&self, data: &TabularDataset) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.weights.len());
        (0..data.len())
            .map(|i| {
                self.design_row(&data.features[i], &data.sensitive.indicators(i, self.k), &mut row);
                sigmoid(row.iter().zip(&self.weights).map(|(a, b)| a * b).sum())
            })
            .collect()
    }
}

/// Full-batch gradient descent on the mean log-loss from zero weights, on
/// standardized features.
pub fn train_logistic(train: &TabularDataset, params: &TrainParams, calibration: Calibration) -> Result<LinearClassifier> {
    let n = train.len();
    let pos = train.labels.iter().filter(|&&y| y == 1).count();
    if pos < 2 || n - pos < 2 {
        return Err(Error::SingleClassTrainingSet);
    }
    if let Calibration::Fixed(t) = calibration {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidConfig(format!("threshold must lie in (0, 1), got {t}")));
        }
    }
    let d = train.num_features();
    let k = train.k();
    let mut means = vec![0.0; d];
    let mut scales = vec![0.0; d];
    for row in &train.features {
        means.iter_mut().zip(row).for_each(|(m, x)| *m += x / n as f64);
    }
    for row in &train.features {
        scales.iter_mut().zip(row).zip(&means).for_each(|((s, x), m)| *s += (x - m).powi(2) / n as f64);
    }
    scales.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });

    let mut model = LinearClassifier {
        weights: vec![0.0; d + if params.sensitive_as_feature { k } else { 0 } + 1],
        means,
        scales,
        k,
        sensitive_as_feature: params.sensitive_as_feature,
        calibration,
        epochs_run: 0,
    };
    let mut design = Vec::with_capacity(n);
    let mut row = Vec::new();
    for i in 0..n {
        model.design_row(&train.features[i], &train.sensitive.indicators(i, k), &mut row);
        design.push(row.clone());
    }
    let y: Vec<f64> = train.labels.iter().map(|&v| f64::from(v)).collect();
    let p = model.weights.len();
    let mut grad = vec![0.0; p];
    for epoch in 0..params.max_epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (x, &yi) in design.iter().zip(&y) {
            let z: f64 = x.iter().zip(&model.weights).map(|(a, b)| a * b).sum();
            let r = sigmoid(z) - yi;
            loss += softplus(z) - yi * z;
            grad.iter_mut().zip(x).for_each(|(g, a)| *g += r * a);
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        grad.iter_mut().zip(&model.weights).for_each(|(g, w)| *g = *g / n as f64 + params.l2 * w);
        model.epochs_run = epoch + 1;
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < params.grad_tol {
            break;
        }
        model.weights.iter_mut().zip(&grad).for_each(|(w, g)| *w -= params.learning_rate * g);
    }
    if model.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    Ok(model)
}

/// Counts for one group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    count: usize,
    predicted: usize,
    positives: usize,
    negatives: usize,
    true_pos: usize,
    false_pos: usize,
}

fn tally(preds: &[u8], labels: Option<&[u8]>, groups: &[usize], k: usize) -> Vec<Tally> {
    let mut t = vec![Tally::default(); k];
    for (i, (&p, &g)) in preds.iter().zip(groups).enumerate() {
        let e = &mut t[g];
        e.count += 1;
        e.predicted += usize::from(p == 1);
        if let Some(y) = labels {
            if y[i] == 1 {
                e.positives += 1;
                e.true_pos += usize::from(p == 1);
            } else {
                e.negatives += 1;
                e.false_pos += usize::from(p == 1);
            }
        }
    }
    t
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// `max − min`, the largest pairwise absolute difference.
fn spread(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if v.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// `(max pair of ½(|ΔTPR| + |ΔFPR|), max pair of max(|ΔTPR|, |ΔFPR|))`.
fn odds_gaps(tpr: &[f64], fpr: &[f64]) -> (f64, f64) {
    let (mut meo, mut eod) = (0.0f64, 0.0f64);
    for a in 0..tpr.len() {
        for b in a + 1..tpr.len() {
            let (dt, df) = ((tpr[a] - tpr[b]).abs(), (fpr[a] - fpr[b]).abs());
            meo = meo.max(0.5 * (dt + df));
            eod = eod.max(dt.max(df));
        }
    }
    (meo, eod)
}

fn check_lengths(preds: &[u8], groups: &[usize], labels: Option<&[u8]>) -> Result<()> {
    if preds.len() != groups.len() || labels.is_some_and(|l| l.len() != preds.len()) {
        return Err(Error::SchemaMismatch("predictions, labels and groups differ in length".into()));
    }
    Ok(())
}

fn num_groups(groups: &[usize]) -> usize {
    groups.iter().max().map_or(0, |m| m + 1)
}

pub fn statistical_parity_gap(preds: &[u8], groups: &[usize], k: usize) -> Result<f64> {
    check_lengths(preds, groups, None)?;
    let t = tally(preds, None, groups, k.max(num_groups(groups)));
    let rates = t
        .iter()
        .enumerate()
        .map(|(g, e)| ratio(e.predicted, e.count).ok_or(Error::EmptyGroup(g)))
        .collect::<Result<Vec<_>>>()?;
    Ok(spread(&rates))
}

fn tprs(t: &[Tally]) -> Result<Vec<f64>> {
    t.iter()
        .enumerate()
        .map(|(g, e)| ratio(e.true_pos, e.positives).ok_or(Error::UndefinedRate { group: g, rate: "TPR" }))
        .collect()
}

fn fprs(t: &[Tally]) -> Result<Vec<f64>> {
    t.iter()
        .enumerate()
        .map(|(g, e)| ratio(e.false_pos, e.negatives).ok_or(Error::UndefinedRate { group: g, rate: "FPR" }))
        .collect()
}

pub fn equalized_opportunity_gap(preds: &[u8], labels: &[u8], groups: &[usize], k: usize) -> Result<f64> {
    check_lengths(preds, groups, Some(labels))?;
    Ok(spread(&tprs(&tally(preds, Some(labels), groups, k.max(num_groups(groups))))?))
}

/// `(Δ_MEO, Δ_EOd)`.
pub fn equalized_odds_gaps(preds: &[u8], labels: &[u8], groups: &[usize], k: usize) -> Result<(f64, f64)> {
    check_lengths(preds, groups, Some(labels))?;
    let t = tally(preds, Some(labels), groups, k.max(num_groups(groups)));
    Ok(odds_gaps(&tprs(&t)?, &fprs(&t)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: usize,
    pub value: String,
    pub count: usize,
    pub positive_rate: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub sp_gap: f64,
    pub eo_gap: f64,
    pub meo_gap: f64,
    pub eod_gap: f64,
    pub threshold: f64,
    pub positive_prediction_rate: f64,
    pub base_rate: f64,
    pub per_group: Vec<GroupRow>,
    /// Groups left out of a gap because a rate was undefined or the group
    /// was empty.
    pub skipped_groups: Vec<usize>,
}

impl FairnessReport {
    pub fn error_rate(&self) -> f64 {
        (self.total - self.correct) as f64 / self.total as f64
    }

    /// Gaps recomputed from the per-group table.
    pub fn gaps_from_table(&self) -> (f64, f64, f64, f64) {
        let sp: Vec<f64> = self.per_group.iter().filter_map(|g| g.positive_rate).collect();
        let both: Vec<(f64, f64)> = self.per_group.iter().filter_map(|g| Some((g.tpr?, g.fpr?))).collect();
        let tpr: Vec<f64> = both.iter().map(|p| p.0).collect();
        let fpr: Vec<f64> = both.iter().map(|p| p.1).collect();
        let eo: Vec<f64> = self.per_group.iter().filter_map(|g| g.tpr).collect();
        let (meo, eod) = odds_gaps(&tpr, &fpr);
        (spread(&sp), spread(&eo), meo, eod)
    }

    pub fn per_group_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group", "value", "count", "positive_rate", "tpr", "fpr"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for g in &self.per_group {
            w.write_record([
                g.group.to_string(),
                g.value.clone(),
                g.count.to_string(),
                opt(g.positive_rate),
                opt(g.tpr),
                opt(g.fpr),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub skip_undefined_groups: bool,
}

/// Threshold `τ` with `#{s > τ}` as close to `target` as possible without
/// exceeding it.
fn base_rate_threshold(scores: &[f64], target: usize) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if target >= sorted.len() {
        return sorted.last().map_or(0.0, |m| m.next_down());
    }
    sorted[target]
}

/// Scores `test` and reports accuracy and gaps. Groups come from the test
/// set's own sensitive column, which should hold the unperturbed values.
pub fn evaluate(model: &LinearClassifier, test: &TabularDataset, opts: EvalOptions) -> Result<FairnessReport> {
    if test.num_features() != model.num_features() || test.k() != model.k {
        return Err(Error::SchemaMismatch(format!(
            "model expects {} features and k = {}, test set has {} and k = {}",
            model.num_features(),
            model.k,
            test.num_features(),
            test.k()
        )));
    }
    let groups = test.sensitive_indices().ok_or(Error::SubsetOutput)?;
    let n = test.len();
    if n == 0 {
        return Err(Error::EmptyFile);
    }
    let scores = model.predict_proba(test);
    let positives = test.labels.iter().filter(|&&y| y == 1).count();
    let threshold = match model.calibration {
        Calibration::Fixed(t) => t,
        Calibration::BaseRateMatch => base_rate_threshold(&scores, positives),
    };
    let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s > threshold)).collect();
    let correct = preds.iter().zip(&test.labels).filter(|(p, y)| p == y).count();

    let k = test.k();
    let t = tally(&preds, Some(&test.labels), groups, k);
    let mut skipped = Vec::new();
    let mut per_group = Vec::with_capacity(k);
    for (g, e) in t.iter().enumerate() {
        let row = GroupRow {
            group: g,
            value: test.sensitive_values.get(g).cloned().unwrap_or_default(),
            count: e.count,
            positive_rate: ratio(e.predicted, e.count),
            tpr: ratio(e.true_pos, e.positives),
            fpr: ratio(e.false_pos, e.negatives),
        };
        let missing = if row.positive_rate.is_none() {
            Some(Error::EmptyGroup(g))
        } else if row.tpr.is_none() {
            Some(Error::UndefinedRate { group: g, rate: "TPR" })
        } else if row.fpr.is_none() {
            Some(Error::UndefinedRate { group: g, rate: "FPR" })
        } else {
            None
        };
        if let Some(err) = missing {
            if !opts.skip_undefined_groups {
                return Err(err);
            }
            skipped.push(g);
        }
        per_group.push(row);
    }
    let mut report = FairnessReport {
        accuracy: correct as f64 / n as f64,
        correct,
        total: n,
        sp_gap: 0.0,
        eo_gap: 0.0,
        meo_gap: 0.0,
        eod_gap: 0.0,
        threshold,
        positive_prediction_rate: preds.iter().filter(|&&p| p == 1).count() as f64 / n as f64,
        base_rate: positives as f64 / n as f64,
        per_group,
        skipped_groups: skipped,
    };
    (report.sp_gap, report.eo_gap, report.meo_gap, report.eod_gap) = report.gaps_from_table();
    Ok(report)
}
