//! Tabular records `(x, a, y)` and CSV ingestion.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mechanisms::SubsetReport;

/// The sensitive column of a dataset: either one value in `[k]` per record,
/// or (after subset selection) one reported subset per record.
#[derive(Debug, Clone, PartialEq)]
pub enum SensitiveColumn {
    Values(Vec<usize>),
    Subsets(Vec<SubsetReport>),
}

impl SensitiveColumn {
    pub fn len(&self) -> usize {
        match self {
            SensitiveColumn::Values(v) => v.len(),
            SensitiveColumn::Subsets(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Indicator encoding of record `row`: one-hot for values, membership
    /// indicators for subsets.
    pub fn indicators(&self, row: usize, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; k];
        match self {
            SensitiveColumn::Values(v) => out[v[row]] = 1.0,
            SensitiveColumn::Subsets(s) => {
                for &m in &s[row].members {
                    out[m] = 1.0;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub config_hash: String,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance { source: "<memory>".into(), config_hash: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub feature_names: Vec<String>,
    /// Row-major feature matrix.
    pub features: Vec<Vec<f64>>,
    pub sensitive: SensitiveColumn,
    /// Original literal of each sensitive index; its length is `k`.
    pub sensitive_values: Vec<String>,
    pub labels: Vec<u8>,
    pub provenance: Provenance,
}

impl TabularDataset {
    /// Builds an in-memory dataset with sensitive values named `"0".."k-1"`.
    pub fn new(
        feature_names: Vec<String>,
        features: Vec<Vec<f64>>,
        sensitive: Vec<usize>,
        k: usize,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let ds = TabularDataset {
            feature_names,
            features,
            sensitive: SensitiveColumn::Values(sensitive),
            sensitive_values: (0..k).map(|i| i.to_string()).collect(),
            labels,
            provenance: Provenance::default(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.sensitive_values.len()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Sensitive indices, or `None` when the column holds subset reports.
    pub fn sensitive_indices(&self) -> Option<&[usize]> {
        match &self.sensitive {
            SensitiveColumn::Values(v) => Some(v),
            SensitiveColumn::Subsets(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.features.len() != n || self.sensitive.len() != n {
            return Err(Error::SchemaMismatch(format!(
                "column lengths differ: {} labels, {} feature rows, {} sensitive",
                n,
                self.features.len(),
                self.sensitive.len()
            )));
        }
        let width = self.feature_names.len();
        if let Some(row) = self.features.iter().position(|r| r.len() != width) {
            return Err(Error::SchemaMismatch(format!("feature row {row} has wrong width")));
        }
        let k = self.k();
        match &self.sensitive {
            SensitiveColumn::Values(v) => {
                if let Some(&bad) = v.iter().find(|&&a| a >= k) {
                    return Err(Error::SchemaMismatch(format!("sensitive index {bad} >= k = {k}")));
                }
            }
            SensitiveColumn::Subsets(s) => {
                if s.iter().any(|r| r.members.iter().any(|&m| m >= k)) {
                    return Err(Error::SchemaMismatch("subset member out of range".into()));
                }
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y > 1) {
            return Err(Error::NonBinaryLabel(bad.to_string()));
        }
        Ok(())
    }

    /// Records at `rows`, in that order.
    pub fn select(&self, rows: &[usize]) -> TabularDataset {
        let sensitive = match &self.sensitive {
            SensitiveColumn::Values(v) => SensitiveColumn::Values(rows.iter().map(|&r| v[r]).collect()),
            SensitiveColumn::Subsets(s) => {
                SensitiveColumn::Subsets(rows.iter().map(|&r| s[r].clone()).collect())
            }
        };
        TabularDataset {
            feature_names: self.feature_names.clone(),
            features: rows.iter().map(|&r| self.features[r].clone()).collect(),
            sensitive,
            sensitive_values: self.sensitive_values.clone(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Which features to load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureSelection {
    /// `"auto"`: every column except the sensitive and label columns.
    Auto(AutoTag),
    List(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for FeatureSelection {
    fn default() -> Self {
        FeatureSelection::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnsConfig {
    pub sensitive: String,
    pub label: String,
    /// Literal of the positive class. When absent, labels must be `0`/`1`.
    #[serde(default)]
    pub positive_label: Option<String>,
    #[serde(default)]
    pub features: FeatureSelection,
    /// Columns to one-hot encode even if every cell parses as a number.
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Explicit order of sensitive values; defaults to first appearance.
    #[serde(default)]
    pub sensitive_order: Option<Vec<String>>,
}

impl ColumnsConfig {
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("columns config serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Raw CSV contents: header and string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            rows.push(rec?.iter().map(str::to_owned).collect());
        }
        if header.is_empty() || rows.is_empty() {
            return Err(Error::EmptyFile);
        }
        Ok(RawTable { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    }
}

/// Maps sensitive literals to `[k]`.
pub fn sensitive_value_map(cells: &[&str], order: Option<&[String]>) -> Result<Vec<String>> {
    match order {
        Some(order) => {
            for (row, c) in cells.iter().enumerate() {
                if !order.iter().any(|o| o == c) {
                    return Err(Error::UnparseableCell { row, column: format!("sensitive value {c:?}") });
                }
            }
            Ok(order.to_vec())
        }
        None => {
            let mut seen: Vec<String> = Vec::new();
            for c in cells {
                if !seen.iter().any(|s| s == c) {
                    seen.push((*c).to_owned());
                }
            }
            Ok(seen)
        }
    }
}

pub fn ingest_csv(path: &Path, columns: &ColumnsConfig) -> Result<TabularDataset> {
    let table = RawTable::read(path)?;
    let mut ds = ingest_table(&table, columns)?;
    ds.provenance = Provenance { source: path.display().to_string(), config_hash: columns.hash() };
    Ok(ds)
}

pub fn ingest_table(table: &RawTable, columns: &ColumnsConfig) -> Result<TabularDataset> {
    let s_col = table.column(&columns.sensitive)?;
    let y_col = table.column(&columns.label)?;

    let labels = parse_labels(table, y_col, columns.positive_label.as_deref())?;

    let s_cells: Vec<&str> = table.rows.iter().map(|r| r[s_col].as_str()).collect();
    let values = sensitive_value_map(&s_cells, columns.sensitive_order.as_deref())?;
    let index: HashMap<&str, usize> = values.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let sensitive: Vec<usize> = s_cells.iter().map(|c| index[c]).collect();

    let (chosen, explicit) = match &columns.features {
        FeatureSelection::Auto(_) => {
            let cols = (0..table.header.len()).filter(|&c| c != s_col && c != y_col).collect::<Vec<_>>();
            (cols, false)
        }
        FeatureSelection::List(names) => {
            let cols = names.iter().map(|n| table.column(n)).collect::<Result<Vec<_>>>()?;
            (cols, true)
        }
    };

    let n = table.rows.len();
    let mut feature_names = Vec::new();
    let mut feature_cols: Vec<Vec<f64>> = Vec::new();
    for &c in &chosen {
        let name = &table.header[c];
        let categorical = columns.categorical.iter().any(|x| x == name);
        let parsed: Option<Vec<f64>> = if categorical {
            None
        } else {
            table.rows.iter().map(|r| r[c].trim().parse::<f64>().ok().filter(|v| v.is_finite())).collect()
        };
        match parsed {
            Some(col) => {
                feature_names.push(name.clone());
                feature_cols.push(col);
            }
            None if explicit && !categorical => {
                let row = table
                    .rows
                    .iter()
                    .position(|r| r[c].trim().parse::<f64>().map(|v| !v.is_finite()).unwrap_or(true))
                    .unwrap_or(0);
                return Err(Error::UnparseableCell { row, column: name.clone() });
            }
            None => {
                let cells: Vec<&str> = table.rows.iter().map(|r| r[c].as_str()).collect();
                for level in sensitive_value_map(&cells, None)? {
                    feature_names.push(format!("{name}={level}"));
                    feature_cols.push(cells.iter().map(|&v| f64::from(u8::from(v == level))).collect());
                }
            }
        }
    }

    let features = (0..n).map(|r| feature_cols.iter().map(|col| col[r]).collect()).collect();
    let ds = TabularDataset {
        feature_names,
        features,
        sensitive: SensitiveColumn::Values(sensitive),
        sensitive_values: values,
        labels,
        provenance: Provenance { source: "<table>".into(), config_hash: columns.hash() },
    };
    ds.validate()?;
    Ok(ds)
}

fn parse_labels(table: &RawTable, col: usize, positive: Option<&str>) -> Result<Vec<u8>> {
    match positive {
        Some(pos) => {
            let mut negative: Option<&str> = None;
            table
                .rows
                .iter()
                .map(|r| {
                    let cell = r[col].as_str();
                    if cell == pos {
                        return Ok(1);
                    }
                    match negative {
                        None => {
                            negative = Some(cell);
                            Ok(0)
                        }
                        Some(neg) if neg == cell => Ok(0),
                        Some(_) => Err(Error::NonBinaryLabel(cell.to_owned())),
                    }
                })
                .collect()
        }
        None => table
            .rows
            .iter()
            .map(|r| match r[col].trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::NonBinaryLabel(other.to_owned())),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn cols(sensitive: &str, label: &str, pos: Option<&str>) -> ColumnsConfig {
        ColumnsConfig {
            sensitive: sensitive.into(),
            label: label.into(),
            positive_label: pos.map(Into::into),
            features: FeatureSelection::default(),
            categorical: vec![],
            sensitive_order: None,
        }
    }

    #[test]
    fn three_row_fixture() {
        let f = write_tmp("age,sex,job,income\n30,F,eng,>50K\n41,M,art,<=50K\n25,F,art,>50K\n");
        let ds = ingest_csv(f.path(), &cols("sex", "income", Some(">50K"))).unwrap();
        assert_eq!(ds.sensitive_values, vec!["F", "M"]);
        assert_eq!(ds.sensitive_indices().unwrap(), &[0, 1, 0]);
        assert_eq!(ds.labels, vec![1, 0, 1]);
        assert_eq!(ds.feature_names, vec!["age", "job=eng", "job=art"]);
        assert_eq!(ds.features[1], vec![41.0, 0.0, 1.0]);
    }

    #[test]
    fn unseen_label_literal_is_rejected() {
        let f = write_tmp("s,y\na,yes\nb,no\na,maybe\n");
        let err = ingest_csv(f.path(), &cols("s", "y", Some("yes"))).unwrap_err();
        assert_eq!(err, Error::NonBinaryLabel("maybe".into()));
        let f = write_tmp("s,y\na,1\nb,2\n");
        assert!(matches!(ingest_csv(f.path(), &cols("s", "y", None)), Err(Error::NonBinaryLabel(_))));
    }

    #[test]
    fn missing_column_and_empty_file() {
        let f = write_tmp("s,y\na,1\n");
        assert_eq!(ingest_csv(f.path(), &cols("race", "y", None)).unwrap_err(), Error::MissingColumn("race".into()));
        let f = write_tmp("s,y\n");
        assert_eq!(ingest_csv(f.path(), &cols("s", "y", None)).unwrap_err(), Error::EmptyFile);
    }

    #[test]
    fn explicit_numeric_feature_must_parse() {
        let f = write_tmp("x,s,y\n1.5,a,1\noops,b,0\n");
        let mut c = cols("s", "y", None);
        c.features = FeatureSelection::List(vec!["x".into()]);
        assert_eq!(
            ingest_csv(f.path(), &c).unwrap_err(),
            Error::UnparseableCell { row: 1, column: "x".into() }
        );
    }

    #[test]
    fn explicit_sensitive_order() {
        let f = write_tmp("s,y\nb,1\na,0\nc,1\n");
        let mut c = cols("s", "y", None);
        c.sensitive_order = Some(vec!["a".into(), "b".into(), "c".into()]);
        let ds = ingest_csv(f.path(), &c).unwrap();
        assert_eq!(ds.sensitive_indices().unwrap(), &[1, 0, 2]);
        assert_eq!(ds.k(), 3);
    }

    #[test]
    fn features_config_parses_auto_or_list() {
        let auto: FeatureSelection = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(auto, FeatureSelection::default());
        let list: FeatureSelection = serde_json::from_str("[\"a\",\"b\"]").unwrap();
        assert_eq!(list, FeatureSelection::List(vec!["a".into(), "b".into()]));
    }

    #[test]
    fn hash_is_stable() {
        let c = cols("s", "y", None);
        assert_eq!(c.hash(), c.clone().hash());
        assert_eq!(c.hash().len(), 64);
    }
}
