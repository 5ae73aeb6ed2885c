//! Labeled function records: ingestion, splitting and summary statistics.

mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synthetic::{generate_synthetic, planted_sink, SyntheticSpec, DEFAULT_VOCABULARY};

pub const CVSS_MIN: f64 = 0.0;
pub const CVSS_MAX: f64 = 10.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invalid rows:\n{}", .0.join("\n"))]
    InvalidRows(Vec<String>),
    #[error(
        "inconsistent CWE-Type for {cwe_id}: row {first_row} says {first_type}, row {second_row} says {second_type}"
    )]
    InconsistentType {
        cwe_id: String,
        first_row: u64,
        first_type: String,
        second_row: u64,
        second_type: String,
    },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("no records")]
    Empty,
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One labeled function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnRecord {
    pub id: String,
    pub code: String,
    pub vulnerable: bool,
    #[serde(default)]
    pub cwe_id: Option<String>,
    #[serde(default)]
    pub cwe_type: Option<String>,
    #[serde(default)]
    pub cvss: Option<f64>,
}

impl VulnRecord {
    pub fn clean(id: impl Into<String>, code: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            code: code.into(),
            vulnerable: false,
            cwe_id: None,
            cwe_type: None,
            cvss: None,
        }
    }

    /// Check the per-record invariants (registry consistency is checked
    /// separately).
    pub fn validate(&self) -> Result<(), String> {
        if !self.vulnerable && (self.cwe_id.is_some() || self.cwe_type.is_some() || self.cvss.is_some()) {
            return Err(format!("record {}: non-vulnerable record carries labels", self.id));
        }
        if self.cwe_id.is_some() && self.cwe_type.is_none() {
            return Err(format!("record {}: cwe_id without cwe_type", self.id));
        }
        if let Some(score) = self.cvss {
            if !(CVSS_MIN..=CVSS_MAX).contains(&score) {
                return Err(format!("record {}: cvss {score} outside [0, 10]", self.id));
            }
        }
        Ok(())
    }
}

/// Ordered CWE-ID and CWE-Type labels with the many-to-one ID→Type map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LabelRegistry {
    pub cwe_ids: Vec<String>,
    pub cwe_types: Vec<String>,
    pub id_to_type: BTreeMap<String, String>,
}

/// Sort key that orders "CWE-20" before "CWE-119".
fn label_key(label: &str) -> (String, u64, String) {
    let digits_at = label
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_ascii_digit())
        .last()
        .map(|(i, _)| i);
    match digits_at {
        Some(i) => (
            label[..i].to_string(),
            label[i..].parse().unwrap_or(u64::MAX),
            label.to_string(),
        ),
        None => (label.to_string(), 0, label.to_string()),
    }
}

impl LabelRegistry {
    /// Build from an ID→Type map; labels are ordered naturally.
    pub fn from_map(id_to_type: BTreeMap<String, String>) -> Self {
        let mut cwe_ids: Vec<String> = id_to_type.keys().cloned().collect();
        cwe_ids.sort_by_key(|l| label_key(l));
        let types: BTreeSet<&String> = id_to_type.values().collect();
        let mut cwe_types: Vec<String> = types.into_iter().cloned().collect();
        cwe_types.sort_by_key(|l| label_key(l));
        Self {
            cwe_ids,
            cwe_types,
            id_to_type,
        }
    }

    /// Build from records, rejecting conflicting ID→Type assignments.
    pub fn from_records(records: &[VulnRecord]) -> Result<Self, CorpusError> {
        let mut seen: HashMap<&str, (&str, u64)> = HashMap::new();
        for (row, r) in records.iter().enumerate() {
            let (Some(id), Some(ty)) = (&r.cwe_id, &r.cwe_type) else {
                continue;
            };
            let row = row as u64 + 1;
            match seen.get(id.as_str()) {
                Some(&(prev_ty, prev_row)) if prev_ty != ty => {
                    return Err(CorpusError::InconsistentType {
                        cwe_id: id.clone(),
                        first_row: prev_row,
                        first_type: prev_ty.to_string(),
                        second_row: row,
                        second_type: ty.clone(),
                    });
                }
                Some(_) => {}
                None => {
                    seen.insert(id, (ty, row));
                }
            }
        }
        let map = seen
            .into_iter()
            .map(|(k, (v, _))| (k.to_string(), v.to_string()))
            .collect();
        Ok(Self::from_map(map))
    }

    pub fn id_index(&self, cwe_id: &str) -> Option<usize> {
        self.cwe_ids.iter().position(|c| c == cwe_id)
    }

    pub fn type_index(&self, cwe_type: &str) -> Option<usize> {
        self.cwe_types.iter().position(|c| c == cwe_type)
    }

    /// Type index implied by a CWE-ID index.
    pub fn type_of_id(&self, id_index: usize) -> Option<usize> {
        let id = self.cwe_ids.get(id_index)?;
        self.type_index(self.id_to_type.get(id)?)
    }

    pub fn n_ids(&self) -> usize {
        self.cwe_ids.len()
    }

    pub fn n_types(&self) -> usize {
        self.cwe_types.len()
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|source| io_err(path, source))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| io_err(path, source))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Csv,
    Jsonl,
}

impl DatasetFormat {
    /// Guess from the file extension; CSV unless the path ends in `.jsonl`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => Self::Jsonl,
            _ => Self::Csv,
        }
    }
}

pub const CSV_COLUMNS: [&str; 6] = ["id", "code", "vulnerable", "cwe_id", "cwe_type", "cvss"];

#[derive(Debug, Deserialize)]
struct RawRow {
    id: String,
    code: String,
    vulnerable: String,
    #[serde(default)]
    cwe_id: String,
    #[serde(default)]
    cwe_type: String,
    #[serde(default)]
    cvss: String,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn non_empty(s: String) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

impl RawRow {
    fn into_record(self, line: u64) -> Result<VulnRecord, CorpusError> {
        let vulnerable = parse_bool(&self.vulnerable).ok_or_else(|| CorpusError::Parse {
            line,
            message: format!("bad vulnerable flag {:?}", self.vulnerable),
        })?;
        let cvss = match self.cvss.trim() {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|e| CorpusError::Parse {
                line,
                message: format!("bad cvss {s:?}: {e}"),
            })?),
        };
        Ok(VulnRecord {
            id: self.id,
            code: self.code,
            vulnerable,
            cwe_id: non_empty(self.cwe_id),
            cwe_type: non_empty(self.cwe_type),
            cvss,
        })
    }
}

/// Read a CSV or JSONL dataset and build its label registry.
///
/// Rows are validated against the record invariants; every violating row is
/// reported with its line number.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<(Vec<VulnRecord>, LabelRegistry), CorpusError> {
    let file = File::open(path).map_err(|source| io_err(path, source))?;
    let mut rows: Vec<(u64, VulnRecord)> = Vec::new();
    match format {
        DatasetFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
            let headers = reader.headers()?.clone();
            for result in reader.records() {
                let record = result.map_err(|e| CorpusError::Parse {
                    line: e.position().map(|p| p.line()).unwrap_or(0),
                    message: e.to_string(),
                })?;
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                let raw: RawRow = record.deserialize(Some(&headers)).map_err(|e| CorpusError::Parse {
                    line,
                    message: e.to_string(),
                })?;
                rows.push((line, raw.into_record(line)?));
            }
        }
        DatasetFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let lineno = i as u64 + 1;
                let line = line.map_err(|source| io_err(path, source))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: VulnRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?;
                rows.push((lineno, record));
            }
        }
    }

    let invalid: Vec<String> = rows
        .iter()
        .filter_map(|(line, r)| r.validate().err().map(|e| format!("line {line}: {e}")))
        .collect();
    if !invalid.is_empty() {
        return Err(CorpusError::InvalidRows(invalid));
    }

    let records: Vec<VulnRecord> = rows.iter().map(|(_, r)| r.clone()).collect();
    let registry = LabelRegistry::from_records(&records).map_err(|e| match e {
        // Report file line numbers rather than record indices.
        CorpusError::InconsistentType {
            cwe_id,
            first_row,
            first_type,
            second_row,
            second_type,
        } => CorpusError::InconsistentType {
            cwe_id,
            first_row: rows[first_row as usize - 1].0,
            first_type,
            second_row: rows[second_row as usize - 1].0,
            second_type,
        },
        other => other,
    })?;
    Ok((records, registry))
}

/// Write records as CSV with the fixed column order.
pub fn write_csv<W: Write>(records: &[VulnRecord], out: W) -> Result<(), CorpusError> {
    let mut writer = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(out);
    writer.write_record(CSV_COLUMNS)?;
    for r in records {
        writer.write_record([
            r.id.as_str(),
            r.code.as_str(),
            if r.vulnerable { "true" } else { "false" },
            r.cwe_id.as_deref().unwrap_or(""),
            r.cwe_type.as_deref().unwrap_or(""),
            &r.cvss.map(|c| format!("{c}")).unwrap_or_default(),
        ])?;
    }
    writer.flush().map_err(|e| CorpusError::Csv(e.into()))?;
    Ok(())
}

pub fn write_jsonl<W: Write>(records: &[VulnRecord], mut out: W) -> Result<(), CorpusError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| CorpusError::Csv(e.into()))?;
    }
    Ok(())
}

/// Train/validation/test partition of a record list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<VulnRecord>,
    pub validation: Vec<VulnRecord>,
    pub test: Vec<VulnRecord>,
    pub seed: u64,
}

/// Record ids per partition, saved beside trained models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn manifest(&self) -> SplitManifest {
        let ids = |v: &[VulnRecord]| v.iter().map(|r| r.id.clone()).collect();
        SplitManifest {
            seed: self.seed,
            train: ids(&self.train),
            validation: ids(&self.validation),
            test: ids(&self.test),
        }
    }

    /// Keep only records matching `keep` in every partition.
    pub fn filter(&self, keep: impl Fn(&VulnRecord) -> bool) -> DatasetSplit {
        let f = |v: &[VulnRecord]| v.iter().filter(|r| keep(r)).cloned().collect();
        DatasetSplit {
            train: f(&self.train),
            validation: f(&self.validation),
            test: f(&self.test),
            seed: self.seed,
        }
    }
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Seeded random 80/10/10-style split.
///
/// Records whose CWE-ID would otherwise be missing from the training
/// partition are swapped into it, trading places with a training record whose
/// CWE-ID stays covered; partition sizes are unchanged whenever such a swap
/// partner exists.
pub fn split_dataset(records: &[VulnRecord], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit, CorpusError> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = ((n as f64) * ratios[0]).round() as usize;
    let n_val = (((n as f64) * ratios[1]).round() as usize).min(n - n_train);
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();

    let mut train_counts: HashMap<&str, usize> = HashMap::new();
    for &i in &train {
        if let Some(id) = &records[i].cwe_id {
            *train_counts.entry(id).or_default() += 1;
        }
    }

    for part in [&mut val, &mut test] {
        let mut k = 0;
        while k < part.len() {
            let rec = &records[part[k]];
            let Some(id) = rec.cwe_id.as_deref() else {
                k += 1;
                continue;
            };
            if train_counts.get(id).copied().unwrap_or(0) > 0 {
                k += 1;
                continue;
            }
            // Swap partner: the latest training record that is either
            // unlabeled or whose CWE-ID has another training occurrence.
            let partner = (0..train.len())
                .rev()
                .find(|&t| match records[train[t]].cwe_id.as_deref() {
                    None => true,
                    Some(other) => other != id && train_counts[other] > 1,
                });
            *train_counts.entry(id).or_default() += 1;
            match partner {
                Some(t) => {
                    if let Some(other) = records[train[t]].cwe_id.as_deref() {
                        *train_counts.get_mut(other).unwrap() -= 1;
                    }
                    std::mem::swap(&mut train[t], &mut part[k]);
                    k += 1;
                }
                None => {
                    train.push(part.remove(k));
                }
            }
        }
    }

    let take = |v: &[usize]| v.iter().map(|&i| records[i].clone()).collect();
    Ok(DatasetSplit {
        train: take(&train),
        validation: take(&val),
        test: take(&test),
        seed,
    })
}

/// Descriptive statistics of one numeric field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator, 0 for one value).
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FieldStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let q = |p: f64| {
            let pos = p * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            count: n,
            mean,
            std,
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n_records: usize,
    pub n_vulnerable: usize,
    pub n_cwe_ids: usize,
    pub n_cwe_types: usize,
    pub cvss: Option<FieldStats>,
    pub code_lines: FieldStats,
    pub code_tokens: FieldStats,
}

impl StatsSummary {
    pub fn to_text(&self) -> String {
        let mut rows = vec![vec![
            "field".to_string(),
            "count".into(),
            "mean".into(),
            "median".into(),
            "std".into(),
            "min".into(),
            "q1".into(),
            "q3".into(),
            "max".into(),
        ]];
        let mut push = |name: &str, s: &FieldStats| {
            rows.push(vec![
                name.to_string(),
                s.count.to_string(),
                format!("{:.2}", s.mean),
                format!("{:.2}", s.median),
                format!("{:.2}", s.std),
                format!("{:.2}", s.min),
                format!("{:.2}", s.q1),
                format!("{:.2}", s.q3),
                format!("{:.2}", s.max),
            ]);
        };
        if let Some(c) = &self.cvss {
            push("cvss", c);
        }
        push("code_lines", &self.code_lines);
        push("code_tokens", &self.code_tokens);
        format!(
            "records: {}  vulnerable: {}  cwe_ids: {}  cwe_types: {}\n{}",
            self.n_records,
            self.n_vulnerable,
            self.n_cwe_ids,
            self.n_cwe_types,
            crate::metrics::render_aligned(&rows)
        )
    }
}

/// Summary statistics over the fields present in `records`.
pub fn dataset_stats(records: &[VulnRecord]) -> Result<StatsSummary, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let cvss: Vec<f64> = records.iter().filter_map(|r| r.cvss).collect();
    let lines: Vec<f64> = records.iter().map(|r| r.code.lines().count() as f64).collect();
    let tokens: Vec<f64> = records
        .iter()
        .map(|r| r.code.split_whitespace().count() as f64)
        .collect();
    let ids: BTreeSet<&str> = records.iter().filter_map(|r| r.cwe_id.as_deref()).collect();
    let types: BTreeSet<&str> = records.iter().filter_map(|r| r.cwe_type.as_deref()).collect();
    Ok(StatsSummary {
        n_records: records.len(),
        n_vulnerable: records.iter().filter(|r| r.vulnerable).count(),
        n_cwe_ids: ids.len(),
        n_cwe_types: types.len(),
        cvss: FieldStats::from_values(&cvss),
        code_lines: FieldStats::from_values(&lines).expect("non-empty"),
        code_tokens: FieldStats::from_values(&tokens).expect("non-empty"),
    })
}
