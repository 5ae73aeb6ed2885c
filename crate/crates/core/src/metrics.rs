//! Evaluation arithmetic: accuracy, squared/absolute error and confusion
//! tables.
//!
//! Predictions entering this module are already hard labels; argmax ties are
//! broken upstream by the lowest class index.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("unknown class index {index} (only {classes} classes)")]
    UnknownClass { index: usize, classes: usize },
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Correctly predicted / total.
pub fn multiclass_accuracy<T: PartialEq>(preds: &[T], labels: &[T]) -> Result<f64, MetricsError> {
    check_lengths(preds.len(), labels.len())?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Mean squared error, `(1/n) Σ (y - ŷ)²`.
pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(preds.len(), targets.len())?;
    let sum: f64 = preds.iter().zip(targets).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(sum / preds.len() as f64)
}

/// Mean absolute error, `(1/n) Σ |y - ŷ|`.
pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(preds.len(), targets.len())?;
    let sum: f64 = preds.iter().zip(targets).map(|(p, t)| (t - p).abs()).sum();
    Ok(sum / preds.len() as f64)
}

/// Counts matrix with rows indexed by the true class and columns by the
/// predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn correct(&self, class: usize) -> u64 {
        self.counts[class][class]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Sum of all off-diagonal cells, i.e. the number of misclassifications.
    pub fn errors(&self) -> u64 {
        self.total() - self.trace()
    }

    /// Diagonal over row sum; `None` for classes absent from the labels.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes.len())
            .map(|i| {
                let support = self.support(i);
                (support > 0).then(|| self.correct(i) as f64 / support as f64)
            })
            .collect()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.trace() as f64 / total as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth\\pred");
        for c in &self.classes {
            let _ = write!(out, ",{}", csv_field(c));
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(&csv_field(name));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["truth\\pred".to_string()];
        header.extend(self.classes.iter().cloned());
        let mut rows = vec![header];
        for (name, row) in self.classes.iter().zip(&self.counts) {
            let mut r = vec![name.clone()];
            r.extend(row.iter().map(|v| v.to_string()));
            rows.push(r);
        }
        render_aligned(&rows)
    }

    /// Per-class table in the shape "class, support, correct, accuracy,
    /// proportion of the test set".
    pub fn per_class_table(&self) -> PerClassTable {
        let total = self.total().max(1) as f64;
        let rows = (0..self.classes.len())
            .map(|i| PerClassRow {
                class: self.classes[i].clone(),
                support: self.support(i),
                correct: self.correct(i),
                accuracy: self.per_class_accuracy()[i],
                proportion: self.support(i) as f64 / total,
            })
            .collect();
        PerClassTable { rows }
    }
}

/// Build a confusion matrix from class indices.
pub fn confusion_matrix(
    preds: &[usize],
    labels: &[usize],
    classes: &[String],
) -> Result<ConfusionMatrix, MetricsError> {
    check_lengths(preds.len(), labels.len())?;
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &l) in preds.iter().zip(labels) {
        for index in [p, l] {
            if index >= k {
                return Err(MetricsError::UnknownClass { index, classes: k });
            }
        }
        counts[l][p] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassRow {
    pub class: String,
    pub support: u64,
    pub correct: u64,
    pub accuracy: Option<f64>,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassTable {
    pub rows: Vec<PerClassRow>,
}

impl PerClassTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,support,correct,accuracy,proportion\n");
        for r in &self.rows {
            let acc = r.accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4}",
                csv_field(&r.class),
                r.support,
                r.correct,
                acc,
                r.proportion
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut rows = vec![vec![
            "class".to_string(),
            "accuracy".to_string(),
            "correct".to_string(),
            "proportion".to_string(),
        ]];
        for r in &self.rows {
            let acc = r
                .accuracy
                .map(|a| format!("{:.0}%", a * 100.0))
                .unwrap_or_else(|| "n/a".into());
            rows.push(vec![
                r.class.clone(),
                acc,
                format!("{}/{}", r.correct, r.support),
                format!("{:.1}%", r.proportion * 100.0),
            ]);
        }
        render_aligned(&rows)
    }
}

/// Fraction of CWE-ID misclassifications whose predicted CWE-Type is still
/// correct. `None` when there are no CWE-ID errors.
pub fn type_consistent_rate(
    pred_ids: &[usize],
    true_ids: &[usize],
    pred_types: &[usize],
    true_types: &[usize],
) -> Result<Option<f64>, MetricsError> {
    check_lengths(pred_ids.len(), true_ids.len())?;
    check_lengths(pred_types.len(), true_types.len())?;
    check_lengths(pred_ids.len(), pred_types.len())?;
    let mut errors = 0usize;
    let mut consistent = 0usize;
    for i in 0..pred_ids.len() {
        if pred_ids[i] != true_ids[i] {
            errors += 1;
            if pred_types[i] == true_types[i] {
                consistent += 1;
            }
        }
    }
    Ok((errors > 0).then(|| consistent as f64 / errors as f64))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Left-align the first column, right-align the rest.
pub fn render_aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0; cols];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i == 0 {
                let _ = write!(line, "{:<w$}", cell, w = widths[0]);
            } else {
                let _ = write!(line, "  {:>w$}", cell, w = widths[i]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(multiclass_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(multiclass_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        let labels = vec![0u8; 879];
        let mut preds = vec![1u8; 879];
        preds[..567].fill(0);
        let acc = multiclass_accuracy(&preds, &labels).unwrap();
        assert!((acc - 0.645_051_194_539_249_1).abs() < 1e-12);
        assert_eq!(multiclass_accuracy::<u8>(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn error_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[0.0, 4.0]).unwrap(), 2.5);
        assert_eq!(mae(&[1.0, 2.0], &[0.0, 4.0]).unwrap(), 1.5);
        assert_eq!(mse(&[5.0], &[2.0]).unwrap(), 9.0);
        assert_eq!(mae(&[5.0], &[2.0]).unwrap(), 3.0);
        assert_eq!(mse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mae(&[], &[]), Err(MetricsError::Empty));
        assert_eq!(mse(&[1.0], &[]), Err(MetricsError::LengthMismatch(1, 0)));
    }

    #[test]
    fn confusion_identities() {
        let labels = [0, 0, 1, 1, 1, 2];
        let preds = [0, 1, 1, 1, 2, 2];
        let cm = confusion_matrix(&preds, &labels, &names(3)).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1, 0], vec![0, 2, 1], vec![0, 0, 1]]);
        assert_eq!(cm.errors(), 2);
        assert_eq!(cm.accuracy(), multiclass_accuracy(&preds, &labels).unwrap());
        assert_eq!(cm.per_class_accuracy(), vec![Some(0.5), Some(2.0 / 3.0), Some(1.0)]);
    }

    #[test]
    fn confusion_perfect_is_diagonal() {
        let labels = [0, 1, 2, 2];
        let cm = confusion_matrix(&labels, &labels, &names(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(cm.counts[i][j], 0);
                }
            }
        }
    }

    #[test]
    fn per_class_six_of_seven() {
        let labels = [0; 7];
        let preds = [0, 0, 0, 0, 0, 0, 1];
        let cm = confusion_matrix(&preds, &labels, &names(2)).unwrap();
        let table = cm.per_class_table();
        assert_eq!(table.rows[0].correct, 6);
        assert_eq!(table.rows[0].support, 7);
        assert!(table.to_text().contains("86%"));
        assert!(table.to_text().contains("6/7"));
        assert_eq!(table.rows[1].accuracy, None);
    }

    #[test]
    fn unknown_class_rejected() {
        assert_eq!(
            confusion_matrix(&[3], &[0], &names(2)),
            Err(MetricsError::UnknownClass { index: 3, classes: 2 })
        );
    }

    #[test]
    fn type_consistent_fixture() {
        // 312 CWE-ID errors, 89 of which still hit the right CWE-Type, plus
        // 100 fully correct rows.
        let n = 412;
        let true_ids = vec![0usize; n];
        let true_types = vec![0usize; n];
        let mut pred_ids = vec![1usize; n];
        pred_ids[312..].fill(0);
        let mut pred_types = vec![1usize; n];
        pred_types[..89].fill(0);
        let rate = type_consistent_rate(&pred_ids, &true_ids, &pred_types, &true_types)
            .unwrap()
            .unwrap();
        assert!((rate - 89.0 / 312.0).abs() < 1e-15);
        assert!((rate - 0.285).abs() < 1e-3);
        assert_eq!(type_consistent_rate(&[0], &[0], &[0], &[0]).unwrap(), None);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }

    #[test]
    fn csv_renders() {
        let cm = confusion_matrix(&[0, 1], &[0, 0], &names(2)).unwrap();
        assert_eq!(cm.to_csv(), "truth\\pred,c0,c1\nc0,1,1\nc1,0,0\n");
    }
}
