//! Confusion matrices, per-class and aggregate metrics, the binary
//! attack-vs-others collapse, and comparison-report export.

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};

/// 3x3 counts, axes ordered (DDoS, DoS, Others); rows are actual classes,
/// columns are predictions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn from_pairs(predictions: &[ClassLabel], actuals: &[ClassLabel]) -> Result<Self> {
        if predictions.len() != actuals.len() {
            return Err(Error::data(format!(
                "prediction count {} does not match actual count {}",
                predictions.len(),
                actuals.len()
            )));
        }
        if predictions.is_empty() {
            return Err(Error::data("cannot build a confusion matrix from no samples"));
        }
        let mut m = ConfusionMatrix::new();
        for (p, a) in predictions.iter().zip(actuals) {
            m.add(*a, *p);
        }
        Ok(m)
    }

    pub fn add(&mut self, actual: ClassLabel, predicted: ClassLabel) {
        self.counts[actual.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    /// Three header columns (class names), three count rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("DDoS,DoS,Others\n");
        for row in &self.counts {
            s.push_str(&format!("{},{},{}\n", row[0], row[1], row[2]));
        }
        s
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ClassLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One-vs-rest accuracy: (TP + TN) / total.
    pub accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub overall_accuracy: f64,
    /// Support-weighted mean of per-class F1.
    pub weighted_f1: f64,
}

fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Derives per-class precision/recall/F1/one-vs-rest accuracy plus overall
/// accuracy and support-weighted F1. An empty predicted column yields
/// precision 0 rather than NaN.
pub fn per_class_metrics(matrix: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::data("metrics require a non-empty confusion matrix"));
    }
    let mut per_class = Vec::with_capacity(3);
    let mut weighted_f1 = 0.0;
    let mut trace = 0u64;
    for class in ClassLabel::ALL {
        let c = class.index();
        let tp = matrix.counts[c][c];
        trace += tp;
        let col = matrix.col_sum(c);
        let row = matrix.row_sum(c);
        let precision = if col > 0 { tp as f64 / col as f64 } else { 0.0 };
        let recall = if row > 0 { tp as f64 / row as f64 } else { 0.0 };
        let f1 = f1_of(precision, recall);
        // tp <= col and col - tp <= total - row, so this never underflows
        let tn = (total + tp) - (row + col);
        per_class.push(ClassMetrics {
            class,
            precision,
            recall,
            f1,
            accuracy: (tp + tn) as f64 / total as f64,
        });
        weighted_f1 += row as f64 / total as f64 * f1;
    }
    Ok(MetricsReport {
        per_class,
        overall_accuracy: trace as f64 / total as f64,
        weighted_f1,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BinaryCollapseReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Merges DDoS and DoS into a single "attack" class (the positive class) and
/// scores the resulting 2x2 problem. Intra-attack confusion is forgiven.
pub fn binary_collapse(matrix: &ConfusionMatrix) -> BinaryCollapseReport {
    let m = &matrix.counts;
    let tp: u64 = m[0][0] + m[0][1] + m[1][0] + m[1][1];
    let fn_: u64 = m[0][2] + m[1][2];
    let fp: u64 = m[2][0] + m[2][1];
    let tn: u64 = m[2][2];
    let total = (tp + fn_ + fp + tn) as f64;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    BinaryCollapseReport {
        accuracy: (tp + tn) as f64 / total,
        precision,
        recall,
        f1: f1_of(precision, recall),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub method: String,
    pub multiclass_accuracy: f64,
    pub binary_accuracy: f64,
}

/// Stable-order CSV export of method comparisons; duplicate names are fatal.
pub fn export_comparison_csv(entries: &[ComparisonEntry]) -> Result<String> {
    if entries.is_empty() {
        return Err(Error::data("comparison export requires at least one entry"));
    }
    for (i, e) in entries.iter().enumerate() {
        if entries[..i].iter().any(|other| other.method == e.method) {
            return Err(Error::data(format!("duplicate method name '{}'", e.method)));
        }
    }
    let mut s = String::from("method,multiclass_accuracy,binary_accuracy\n");
    for e in entries {
        s.push_str(&format!(
            "{},{},{}\n",
            e.method, e.multiclass_accuracy, e.binary_accuracy
        ));
    }
    Ok(s)
}

/// Parses a comparison CSV back into entries (round-trip check surface).
pub fn parse_comparison_csv(text: &str) -> Result<Vec<ComparisonEntry>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::data("empty comparison CSV"))?;
    if header != "method,multiclass_accuracy,binary_accuracy" {
        return Err(Error::data(format!("unexpected comparison header '{header}'")));
    }
    lines
        .map(|line| {
            let mut cells = line.split(',');
            let method = cells
                .next()
                .ok_or_else(|| Error::data("missing method cell"))?
                .to_string();
            let multiclass_accuracy = cells
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| Error::data("bad multiclass accuracy cell"))?;
            let binary_accuracy = cells
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| Error::data("bad binary accuracy cell"))?;
            Ok(ComparisonEntry {
                method,
                multiclass_accuracy,
                binary_accuracy,
            })
        })
        .collect()
}
