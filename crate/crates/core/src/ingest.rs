//! File-level ingestion driver: scans for empty columns, selects feature
//! columns, remaps labels, encodes cells, sub-samples per class and
//! round-trips the sampled dataset as CSV.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    drop_empty_columns, map_label, subsample_preserving_sequence, summarize, ClassLabel,
    ColumnEncoder, DatasetSummary, FlowCsvReader, FlowRecord, LabelOutcome, RawRecord,
    SamplingPlan, NUM_FEATURES,
};
use crate::error::{Error, Result};

/// Per-class sampling fractions in `(0, 1]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Fractions {
    #[serde(default = "one")]
    pub ddos: f64,
    #[serde(default = "one")]
    pub dos: f64,
    #[serde(default = "one")]
    pub others: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Fractions {
    fn default() -> Self {
        Fractions {
            ddos: 1.0,
            dos: 1.0,
            others: 1.0,
        }
    }
}

impl Fractions {
    pub fn get(&self, label: ClassLabel) -> f64 {
        match label {
            ClassLabel::DDoS => self.ddos,
            ClassLabel::DoS => self.dos,
            ClassLabel::Others => self.others,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default = "default_label_column")]
    pub label_column: String,
    /// Ordered list of 16 feature column names; when absent the 16
    /// highest-variance numeric columns of the scanned sample are used.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub fractions: Fractions,
    #[serde(default = "default_block_length")]
    pub block_length: usize,
    #[serde(default)]
    pub seed: u64,
    /// Rows scanned for empty-column detection and feature selection.
    #[serde(default = "default_scan_rows")]
    pub empty_scan_rows: usize,
    /// Scan the whole file for empty columns instead of the leading sample.
    #[serde(default)]
    pub full_scan: bool,
}

fn default_label_column() -> String {
    "category".to_string()
}

fn default_block_length() -> usize {
    480
}

fn default_scan_rows() -> usize {
    100_000
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            label_column: default_label_column(),
            features: None,
            fractions: Fractions::default(),
            block_length: default_block_length(),
            seed: 0,
            empty_scan_rows: default_scan_rows(),
            full_scan: false,
        }
    }
}

/// A sampled record together with its raw feature cells, so the sampled
/// dataset can be re-serialized with the original cell text.
#[derive(Clone, Debug)]
pub struct SampledRecord {
    pub flow: FlowRecord,
    pub raw_cells: Vec<String>,
}

#[derive(Debug)]
pub struct IngestOutcome {
    pub feature_columns: Vec<String>,
    pub dropped_columns: Vec<String>,
    pub per_class: [Vec<SampledRecord>; 3],
    pub summary: DatasetSummary,
}

pub fn ingest_file(path: &Path, config: &IngestConfig) -> Result<IngestOutcome> {
    let open = || -> Result<FlowCsvReader<BufReader<File>>> {
        FlowCsvReader::new(BufReader::new(File::open(path).map_err(|e| {
            Error::data(format!("cannot open {}: {e}", path.display()))
        })?))
    };

    // pass 1: scan sample for empty columns and feature statistics
    let mut reader = open()?;
    let header: Vec<String> = reader.header().to_vec();
    let label_idx = header
        .iter()
        .position(|h| h == &config.label_column)
        .ok_or_else(|| {
            Error::config(format!(
                "label column '{}' not found in header",
                config.label_column
            ))
        })?;
    let mut sample: Vec<RawRecord> = Vec::new();
    for row in reader.by_ref() {
        match row {
            Ok(r) => sample.push(r),
            Err(e) => log::warn!("skipping malformed row: {e}"),
        }
        if sample.len() >= config.empty_scan_rows {
            break;
        }
    }
    let mut non_empty_tail: Option<Vec<bool>> = None;
    if config.full_scan {
        let mut flags = vec![false; header.len()];
        for row in reader.flatten() {
            for (i, cell) in row.values.iter().enumerate() {
                if !cell.trim().is_empty() {
                    flags[i] = true;
                }
            }
        }
        non_empty_tail = Some(flags);
    }
    let (mut retained, mut dropped) = drop_empty_columns(&header, &sample)?;
    if let Some(flags) = non_empty_tail {
        // fold in columns that only become non-empty past the sample
        let rescued: Vec<usize> = (0..header.len())
            .filter(|&i| flags[i] && !retained.contains(&i))
            .collect();
        if !rescued.is_empty() {
            retained.extend(&rescued);
            retained.sort_unstable();
            dropped.retain(|name| {
                !rescued.iter().any(|&i| &header[i] == name)
            });
        }
    }

    let feature_indices = resolve_features(config, &header, &retained, &dropped, label_idx, &sample)?;
    let feature_columns: Vec<String> = feature_indices
        .iter()
        .map(|&i| header[i].clone())
        .collect();

    // pass 2: full read, label remap, encode, split per class
    let reader = open()?;
    let mut encoders: Vec<ColumnEncoder> = (0..NUM_FEATURES).map(|_| ColumnEncoder::default()).collect();
    let mut per_class: [Vec<SampledRecord>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut seq: u64 = 0;
    for row in reader {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping malformed row: {e}");
                continue;
            }
        };
        let label = match map_label(&row.values[label_idx])? {
            LabelOutcome::Class(c) => c,
            LabelOutcome::Excluded => continue,
        };
        let mut features = [0.0; NUM_FEATURES];
        let mut raw_cells = Vec::with_capacity(NUM_FEATURES);
        for (slot, &col) in feature_indices.iter().enumerate() {
            let cell = &row.values[col];
            features[slot] = encoders[slot].encode(cell);
            raw_cells.push(cell.clone());
        }
        per_class[label.index()].push(SampledRecord {
            flow: FlowRecord {
                features,
                label,
                seq_index: seq,
            },
            raw_cells,
        });
        seq += 1;
    }

    // per-class sequence-preserving sub-sampling
    let mut sampled: [Vec<SampledRecord>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for label in ClassLabel::ALL {
        let idx = label.index();
        let plan = SamplingPlan {
            fraction: config.fractions.get(label),
            block_length: config.block_length,
            seed: config.seed.wrapping_add(idx as u64),
        };
        let flows: Vec<FlowRecord> = per_class[idx].iter().map(|r| r.flow.clone()).collect();
        let kept = subsample_preserving_sequence(&flows, &plan)?;
        let mut kept_seq: std::collections::HashSet<u64> =
            kept.iter().map(|r| r.seq_index).collect();
        sampled[idx] = per_class[idx]
            .drain(..)
            .filter(|r| kept_seq.remove(&r.flow.seq_index))
            .collect();
    }

    let all_flows: Vec<&FlowRecord> = sampled.iter().flatten().map(|r| &r.flow).collect();
    let summary = summarize(all_flows.into_iter().collect::<Vec<_>>())?;
    Ok(IngestOutcome {
        feature_columns,
        dropped_columns: dropped,
        per_class: sampled,
        summary,
    })
}

fn resolve_features(
    config: &IngestConfig,
    header: &[String],
    retained: &[usize],
    dropped: &[String],
    label_idx: usize,
    sample: &[RawRecord],
) -> Result<Vec<usize>> {
    if let Some(names) = &config.features {
        if names.len() != NUM_FEATURES {
            return Err(Error::config(format!(
                "feature list must name exactly {NUM_FEATURES} columns, got {}",
                names.len()
            )));
        }
        let mut indices = Vec::with_capacity(NUM_FEATURES);
        for name in names {
            let idx = header.iter().position(|h| h == name).ok_or_else(|| {
                Error::config(format!("feature column '{name}' not found in header"))
            })?;
            if idx == label_idx {
                return Err(Error::config(format!(
                    "feature column '{name}' is the label column"
                )));
            }
            if dropped.contains(name) {
                return Err(Error::data(format!(
                    "feature column '{name}' is empty in the scanned sample"
                )));
            }
            indices.push(idx);
        }
        return Ok(indices);
    }

    // default: 16 highest-variance numeric columns of the sample
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for &col in retained {
        if col == label_idx {
            continue;
        }
        let mut values = Vec::new();
        let mut numeric = true;
        for row in sample {
            let cell = row.values[col].trim();
            if cell.is_empty() {
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) => {
                    numeric = false;
                    break;
                }
            }
        }
        if !numeric || values.is_empty() {
            continue;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        scored.push((col, var));
    }
    if scored.len() < NUM_FEATURES {
        return Err(Error::data(format!(
            "need {NUM_FEATURES} numeric feature columns, found {}",
            scored.len()
        )));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(scored[..NUM_FEATURES].iter().map(|(c, _)| *c).collect())
}

/// Writes the sampled dataset: a `seq_index` column, the 16 feature columns
/// with their original cell text, then the mapped class label.
pub fn write_sampled_csv(path: &Path, outcome: &IngestOutcome) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "seq_index")?;
    for name in &outcome.feature_columns {
        write!(w, ",{name}")?;
    }
    writeln!(w, ",label")?;
    // classes interleave back into original file order
    let mut rows: Vec<&SampledRecord> = outcome.per_class.iter().flatten().collect();
    rows.sort_by_key(|r| r.flow.seq_index);
    for r in rows {
        write!(w, "{}", r.flow.seq_index)?;
        for cell in &r.raw_cells {
            write!(w, ",{cell}")?;
        }
        writeln!(w, ",{}", r.flow.label)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sampled-dataset CSV back into per-class record streams. Cells are
/// re-encoded with first-seen label encoding, which is deterministic for a
/// fixed file.
pub fn read_sampled_csv(path: &Path) -> Result<(Vec<String>, [Vec<FlowRecord>; 3])> {
    let reader = FlowCsvReader::new(BufReader::new(File::open(path).map_err(|e| {
        Error::data(format!("cannot open {}: {e}", path.display()))
    })?))?;
    let header = reader.header().to_vec();
    if header.len() != NUM_FEATURES + 2 || header[0] != "seq_index" || header[NUM_FEATURES + 1] != "label" {
        return Err(Error::data(format!(
            "{} is not a sampled-dataset CSV (expected seq_index, {NUM_FEATURES} features, label)",
            path.display()
        )));
    }
    let feature_names = header[1..=NUM_FEATURES].to_vec();
    let mut encoders: Vec<ColumnEncoder> = (0..NUM_FEATURES).map(|_| ColumnEncoder::default()).collect();
    let mut per_class: [Vec<FlowRecord>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for row in reader {
        let row = row?;
        let seq_index: u64 = row.values[0]
            .parse()
            .map_err(|_| Error::data(format!("line {}: bad seq_index", row.line_number)))?;
        let label = match row.values[NUM_FEATURES + 1].as_str() {
            "DDoS" => ClassLabel::DDoS,
            "DoS" => ClassLabel::DoS,
            "Others" => ClassLabel::Others,
            other => return Err(Error::data(format!("unknown sampled label '{other}'"))),
        };
        let mut features = [0.0; NUM_FEATURES];
        for slot in 0..NUM_FEATURES {
            features[slot] = encoders[slot].encode(&row.values[slot + 1]);
        }
        per_class[label.index()].push(FlowRecord {
            features,
            label,
            seq_index,
        });
    }
    Ok((feature_names, per_class))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_csv(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let path = dir.path().join("in.csv");
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn synthetic_csv(rows_per_class: usize) -> String {
        let mut s = String::from("id,");
        for i in 0..16 {
            s.push_str(&format!("f{i:02},"));
        }
        s.push_str("smac,category\n");
        let mut id = 0;
        for r in 0..rows_per_class {
            for (label, base) in [("DDoS", 0.0), ("DoS", 100.0), ("Normal", 200.0)] {
                s.push_str(&format!("{id},"));
                for i in 0..16 {
                    s.push_str(&format!("{},", base + (r * 16 + i) as f64 * 0.01));
                }
                s.push_str(&format!(",{label}\n"));
                id += 1;
            }
        }
        s
    }

    #[test]
    fn ingests_and_resolves_default_features() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(&dir, &synthetic_csv(20));
        let outcome = ingest_file(&path, &IngestConfig::default()).unwrap();
        assert_eq!(outcome.dropped_columns, vec!["smac"]);
        assert_eq!(outcome.feature_columns.len(), 16);
        assert_eq!(outcome.per_class[0].len(), 20);
        assert_eq!(outcome.summary.total, 60);
    }

    #[test]
    fn missing_schema_column_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(&dir, &synthetic_csv(5));
        let mut cfg = IngestConfig::default();
        cfg.features = Some((0..16).map(|i| format!("nope{i}")).collect());
        let err = ingest_file(&path, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn matches_line_by_line_reference_reader() {
        let body = synthetic_csv(34); // ~100 rows
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(&dir, &body);
        let outcome = ingest_file(&path, &IngestConfig::default()).unwrap();
        // independent reference: count data lines and check order per class
        let expected_rows = body.lines().count() - 1;
        let total: usize = outcome.per_class.iter().map(|c| c.len()).sum();
        assert_eq!(total, expected_rows);
        for class in &outcome.per_class {
            for pair in class.windows(2) {
                assert!(pair[0].flow.seq_index < pair[1].flow.seq_index);
            }
        }
    }

    #[test]
    fn sampled_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(&dir, &synthetic_csv(10));
        let outcome = ingest_file(&path, &IngestConfig::default()).unwrap();
        let sampled = dir.path().join("sampled.csv");
        write_sampled_csv(&sampled, &outcome).unwrap();
        let (names, per_class) = read_sampled_csv(&sampled).unwrap();
        assert_eq!(names, outcome.feature_columns);
        for label in ClassLabel::ALL {
            let i = label.index();
            assert_eq!(per_class[i].len(), outcome.per_class[i].len());
            for (a, b) in per_class[i].iter().zip(&outcome.per_class[i]) {
                assert_eq!(a.seq_index, b.flow.seq_index);
                assert_eq!(a.features, b.flow.features);
            }
        }
    }
}
