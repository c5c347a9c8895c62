//! Flow-record CSV ingestion: parsing, label remapping, empty-column removal
//! and sequence-preserving sub-sampling.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_FEATURES: usize = 16;

/// Target taxonomy after remapping the source labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    DDoS,
    DoS,
    Others,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::DDoS, ClassLabel::DoS, ClassLabel::Others];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::DDoS => 0,
            ClassLabel::DoS => 1,
            ClassLabel::Others => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<ClassLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::DDoS => "DDoS",
            ClassLabel::DoS => "DoS",
            ClassLabel::Others => "Others",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Source-label mapping outcome; `Excluded` drops the record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelOutcome {
    Class(ClassLabel),
    Excluded,
}

/// DDoS and DoS map to themselves, Normal and Reconnaissance merge into
/// Others, and the Stealing/Theft category is excluded.
pub fn map_label(raw: &str) -> Result<LabelOutcome> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "ddos" => Ok(LabelOutcome::Class(ClassLabel::DDoS)),
        "dos" => Ok(LabelOutcome::Class(ClassLabel::DoS)),
        "normal" | "reconnaissance" => Ok(LabelOutcome::Class(ClassLabel::Others)),
        "theft" | "stealing" => Ok(LabelOutcome::Excluded),
        other => Err(Error::data(format!("unknown class label '{other}'"))),
    }
}

/// One CSV row as raw string cells.
#[derive(Clone, Debug)]
pub struct RawRecord {
    pub values: Vec<String>,
    pub line_number: u64,
}

/// One ingested flow observation.
#[derive(Clone, Debug)]
pub struct FlowRecord {
    pub features: [f64; NUM_FEATURES],
    pub label: ClassLabel,
    pub seq_index: u64,
}

/// Header-first CSV stream yielding rows in file order. Rows with the wrong
/// cell count surface as recoverable errors; iteration continues past them.
pub struct FlowCsvReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    header: Vec<String>,
    line: u64,
}

impl<R: Read> FlowCsvReader<R> {
    pub fn new(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(source);
        let header: Vec<String> = reader
            .headers()?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if header.is_empty() {
            return Err(Error::data("CSV header row is empty"));
        }
        Ok(FlowCsvReader {
            records: reader.into_records(),
            header,
            line: 1,
        })
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }
}

impl<R: Read> Iterator for FlowCsvReader<R> {
    type Item = Result<RawRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = match self.records.next()? {
            Ok(r) => r,
            Err(e) => {
                self.line += 1;
                return Some(Err(e.into()));
            }
        };
        self.line += 1;
        if record.len() != self.header.len() {
            return Some(Err(Error::data(format!(
                "line {}: expected {} cells, found {}",
                self.line,
                self.header.len(),
                record.len()
            ))));
        }
        Some(Ok(RawRecord {
            values: record.iter().map(str::to_string).collect(),
            line_number: self.line,
        }))
    }
}

/// Retain columns with at least one non-empty sampled cell. Returns retained
/// column indices and the dropped column names.
pub fn drop_empty_columns(
    header: &[String],
    sample: &[RawRecord],
) -> Result<(Vec<usize>, Vec<String>)> {
    if sample.is_empty() {
        return Err(Error::data("empty-column scan requires a non-empty sample"));
    }
    let mut non_empty = vec![false; header.len()];
    for record in sample {
        for (i, cell) in record.values.iter().enumerate() {
            if !cell.trim().is_empty() {
                non_empty[i] = true;
            }
        }
    }
    let retained: Vec<usize> = (0..header.len()).filter(|&i| non_empty[i]).collect();
    if retained.is_empty() {
        return Err(Error::data("every column is empty in the scanned sample"));
    }
    let dropped = (0..header.len())
        .filter(|&i| !non_empty[i])
        .map(|i| header[i].clone())
        .collect();
    Ok((retained, dropped))
}

/// First-seen-order label encoding for non-numeric cells. Numeric cells pass
/// through as parsed values.
#[derive(Default)]
pub struct ColumnEncoder {
    seen: HashMap<String, f64>,
}

impl ColumnEncoder {
    pub fn encode(&mut self, cell: &str) -> f64 {
        let cell = cell.trim();
        if let Ok(v) = cell.parse::<f64>() {
            return v;
        }
        let next = self.seen.len() as f64;
        *self.seen.entry(cell.to_string()).or_insert(next)
    }
}

/// Controlled per-class sub-sampling parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub fraction: f64,
    pub block_length: usize,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::config(format!(
                "sampling fraction must lie in (0, 1], got {}",
                self.fraction
            )));
        }
        if self.block_length == 0 {
            return Err(Error::config("block_length must be at least 1"));
        }
        Ok(())
    }
}

/// Keep a union of contiguous blocks, chosen by seeded uniform selection,
/// until the target fraction is met within one block. Relative order of the
/// kept records is preserved.
pub fn subsample_preserving_sequence(
    records: &[FlowRecord],
    plan: &SamplingPlan,
) -> Result<Vec<FlowRecord>> {
    plan.validate()?;
    let n = records.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let target = plan.fraction * n as f64;
    if target >= n as f64 {
        if plan.fraction > 1.0 {
            log::warn!("sampling fraction exceeds available records; keeping all {n}");
        }
        return Ok(records.to_vec());
    }
    let block = plan.block_length;
    let num_blocks = n.div_ceil(block);
    let mut order: Vec<usize> = (0..num_blocks).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    order.shuffle(&mut rng);
    let mut chosen = Vec::new();
    let mut kept = 0usize;
    for b in order {
        if kept as f64 >= target {
            break;
        }
        let len = (b * block + block).min(n) - b * block;
        chosen.push(b);
        kept += len;
    }
    chosen.sort_unstable();
    let mut out = Vec::with_capacity(kept);
    for b in chosen {
        out.extend_from_slice(&records[b * block..(b * block + block).min(n)]);
    }
    Ok(out)
}

/// Per-class composition of a dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub classes: Vec<ClassShare>,
    pub total: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassShare {
    pub label: ClassLabel,
    pub records: u64,
    pub percentage: f64,
}

pub fn summarize<'a>(records: impl IntoIterator<Item = &'a FlowRecord>) -> Result<DatasetSummary> {
    let mut counts = [0u64; 3];
    for r in records {
        counts[r.label.index()] += 1;
    }
    summarize_counts(counts)
}

pub fn summarize_counts(counts: [u64; 3]) -> Result<DatasetSummary> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::data("cannot summarize an empty record stream"));
    }
    let classes = ClassLabel::ALL
        .iter()
        .map(|&label| ClassShare {
            label,
            records: counts[label.index()],
            percentage: counts[label.index()] as f64 / total as f64 * 100.0,
        })
        .collect();
    Ok(DatasetSummary { classes, total })
}
