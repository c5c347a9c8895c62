//! Seeded synthetic flow-record generation for desk-scale runs: produces CSV
//! files shaped like the real corpus (16 numeric feature columns, a handful
//! of always-empty columns, a category label).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, NUM_FEATURES};
use crate::error::{Error, Result};

/// Feature column names emitted by the generator, mirroring common
/// flow-export fields.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "pkts", "bytes", "dur", "mean", "stddev", "sum", "min", "max", "spkts", "dpkts", "sbytes",
    "dbytes", "rate", "srate", "drate", "seq",
];

/// Columns that are present in the header but always empty, exercising the
/// ingest module's empty-column dropping.
pub const EMPTY_COLUMNS: [&str; 6] = ["smac", "dmac", "soui", "doui", "sco", "dco"];

/// Value range of one feature for one class.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FeatureRange {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Records per class, ordered (DDoS, DoS, Others); each must be >= 48.
    pub counts: [u64; 3],
    /// Per-class, per-feature sampling ranges.
    pub ranges: [[FeatureRange; NUM_FEATURES]; 3],
    pub seed: u64,
}

impl SyntheticSpec {
    /// Classes occupy disjoint value bands on every feature, so any
    /// reasonable model separates them.
    pub fn range_disjoint(counts: [u64; 3], seed: u64) -> Self {
        let mut ranges = [[FeatureRange { lo: 0.0, hi: 0.0 }; NUM_FEATURES]; 3];
        for (c, class_ranges) in ranges.iter_mut().enumerate() {
            for (f, range) in class_ranges.iter_mut().enumerate() {
                // stagger bands per feature so no single column is decisive
                let band = (c + f) % 3;
                range.lo = band as f64 * 100.0 + 10.0;
                range.hi = band as f64 * 100.0 + 90.0;
            }
        }
        SyntheticSpec {
            counts,
            ranges,
            seed,
        }
    }

    /// All classes draw from the same band; classification is at chance.
    pub fn overlapping(counts: [u64; 3], seed: u64) -> Self {
        SyntheticSpec {
            counts,
            ranges: [[FeatureRange { lo: 0.0, hi: 100.0 }; NUM_FEATURES]; 3],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for label in ClassLabel::ALL {
            if self.counts[label.index()] < 48 {
                return Err(Error::config(format!(
                    "class {label} requests {} records; at least 48 are required for one image",
                    self.counts[label.index()]
                )));
            }
        }
        for class_ranges in &self.ranges {
            for r in class_ranges {
                if !(r.lo.is_finite() && r.hi.is_finite() && r.lo < r.hi) {
                    return Err(Error::config(format!(
                        "feature range [{}, {}) is not a valid interval",
                        r.lo, r.hi
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Streams synthetic records for a single class without materializing them;
/// useful for count-law checks on corpus-sized streams.
pub struct ClassStream {
    rng: ChaCha8Rng,
    ranges: [FeatureRange; NUM_FEATURES],
    remaining: u64,
}

impl ClassStream {
    pub fn new(spec: &SyntheticSpec, class: ClassLabel) -> Self {
        let c = class.index();
        ClassStream {
            rng: ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(c as u64)),
            ranges: spec.ranges[c],
            remaining: spec.counts[c],
        }
    }
}

impl Iterator for ClassStream {
    type Item = [f64; NUM_FEATURES];

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let mut row = [0.0; NUM_FEATURES];
        for (f, v) in row.iter_mut().enumerate() {
            *v = self.rng.gen_range(self.ranges[f].lo..self.ranges[f].hi);
        }
        Some(row)
    }
}

/// Writes a synthetic CSV with classes deterministically interleaved. The
/// output is byte-identical for a fixed spec.
pub fn write_synthetic_csv(spec: &SyntheticSpec, path: &Path) -> Result<()> {
    spec.validate()?;
    let mut streams: Vec<ClassStream> = ClassLabel::ALL
        .iter()
        .map(|&c| ClassStream::new(spec, c))
        .collect();
    let mut remaining = spec.counts;
    let mut order_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x1badb002));

    let mut w = BufWriter::new(File::create(path)?);
    let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
    header.extend_from_slice(&EMPTY_COLUMNS);
    header.push("category");
    writeln!(w, "{}", header.join(","))?;

    let empty_cells = ",".repeat(EMPTY_COLUMNS.len());
    loop {
        let total: u64 = remaining.iter().sum();
        if total == 0 {
            break;
        }
        // pick the next class proportionally to its remaining quota, keeping
        // the interleave statistically uniform end to end
        let mut pick = order_rng.gen_range(0..total);
        let mut class = 0;
        for (c, &r) in remaining.iter().enumerate() {
            if pick < r {
                class = c;
                break;
            }
            pick -= r;
        }
        remaining[class] -= 1;
        let row = streams[class].next().expect("stream matches quota");
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        // raw corpus-style category values; "Normal" maps to Others on ingest
        let raw_label = ["DDoS", "DoS", "Normal"][class];
        writeln!(w, "{}{empty_cells},{raw_label}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_are_honored_exactly() {
        let spec = SyntheticSpec::range_disjoint([60, 48, 50], 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synth.csv");
        write_synthetic_csv(&spec, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut per_class = [0u64; 3];
        for line in text.lines().skip(1) {
            let label = line.rsplit(',').next().unwrap();
            match label {
                "DDoS" => per_class[0] += 1,
                "DoS" => per_class[1] += 1,
                "Normal" => per_class[2] += 1,
                other => panic!("unexpected label {other}"),
            }
        }
        assert_eq!(per_class, [60, 48, 50]);
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let spec = SyntheticSpec::range_disjoint([48, 48, 48], 7);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_synthetic_csv(&spec, &a).unwrap();
        write_synthetic_csv(&spec, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        let other = SyntheticSpec::range_disjoint([48, 48, 48], 8);
        let c = dir.path().join("c.csv");
        write_synthetic_csv(&other, &c).unwrap();
        assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    }

    #[test]
    fn undersized_class_is_rejected() {
        let spec = SyntheticSpec::range_disjoint([47, 48, 48], 0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn disjoint_ranges_do_not_overlap_per_feature() {
        let spec = SyntheticSpec::range_disjoint([48, 48, 48], 0);
        for f in 0..NUM_FEATURES {
            for a in 0..3 {
                for b in (a + 1)..3 {
                    let (ra, rb) = (spec.ranges[a][f], spec.ranges[b][f]);
                    assert!(
                        ra.hi <= rb.lo || rb.hi <= ra.lo,
                        "feature {f}: classes {a} and {b} overlap"
                    );
                }
            }
        }
    }

    #[test]
    fn class_stream_yields_exact_count_in_ranges() {
        let spec = SyntheticSpec::range_disjoint([100, 48, 48], 3);
        let rows: Vec<_> = ClassStream::new(&spec, ClassLabel::DDoS).collect();
        assert_eq!(rows.len(), 100);
        for row in &rows {
            for (f, v) in row.iter().enumerate() {
                let r = spec.ranges[0][f];
                assert!(*v >= r.lo && *v < r.hi);
            }
        }
    }
}
