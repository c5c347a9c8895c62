//! Min-max normalization, byte scaling, 16x16x3 image packing and bilinear
//! resizing to backbone resolutions.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, FlowRecord, NUM_FEATURES};
use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 16;
pub const IMAGE_CHANNELS: usize = 3;
pub const RECORDS_PER_IMAGE: usize = IMAGE_SIDE * IMAGE_CHANNELS; // 48
pub const IMAGE_BYTES: usize = IMAGE_SIDE * IMAGE_SIDE * IMAGE_CHANNELS;

/// Per-feature extrema fitted on training data.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub min: [f64; NUM_FEATURES],
    pub max: [f64; NUM_FEATURES],
}

impl NormalizationStats {
    /// Exact per-feature minimum and maximum over the stream.
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a FlowRecord>) -> Result<Self> {
        let mut min = [f64::INFINITY; NUM_FEATURES];
        let mut max = [f64::NEG_INFINITY; NUM_FEATURES];
        let mut seen = false;
        for r in records {
            seen = true;
            for i in 0..NUM_FEATURES {
                min[i] = min[i].min(r.features[i]);
                max[i] = max[i].max(r.features[i]);
            }
        }
        if !seen {
            return Err(Error::data("cannot fit normalization on an empty stream"));
        }
        Ok(NormalizationStats { min, max })
    }

    /// `(x - min) / (max - min)`, clamped to `[0, 1]` for values outside the
    /// fitted range. A constant feature (max == min) normalizes to 0.
    pub fn normalize(&self, record: &FlowRecord) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for i in 0..NUM_FEATURES {
            let span = self.max[i] - self.min[i];
            out[i] = if span == 0.0 {
                0.0
            } else {
                ((record.features[i] - self.min[i]) / span).clamp(0.0, 1.0)
            };
        }
        out
    }

    pub fn save_json(&self, path: &Path, feature_names: &[String]) -> Result<()> {
        let map: BTreeMap<&str, MinMax> = feature_names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                (
                    name.as_str(),
                    MinMax {
                        min: self.min[i],
                        max: self.max[i],
                    },
                )
            })
            .collect();
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(file, &map)?;
        Ok(())
    }

    pub fn load_json(path: &Path, feature_names: &[String]) -> Result<Self> {
        let map: BTreeMap<String, MinMax> =
            serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let mut min = [0.0; NUM_FEATURES];
        let mut max = [0.0; NUM_FEATURES];
        for (i, name) in feature_names.iter().enumerate() {
            let entry = map
                .get(name)
                .ok_or_else(|| Error::data(format!("stats file is missing feature '{name}'")))?;
            min[i] = entry.min;
            max[i] = entry.max;
        }
        Ok(NormalizationStats { min, max })
    }
}

#[derive(Serialize, Deserialize)]
struct MinMax {
    min: f64,
    max: f64,
}

/// `round(255 * x)` with ties-to-even. Input must already be in `[0, 1]`.
pub fn scale_to_byte(normalized: f64) -> u8 {
    assert!(
        (0.0..=1.0).contains(&normalized),
        "scale_to_byte input {normalized} outside [0, 1]; clamp first"
    );
    (255.0 * normalized).round_ties_even() as u8
}

/// One encoded window of 48 records. Pixel `(row, col, channel)` holds
/// byte-scaled feature `col` of record `48k + 16*channel + row`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pixels: Vec<u8>, // HWC row-major, 16*16*3
    pub label: ClassLabel,
    pub first_seq_index: u64,
}

impl ImageTensor {
    pub fn from_bytes(pixels: Vec<u8>, label: ClassLabel, first_seq_index: u64) -> Self {
        assert_eq!(pixels.len(), IMAGE_BYTES);
        ImageTensor {
            pixels,
            label,
            first_seq_index,
        }
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.pixels[(row * IMAGE_SIDE + col) * IMAGE_CHANNELS + channel]
    }

    pub fn bytes(&self) -> &[u8] {
        &self.pixels
    }
}

/// Streaming builder: consumes normalized single-class records in order and
/// emits one image per 48 records. A trailing partial run is dropped.
pub struct ImageBuilder {
    label: ClassLabel,
    buffer: Vec<u8>,
    count_in_image: usize,
    first_seq_index: u64,
}

impl ImageBuilder {
    pub fn new(label: ClassLabel) -> Self {
        ImageBuilder {
            label,
            buffer: vec![0; IMAGE_BYTES],
            count_in_image: 0,
            first_seq_index: 0,
        }
    }

    /// Push one normalized record; returns a finished image every 48th call.
    pub fn push(&mut self, normalized: &[f64; NUM_FEATURES], seq_index: u64) -> Option<ImageTensor> {
        if self.count_in_image == 0 {
            self.first_seq_index = seq_index;
        }
        let channel = self.count_in_image / IMAGE_SIDE;
        let row = self.count_in_image % IMAGE_SIDE;
        for (col, &v) in normalized.iter().enumerate() {
            self.buffer[(row * IMAGE_SIDE + col) * IMAGE_CHANNELS + channel] = scale_to_byte(v);
        }
        self.count_in_image += 1;
        if self.count_in_image == RECORDS_PER_IMAGE {
            self.count_in_image = 0;
            let pixels = std::mem::replace(&mut self.buffer, vec![0; IMAGE_BYTES]);
            Some(ImageTensor::from_bytes(pixels, self.label, self.first_seq_index))
        } else {
            None
        }
    }
}

/// Packs a finite class stream; emits `floor(n / 48)` images.
pub fn build_images(
    records: impl IntoIterator<Item = FlowRecord>,
    stats: &NormalizationStats,
    label: ClassLabel,
) -> Vec<ImageTensor> {
    let mut builder = ImageBuilder::new(label);
    let mut images = Vec::new();
    let mut total = 0usize;
    for record in records {
        total += 1;
        if let Some(img) = builder.push(&stats.normalize(&record), record.seq_index) {
            images.push(img);
        }
    }
    if total < RECORDS_PER_IMAGE {
        log::warn!(
            "class {label}: {total} records is fewer than {RECORDS_PER_IMAGE}; no images emitted"
        );
    }
    images
}

/// Supported backbone input resolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    R32,
    R71,
    R75,
}

impl Resolution {
    pub fn side(self) -> usize {
        match self {
            Resolution::R32 => 32,
            Resolution::R71 => 71,
            Resolution::R75 => 75,
        }
    }

    pub fn from_side(side: usize) -> Result<Self> {
        match side {
            32 => Ok(Resolution::R32),
            71 => Ok(Resolution::R71),
            75 => Ok(Resolution::R75),
            other => Err(Error::config(format!(
                "unsupported target resolution {other}x{other} (expected 32, 71 or 75)"
            ))),
        }
    }
}

/// Resized image with values scaled into `[0, 1]`, HWC row-major.
#[derive(Clone, Debug)]
pub struct ResizedImage {
    pub side: usize,
    pub pixels: Vec<f64>,
    pub label: ClassLabel,
    pub first_seq_index: u64,
}

/// Bilinear interpolation with half-pixel-center coordinate mapping, each
/// channel independent; the output is divided by 255.
///
/// The exact arithmetic is pinned: source coordinate
/// `s = (d + 0.5) * (in / out) - 0.5` clamped to `[0, in - 1]`, then
/// `v = (p00*(1-fx) + p01*fx) * (1-fy) + (p10*(1-fx) + p11*fx) * fy`
/// evaluated in f64 before the final division.
pub fn bilinear_resize(image: &ImageTensor, target: Resolution) -> ResizedImage {
    let out = target.side();
    ResizedImage {
        side: out,
        pixels: resize_raw(image, out),
        label: image.label,
        first_seq_index: image.first_seq_index,
    }
}

fn resize_raw(image: &ImageTensor, out: usize) -> Vec<f64> {
    let inp = IMAGE_SIDE;
    let scale = inp as f64 / out as f64;
    let mut pixels = vec![0.0; out * out * IMAGE_CHANNELS];
    for oy in 0..out {
        let sy = ((oy as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(inp - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out {
            let sx = ((ox as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(inp - 1);
            let fx = sx - x0 as f64;
            for c in 0..IMAGE_CHANNELS {
                let p00 = image.get(y0, x0, c) as f64;
                let p01 = image.get(y0, x1, c) as f64;
                let p10 = image.get(y1, x0, c) as f64;
                let p11 = image.get(y1, x1, c) as f64;
                let v = (p00 * (1.0 - fx) + p01 * fx) * (1.0 - fy)
                    + (p10 * (1.0 - fx) + p11 * fx) * fy;
                pixels[(oy * out + ox) * IMAGE_CHANNELS + c] = v / 255.0;
            }
        }
    }
    pixels
}

// ---- image store ----

const STORE_MAGIC: &[u8; 4] = b"FIMG";
const STORE_VERSION: u32 = 1;

/// Streaming writer for one class's image file. Little-endian header
/// (magic, version, count, height, width, channels) followed by contiguous
/// byte tensors; the count is backpatched on finish. An adjacent `.idx` file
/// lists `first_seq_index` per image, one integer per line.
pub struct ImageStoreWriter {
    file: BufWriter<File>,
    index: BufWriter<File>,
    count: u64,
}

impl ImageStoreWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        file.write_all(STORE_MAGIC)?;
        file.write_all(&STORE_VERSION.to_le_bytes())?;
        file.write_all(&0u64.to_le_bytes())?; // count placeholder
        file.write_all(&(IMAGE_SIDE as u32).to_le_bytes())?;
        file.write_all(&(IMAGE_SIDE as u32).to_le_bytes())?;
        file.write_all(&(IMAGE_CHANNELS as u32).to_le_bytes())?;
        let index = BufWriter::new(File::create(index_path(path))?);
        Ok(ImageStoreWriter {
            file,
            index,
            count: 0,
        })
    }

    pub fn write(&mut self, image: &ImageTensor) -> Result<()> {
        self.file.write_all(image.bytes())?;
        writeln!(self.index, "{}", image.first_seq_index)?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64> {
        self.file.flush()?;
        let mut inner = self
            .file
            .into_inner()
            .map_err(|e| Error::internal(format!("image store flush failed: {e}")))?;
        inner.seek(SeekFrom::Start(8))?;
        inner.write_all(&self.count.to_le_bytes())?;
        inner.flush()?;
        self.index.flush()?;
        Ok(self.count)
    }
}

fn index_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".idx");
    p.into()
}

/// Reads a class image file written by [`ImageStoreWriter`].
pub fn read_image_store(path: &Path, label: ClassLabel) -> Result<Vec<ImageTensor>> {
    let mut file = BufReader::new(File::open(path).map_err(|e| {
        Error::data(format!("cannot open image store {}: {e}", path.display()))
    })?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != STORE_MAGIC {
        return Err(Error::data(format!(
            "{} is not an image store (bad magic)",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    file.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != STORE_VERSION {
        return Err(Error::data(format!(
            "unsupported image store version {version}"
        )));
    }
    file.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf);
    let mut dims = [0u32; 3];
    for d in &mut dims {
        file.read_exact(&mut u32buf)?;
        *d = u32::from_le_bytes(u32buf);
    }
    if dims != [IMAGE_SIDE as u32, IMAGE_SIDE as u32, IMAGE_CHANNELS as u32] {
        return Err(Error::data(format!(
            "unexpected image dimensions {dims:?} in {}",
            path.display()
        )));
    }
    let index = std::fs::read_to_string(index_path(path))
        .map_err(|e| Error::data(format!("missing index file for {}: {e}", path.display())))?;
    let seq_indices: Vec<u64> = index
        .lines()
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::data(format!("bad index entry '{l}'")))
        })
        .collect::<Result<_>>()?;
    if seq_indices.len() as u64 != count {
        return Err(Error::data(format!(
            "index lists {} images but store holds {count}",
            seq_indices.len()
        )));
    }
    let mut images = Vec::with_capacity(count as usize);
    for &seq in &seq_indices {
        let mut pixels = vec![0u8; IMAGE_BYTES];
        file.read_exact(&mut pixels)?;
        images.push(ImageTensor::from_bytes(pixels, label, seq));
    }
    Ok(images)
}
