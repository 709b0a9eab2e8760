//! Fixed-shape labelled feature matrices and the QFD file format.
//!
//! QFD layout, little-endian throughout:
//!
//! ```text
//! "QFD1"          4 bytes
//! n_samples       u32
//! rows            u32
//! cols            u32
//! n_labels        u32
//! n_samples x { label u32, rows*cols f32 row-major }
//! ```
//!
//! Rows are feature dimensions and columns are time frames.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const QFD_MAGIC: &[u8; 4] = b"QFD1";

/// Lower bound on the standard deviation used for whitening.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    /// dimensions x frames
    pub features: Tensor,
    pub label: usize,
}

/// A sample laid out for the recurrent model: one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    /// frames x dimensions
    pub frames: Tensor,
    pub label: usize,
}

/// Per-dimension training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub samples: Vec<FeatureSample>,
    pub n_labels: usize,
    pub whitening: Option<WhiteningStats>,
}

/// Index of the first frame with any nonzero value; earlier frames are
/// leading zero padding.
fn first_active_frame(t: &Tensor) -> usize {
    (0..t.cols())
        .find(|&c| (0..t.rows()).any(|r| t.get(r, c) != 0.0))
        .unwrap_or(t.cols())
}

impl FeatureDataset {
    /// Checks labels only; samples may differ in shape until padded.
    pub fn new(samples: Vec<FeatureSample>, n_labels: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.label >= n_labels {
                return Err(Error::Data(format!(
                    "sample {i} has label {} but only {n_labels} labels exist",
                    s.label
                )));
            }
        }
        Ok(Self {
            samples,
            n_labels,
            whitening: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Common `(rows, cols)` of the samples, if any.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| s.features.shape())
    }

    /// All samples share one shape and every label is in range.
    pub fn validate(&self) -> Result<()> {
        if let Some(shape) = self.shape() {
            for (i, s) in self.samples.iter().enumerate() {
                if s.features.shape() != shape {
                    return Err(Error::Data(format!(
                        "sample {i} has shape {:?}, expected {shape:?}",
                        s.features.shape()
                    )));
                }
            }
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.n_labels {
                return Err(Error::Data(format!("sample {i} has label {} out of range", s.label)));
            }
        }
        Ok(())
    }

    /// Samples transposed to frames x dimensions for the GRU.
    pub fn sequences(&self) -> Vec<LabeledSequence> {
        self.samples
            .iter()
            .map(|s| LabeledSequence {
                frames: s.features.transpose(),
                label: s.label,
            })
            .collect()
    }

    /// Serializes to QFD bytes. Values are stored as `f32`.
    pub fn to_qfd_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let (rows, cols) = self.shape().unwrap_or((0, 0));
        let mut out = Vec::with_capacity(20 + self.len() * (4 + rows * cols * 4));
        out.extend_from_slice(QFD_MAGIC);
        for v in [self.len(), rows, cols, self.n_labels] {
            out.extend_from_slice(&to_u32(v)?.to_le_bytes());
        }
        for s in &self.samples {
            out.extend_from_slice(&to_u32(s.label)?.to_le_bytes());
            for &v in s.features.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_qfd_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != QFD_MAGIC {
            return Err(Error::Format("not a QFD1 file".into()));
        }
        let n = r.u32()? as usize;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n_labels = r.u32()? as usize;
        let per_sample = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(4))
            .and_then(|v| v.checked_add(4))
            .ok_or_else(|| Error::Format("sample size overflows".into()))?;
        if per_sample.checked_mul(n) != Some(bytes.len() - r.pos) {
            return Err(Error::Format(format!(
                "{} payload bytes do not match {n} samples of {rows}x{cols}",
                bytes.len() - r.pos
            )));
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let label = r.u32()? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f32::from_le_bytes(r.array()?) as f64);
            }
            samples.push(FeatureSample {
                features: Tensor::from_vec(rows, cols, data)?,
                label,
            });
        }
        Self::new(samples, n_labels).map_err(|e| Error::Format(e.to_string()))
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated: wanted {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

pub fn load_feature_dataset(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    read_qfd(path)
}

pub fn read_qfd(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    FeatureDataset::from_qfd_bytes(&fs::read(path)?)
}

pub fn write_qfd(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dataset.to_qfd_bytes()?)?;
    Ok(())
}

impl WhiteningStats {
    /// Statistics over the non-padding frames of every sample.
    pub fn from_dataset(dataset: &FeatureDataset) -> Self {
        let rows = dataset.shape().map_or(0, |s| s.0);
        let starts: Vec<usize> = dataset.samples.iter().map(|s| first_active_frame(&s.features)).collect();
        let mut sum = vec![0.0; rows];
        let mut count = 0usize;
        for (s, &start) in dataset.samples.iter().zip(&starts) {
            let t = &s.features;
            for (r, acc) in sum.iter_mut().enumerate() {
                for c in start..t.cols() {
                    *acc += t.get(r, c);
                }
            }
            count += t.cols() - start;
        }
        if count == 0 {
            return Self {
                mean: vec![0.0; rows],
                std: vec![1.0; rows],
            };
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; rows];
        for (s, &start) in dataset.samples.iter().zip(&starts) {
            let t = &s.features;
            for (r, acc) in sq.iter_mut().enumerate() {
                for c in start..t.cols() {
                    let d = t.get(r, c) - mean[r];
                    *acc += d * d;
                }
            }
        }
        let std = sq.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    /// Standardizes the non-padding frames of every sample; padding frames
    /// stay exactly zero.
    pub fn apply(&self, dataset: &mut FeatureDataset) -> Result<()> {
        for s in &mut dataset.samples {
            let t = &mut s.features;
            if t.rows() != self.mean.len() {
                return Err(Error::Dimension(format!(
                    "sample has {} dimensions, statistics cover {}",
                    t.rows(),
                    self.mean.len()
                )));
            }
            let start = first_active_frame(t);
            for r in 0..t.rows() {
                let (m, sd) = (self.mean[r], self.std[r]);
                for v in &mut t.row_mut(r)[start..] {
                    *v = (*v - m) / sd;
                }
            }
        }
        dataset.whitening = Some(self.clone());
        Ok(())
    }
}

/// Left-pads every sample with zero frames (and appends zero dimensions)
/// up to `rows x cols`, then standardizes it with statistics computed from
/// this dataset. Apply the returned statistics to the other splits.
pub fn pad_and_whiten(dataset: &mut FeatureDataset, rows: usize, cols: usize) -> Result<WhiteningStats> {
    pad(dataset, rows, cols)?;
    let stats = WhiteningStats::from_dataset(dataset);
    stats.apply(dataset)?;
    Ok(stats)
}

/// Zero padding only: leading frames, trailing dimensions.
pub fn pad(dataset: &mut FeatureDataset, rows: usize, cols: usize) -> Result<()> {
    for (i, s) in dataset.samples.iter_mut().enumerate() {
        let (r0, c0) = s.features.shape();
        if r0 > rows || c0 > cols {
            return Err(Error::Data(format!(
                "sample {i} is {r0}x{c0}, larger than target {rows}x{cols}"
            )));
        }
        if (r0, c0) == (rows, cols) {
            continue;
        }
        let mut padded = Tensor::zeros(rows, cols);
        let offset = cols - c0;
        for r in 0..r0 {
            padded.row_mut(r)[offset..].copy_from_slice(s.features.row(r));
        }
        s.features = padded;
    }
    Ok(())
}
