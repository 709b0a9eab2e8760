//! Synthetic stand-in for a spoken-digit feature set: ten classes of
//! 39 x 200 feature matrices with leading zero padding.
//!
//! Each class has a fixed per-dimension offset and a per-dimension
//! sinusoid with a class-specific frequency. A sample is its class pattern
//! over a random number of trailing frames plus unit Gaussian noise. The
//! class patterns depend only on the shape and class count, so separately
//! seeded draws (train, validation) come from the same task.

use std::f64::consts::TAU;

use crate::data::{FeatureDataset, FeatureSample};
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

pub const DIGIT_ROWS: usize = 39;
pub const DIGIT_COLS: usize = 200;
pub const DIGIT_CLASSES: usize = 10;

const PATTERN_SEED: u64 = 0x5EED_D161_7500_0001;
const OFFSET_SCALE: f64 = 1.0;
const WAVE_SCALE: f64 = 0.6;
const NOISE: f64 = 1.0;
/// Shortest utterance as a fraction of the frame count.
const MIN_ACTIVE: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDigits {
    rows: usize,
    cols: usize,
    offsets: Vec<Vec<f64>>,
    amplitudes: Vec<Vec<f64>>,
    phases: Vec<Vec<f64>>,
    frequencies: Vec<f64>,
}

impl SyntheticDigits {
    pub fn new(n_classes: usize, rows: usize, cols: usize) -> Result<Self> {
        if n_classes == 0 || rows == 0 || cols == 0 {
            return Err(Error::Parameter("synthetic digits need nonzero classes and shape".into()));
        }
        let stream = (n_classes as u64) << 40 ^ (rows as u64) << 20 ^ cols as u64;
        let mut rng = RandomSource::derive(PATTERN_SEED, stream);
        let mut offsets = Vec::with_capacity(n_classes);
        let mut amplitudes = Vec::with_capacity(n_classes);
        let mut phases = Vec::with_capacity(n_classes);
        let mut frequencies = Vec::with_capacity(n_classes);
        for c in 0..n_classes {
            offsets.push((0..rows).map(|_| OFFSET_SCALE * rng.normal()).collect());
            amplitudes.push((0..rows).map(|_| WAVE_SCALE * rng.uniform()).collect());
            phases.push((0..rows).map(|_| TAU * rng.uniform()).collect());
            frequencies.push(TAU * (c + 1) as f64 / (4.0 * n_classes as f64));
        }
        Ok(Self {
            rows,
            cols,
            offsets,
            amplitudes,
            phases,
            frequencies,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.offsets.len()
    }

    /// Noise-free value of dimension `d` at active frame `t` for `class`.
    pub fn pattern(&self, class: usize, d: usize, t: usize) -> f64 {
        self.offsets[class][d] + self.amplitudes[class][d] * (self.frequencies[class] * t as f64 + self.phases[class][d]).sin()
    }

    fn sample(&self, rng: &mut RandomSource, class: usize) -> FeatureSample {
        let min_active = ((self.cols as f64 * MIN_ACTIVE).ceil() as usize).clamp(1, self.cols);
        let active = min_active + rng.below(self.cols - min_active + 1);
        let start = self.cols - active;
        let mut t = Tensor::zeros(self.rows, self.cols);
        for d in 0..self.rows {
            for frame in 0..active {
                let v = self.pattern(class, d, frame) + NOISE * rng.normal();
                // stored as f32 in QFD files; keep the in-memory copy identical
                let mut v = v as f32 as f64;
                if v == 0.0 {
                    v = f32::MIN_POSITIVE as f64;
                }
                t.set(d, start + frame, v);
            }
        }
        FeatureSample { features: t, label: class }
    }

    /// `n_per_class` samples of every class, labels interleaved
    /// `0, 1, ..., n_classes-1, 0, 1, ...`.
    pub fn generate(&self, rng: &mut RandomSource, n_per_class: usize) -> Result<FeatureDataset> {
        if n_per_class == 0 {
            return Err(Error::Parameter("n_per_class must be at least 1".into()));
        }
        let k = self.n_classes();
        let samples = (0..n_per_class * k).map(|i| self.sample(rng, i % k)).collect();
        FeatureDataset::new(samples, k)
    }
}

/// Draws a balanced synthetic dataset of `rows x cols` samples.
pub fn make_synthetic_digits(
    rng: &mut RandomSource,
    n_per_class: usize,
    n_classes: usize,
    rows: usize,
    cols: usize,
) -> Result<FeatureDataset> {
    SyntheticDigits::new(n_classes, rows, cols)?.generate(rng, n_per_class)
}
