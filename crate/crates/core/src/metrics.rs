//! Bits-per-character, classification accuracy and per-epoch run logs.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::LabeledSequence;
use crate::error::{Error, Result};
use crate::models::{argmax, GruClassifier, LinearWeights, VanillaRnnLm};

/// Mean `-log2 p(next symbol)` over every symbol of every chunk. Each chunk
/// starts from a zero hidden state.
pub fn bpc<W: LinearWeights>(model: &VanillaRnnLm<W>, chunks: &[Vec<usize>]) -> Result<f64> {
    let (nats, count) = chunks.iter().try_fold((0.0, 0usize), |(nats, count), chunk| {
        let (n, c) = model.chunk_nll(chunk)?;
        Ok::<_, Error>((nats + n, count + c))
    })?;
    if count == 0 {
        return Err(Error::Parameter("cannot compute BPC of an empty split".into()));
    }
    Ok(nats / count as f64 / std::f64::consts::LN_2)
}

/// Fraction of samples whose most probable class (lowest index on ties)
/// is the label.
pub fn accuracy<W: LinearWeights>(model: &GruClassifier<W>, samples: &[LabeledSequence]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Parameter("cannot compute accuracy of an empty split".into()));
    }
    let mut correct = 0usize;
    for s in samples {
        let (_, logp) = model.forward(&s.frames, None)?;
        if argmax(&logp) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Which way a validation metric improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    pub fn better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::Minimize => candidate < incumbent,
            Direction::Maximize => candidate > incumbent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation metric with the full-precision weights.
    pub val_full: f64,
    /// Validation metric with deterministically quantized weights.
    pub val_quant: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetadata {
    pub experiment: String,
    pub method: String,
    pub seed: u64,
    /// Free-form snapshot of the configuration that produced the run.
    pub config: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
    pub metadata: RunMetadata,
    pub direction: Direction,
}

pub const CSV_HEADER: [&str; 5] = ["epoch", "train_loss", "val_full", "val_quant", "seconds"];

impl RunLog {
    pub fn new(metadata: RunMetadata, direction: Direction) -> Self {
        Self {
            records: Vec::new(),
            metadata,
            direction,
        }
    }

    /// Appends a record; epochs must continue `1, 2, 3, ...`.
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        let expected = self.records.len() + 1;
        if record.epoch != expected {
            return Err(Error::Parameter(format!(
                "epoch {} logged where {expected} was expected",
                record.epoch
            )));
        }
        self.records.push(record);
        Ok(())
    }

    /// Record with the best full-precision validation metric, earliest on
    /// ties.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().fold(None, |best: Option<&EpochRecord>, r| match best {
            Some(b) if !self.direction.better(r.val_full, b.val_full) => Some(b),
            _ => Some(r),
        })
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Conventional file name `<experiment>_<method>_<seed>.csv`.
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.csv", self.metadata.experiment, self.metadata.method, self.metadata.seed)
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                fmt_f64(r.train_loss),
                fmt_f64(r.val_full),
                fmt_f64(r.val_quant),
                fmt_f64(r.seconds),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses records written by [`RunLog::write_csv_to`]. Metadata is not
    /// part of the CSV and comes back empty.
    pub fn read_csv_from<R: Read>(input: R, direction: Direction) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header = rd.headers().map_err(csv_err)?;
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::Format(format!("unexpected CSV header {header:?}")));
        }
        let mut log = RunLog::new(RunMetadata::default(), direction);
        for row in rd.records() {
            let row = row.map_err(csv_err)?;
            let field = |i: usize| -> Result<f64> {
                row[i]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad number {:?} in column {}", &row[i], CSV_HEADER[i])))
            };
            log.push(EpochRecord {
                epoch: row[0]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad epoch {:?}", &row[0])))?,
                train_loss: field(1)?,
                val_full: field(2)?,
                val_quant: field(3)?,
                seconds: field(4)?,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(log)
    }
}

pub fn write_csv(log: &RunLog, path: impl AsRef<Path>) -> Result<()> {
    log.write_csv_to(File::create(path)?)
}

pub fn read_csv(path: impl AsRef<Path>, direction: Direction) -> Result<RunLog> {
    RunLog::read_csv_from(File::open(path)?, direction)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        }
    } else {
        Error::Format(e.to_string())
    }
}

/// Mean and (population) variance of a set of values.
pub fn mean_and_variance(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var))
}
