use std::fs;
use std::io;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// A byte-level corpus split into contiguous train/valid/test ranges.
///
/// Symbols are indices into `alphabet`, which lists the distinct bytes of
/// the whole file in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharCorpus {
    alphabet: Vec<u8>,
    train: Vec<usize>,
    valid: Vec<usize>,
    test: Vec<usize>,
    seq_len: usize,
}

pub fn load_char_corpus(path: impl AsRef<Path>, fractions: (f64, f64, f64), seq_len: usize) -> Result<CharCorpus> {
    let bytes = fs::read(path.as_ref())?;
    CharCorpus::from_bytes(&bytes, fractions, seq_len)
}

impl CharCorpus {
    pub fn from_bytes(bytes: &[u8], fractions: (f64, f64, f64), seq_len: usize) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::Io(io::Error::new(io::ErrorKind::InvalidData, "corpus is empty")));
        }
        let (ft, fv, fs) = fractions;
        if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "split fractions must be positive and sum to 1, got {fractions:?}"
            )));
        }
        if seq_len == 0 {
            return Err(Error::Parameter("seq_len must be at least 1".into()));
        }

        let mut lookup = [usize::MAX; 256];
        let mut alphabet = Vec::new();
        let symbols: Vec<usize> = bytes
            .iter()
            .map(|&b| {
                if lookup[b as usize] == usize::MAX {
                    lookup[b as usize] = alphabet.len();
                    alphabet.push(b);
                }
                lookup[b as usize]
            })
            .collect();

        let n = symbols.len();
        let n_train = ((n as f64 * ft).round() as usize).min(n);
        let n_valid = ((n as f64 * fv).round() as usize).min(n - n_train);
        let test = symbols[n_train + n_valid..].to_vec();
        let valid = symbols[n_train..n_train + n_valid].to_vec();
        let mut train = symbols;
        train.truncate(n_train);

        Ok(Self {
            alphabet,
            train,
            valid,
            test,
            seq_len,
        })
    }

    pub fn alphabet(&self) -> &[u8] {
        &self.alphabet
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Training sequences: `seq_len` symbols each, trailing remainder
    /// dropped.
    pub fn train_sequences(&self) -> Vec<Vec<usize>> {
        self.train.chunks_exact(self.seq_len).map(<[usize]>::to_vec).collect()
    }

    /// Evaluation chunks of a split: `seq_len` symbols each, with a shorter
    /// final chunk so every symbol is scored.
    pub fn eval_chunks(&self, split: Split) -> Vec<Vec<usize>> {
        self.split(split).chunks(self.seq_len).map(<[usize]>::to_vec).collect()
    }

    /// Maps text back to symbol indices; bytes outside the alphabet are a
    /// data error.
    pub fn encode(&self, bytes: &[u8]) -> Result<Vec<usize>> {
        bytes
            .iter()
            .map(|b| {
                self.alphabet
                    .iter()
                    .position(|a| a == b)
                    .ok_or_else(|| Error::Data(format!("byte {b:#04x} not in alphabet")))
            })
            .collect()
    }
}
