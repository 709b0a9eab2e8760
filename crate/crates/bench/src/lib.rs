//! Fixtures shared by the benchmarks.

use qrnn_core::quantize::quantize_tensor_deterministic;
use qrnn_core::{init_gru, init_vanilla, GruClassifier, LabeledSequence, QuantMethod, RandomSource, Tensor, VanillaRnnLm};

pub const SEED: u64 = 7;

/// Square weight matrix in [-1, 1] plus an input vector.
pub fn weights(n: usize) -> (Tensor, Vec<f64>) {
    let mut rng = RandomSource::new(SEED);
    let w = Tensor::uniform_fill(&mut rng, -1.0, 1.0, n, n).unwrap();
    let x = Tensor::uniform_fill(&mut rng, -1.0, 1.0, n, 1).unwrap().into_vec();
    (w, x)
}

pub fn quantized(w: &Tensor, method: QuantMethod) -> Tensor {
    quantize_tensor_deterministic(w, method).unwrap()
}

pub fn vanilla(vocab: usize, hidden: usize, seq_len: usize, batch: usize) -> (VanillaRnnLm, Vec<Vec<usize>>) {
    let mut rng = RandomSource::new(SEED);
    let model = init_vanilla(&mut rng, vocab, hidden, 0.1).unwrap();
    let chunks = (0..batch)
        .map(|b| (0..seq_len).map(|t| (t * 7 + b * 3) % vocab).collect())
        .collect();
    (model, chunks)
}

pub fn gru(frames: usize, dims: usize, hidden: usize, batch: usize) -> (GruClassifier, Vec<LabeledSequence>) {
    let mut rng = RandomSource::new(SEED);
    let model = init_gru(&mut rng, dims, hidden, hidden, 10).unwrap();
    let samples = (0..batch)
        .map(|i| LabeledSequence {
            frames: Tensor::uniform_fill(&mut rng, -1.0, 1.0, frames, dims).unwrap(),
            label: i % 10,
        })
        .collect();
    (model, samples)
}
