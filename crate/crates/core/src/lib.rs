//! Reduced-precision weight training for recurrent networks.
//!
//! Full-precision master weights accumulate optimizer updates while the
//! forward and backward passes run on a quantized view (ternary, fixed-point
//! or power-of-two). Trained power-of-two and ternary weights can be packed
//! into compact codes and evaluated with multiplication-free kernels.

pub mod data;
pub mod error;
pub mod lowbit;
pub mod metrics;
pub mod models;
pub mod quantize;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use models::{init_gru, init_vanilla, GruClassifier, LinearWeights, VanillaRnnLm};
pub use quantize::{ClipMode, QmfFormat, QuantDecision, QuantMethod};
pub use rng::RandomSource;
pub use tensor::Tensor;
pub use data::{CharCorpus, FeatureDataset, LabeledSequence, Split};
pub use metrics::{accuracy, bpc, Direction, EpochRecord, RunLog, RunMetadata};
pub use train::{train_loop, AdamConfig, Network, TrainConfig, TrainOutcome};
pub use lowbit::{Encoding, PackedWeights, StoredModel, StoredNetwork, UnpackedNetwork};
