//! Character corpora and fixed-shape feature datasets.

mod corpus;
mod features;
mod synth;

pub use corpus::{load_char_corpus, CharCorpus, Split};
pub use features::{
    load_feature_dataset, pad, pad_and_whiten, read_qfd, write_qfd, FeatureDataset, FeatureSample, LabeledSequence,
    WhiteningStats, STD_FLOOR,
};
pub use synth::{make_synthetic_digits, SyntheticDigits, DIGIT_CLASSES, DIGIT_COLS, DIGIT_ROWS};
