use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use qrnn_core::data::{
    load_feature_dataset, make_synthetic_digits, pad, pad_and_whiten, write_qfd, FeatureDataset, DIGIT_CLASSES,
    DIGIT_COLS, DIGIT_ROWS,
};
use qrnn_core::lowbit::{export_model, import_model, Encoding, StoredModel, StoredNetwork, UnpackedNetwork};
use qrnn_core::metrics::{accuracy, bpc, fmt_f64, write_csv};
use qrnn_core::models::{init_gru, init_vanilla};
use qrnn_core::quantize::quantize_tensor_deterministic;
use qrnn_core::train::{deterministic_view, train_loop, Network, TrainOutcome, INIT_STREAM};
use qrnn_core::{CharCorpus, LabeledSequence, QuantMethod, RandomSource, RunMetadata, Split};
use serde::Serialize;

use crate::config::{self, LoadedConfig, Task};

/// Sub-streams of the run seed used to draw synthetic training and
/// validation sets.
const SYNTH_TRAIN_STREAM: u64 = 10;
const SYNTH_VALID_STREAM: u64 = 11;

/// Chunk length used by `eval` for character models.
pub const EVAL_SEQ_LEN: usize = 50;

enum Prepared {
    Char {
        corpus: CharCorpus,
    },
    Seq {
        train: Vec<LabeledSequence>,
        valid: Vec<LabeledSequence>,
        input: usize,
        labels: usize,
        whitening: Option<qrnn_core::data::WhiteningStats>,
    },
}

fn prepare_seq(cfg: &LoadedConfig, mut train: FeatureDataset, mut valid: FeatureDataset) -> Result<Prepared> {
    let d = &cfg.config.data;
    train.validate().context("training set")?;
    let (rows, cols) = match d.pad_to {
        Some([r, c]) => (r, c),
        None => {
            let max = |ds: &FeatureDataset| {
                ds.samples.iter().fold((0, 0), |(r, c), s| (r.max(s.features.rows()), c.max(s.features.cols())))
            };
            let (a, b) = (max(&train), max(&valid));
            (a.0.max(b.0), a.1.max(b.1))
        }
    };
    ensure!(
        train.n_labels == valid.n_labels,
        "training set has {} labels, validation set {}",
        train.n_labels,
        valid.n_labels
    );
    let whitening = if d.whiten {
        let stats = pad_and_whiten(&mut train, rows, cols)?;
        pad(&mut valid, rows, cols)?;
        stats.apply(&mut valid)?;
        Some(stats)
    } else {
        pad(&mut train, rows, cols)?;
        pad(&mut valid, rows, cols)?;
        None
    };
    valid.validate().context("validation set")?;
    Ok(Prepared::Seq {
        input: rows,
        labels: train.n_labels,
        train: train.sequences(),
        valid: valid.sequences(),
        whitening,
    })
}

fn prepare(cfg: &LoadedConfig, seed: u64) -> Result<Prepared> {
    let d = &cfg.config.data;
    match cfg.config.experiment.task {
        Task::Charlm => {
            let path = cfg.resolve(d.corpus.as_ref().expect("validated"));
            let mut bytes = fs::read(&path).with_context(|| format!("reading corpus {}", path.display()))?;
            bytes.truncate(d.max_chars);
            let [a, b, c] = d.split;
            let corpus = CharCorpus::from_bytes(&bytes, (a, b, c), d.seq_len)
                .with_context(|| format!("corpus {}", path.display()))?;
            ensure!(!corpus.train_sequences().is_empty(), "corpus has no complete training sequence");
            ensure!(!corpus.split(Split::Valid).is_empty(), "corpus validation split is empty");
            Ok(Prepared::Char { corpus })
        }
        Task::Seqclass => {
            if let Some(s) = &d.synthetic {
                let gen = |stream, n| {
                    make_synthetic_digits(&mut RandomSource::derive(seed, stream), n, s.classes, s.rows, s.cols)
                };
                prepare_seq(cfg, gen(SYNTH_TRAIN_STREAM, s.train_per_class)?, gen(SYNTH_VALID_STREAM, s.valid_per_class)?)
            } else {
                let load = |p: &PathBuf| {
                    let p = cfg.resolve(p);
                    load_feature_dataset(&p).with_context(|| format!("loading {}", p.display()))
                };
                prepare_seq(cfg, load(d.train.as_ref().expect("validated"))?, load(d.valid.as_ref().expect("validated"))?)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub csv: String,
    pub model: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub val_full: f64,
    pub val_quant: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Meta<'a> {
    experiment: &'a str,
    task: String,
    metric: &'static str,
    config: &'a config::ExperimentConfig,
    alphabet: Option<String>,
    runs: &'a [RunRecord],
}

fn encoding_for<N: Network>(model: &N, outcome_methods: &[QuantMethod]) -> Vec<(&'static str, Encoding)> {
    model
        .param_names()
        .into_iter()
        .zip(outcome_methods)
        .map(|(n, m)| (n, Encoding::for_method(*m)))
        .collect()
}

/// Packs the deterministic quantization of the best masters.
fn packed<N: Network>(
    outcome: &TrainOutcome<N>,
    wrap: impl FnOnce(N) -> UnpackedNetwork,
) -> Result<StoredModel> {
    let encodings = encoding_for(&outcome.best, &outcome.methods);
    let q = deterministic_view(&outcome.best, &outcome.methods)?;
    let enc = |name: &str| encodings.iter().find(|(n, _)| *n == name).map_or(Encoding::F64, |(_, e)| *e);
    Ok(StoredModel::pack(&wrap(q), enc)?)
}

/// Runs every (method, seed) pair of the config. Returns the run records.
pub fn train(path: &Path) -> Result<Vec<RunRecord>> {
    let cfg = config::load(path)?;
    let exp = &cfg.config.experiment;
    let out_dir = cfg.output_dir();
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut runs = Vec::new();
    let mut alphabet = None;
    for &method in &cfg.methods {
        for &seed in &exp.seeds {
            let tcfg = cfg.train_config(method, seed);
            let metadata = RunMetadata {
                experiment: exp.name.clone(),
                method: method.tag(),
                seed,
                config: cfg.path.display().to_string(),
            };
            let mut init = RandomSource::derive(seed, INIT_STREAM);
            let m = &cfg.config.model;
            let (log, best_epoch, stored) = match prepare(&cfg, seed)? {
                Prepared::Char { corpus } => {
                    let model = init_vanilla(&mut init, corpus.alphabet_size(), m.hidden, m.init_scale)?;
                    let train = corpus.train_sequences();
                    let valid = corpus.eval_chunks(Split::Valid);
                    let out = train_loop(&model, &train, &valid, &tcfg, metadata)?;
                    alphabet = Some(corpus.alphabet().to_vec());
                    let stored = packed(&out, UnpackedNetwork::CharLm)?.with_alphabet(alphabet.clone());
                    (out.log, out.best_epoch, stored)
                }
                Prepared::Seq {
                    train,
                    valid,
                    input,
                    labels,
                    whitening,
                } => {
                    let model = init_gru(&mut init, input, m.hidden, m.dense.expect("validated"), labels)?;
                    let out = train_loop(&model, &train, &valid, &tcfg, metadata)?;
                    let stored = packed(&out, UnpackedNetwork::SeqClass)?.with_whitening(whitening);
                    (out.log, out.best_epoch, stored)
                }
            };
            let csv_name = log.file_name();
            write_csv(&log, out_dir.join(&csv_name))?;
            let model_name = format!("{}_{}_{}.qrnn", exp.name, method.tag(), seed);
            export_model(&stored, out_dir.join(&model_name))?;
            let best = log.best().expect("at least one epoch");
            eprintln!(
                "{} {} seed {}: {} epochs, best epoch {}, val_full {}, val_quant {}",
                exp.name,
                method,
                seed,
                log.records.len(),
                best_epoch,
                best.val_full,
                best.val_quant
            );
            runs.push(RunRecord {
                method: method.to_string(),
                seed,
                csv: csv_name,
                model: model_name,
                epochs: log.records.len(),
                best_epoch,
                val_full: best.val_full,
                val_quant: best.val_quant,
            });
        }
    }

    write_summary(&out_dir.join(format!("{}_summary.csv", exp.name)), &cfg.methods, &runs)?;
    let meta = Meta {
        experiment: &exp.name,
        task: exp.task.to_string(),
        metric: match exp.task {
            Task::Charlm => "bpc",
            Task::Seqclass => "accuracy",
        },
        config: &cfg.config,
        alphabet: alphabet.map(|a| String::from_utf8_lossy(&a).into_owned()),
        runs: &runs,
    };
    fs::write(
        out_dir.join(format!("{}.meta.json", exp.name)),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(runs)
}

/// One row per method: mean and max of the final (best-epoch) validation
/// metrics across seeds.
fn write_summary(path: &Path, methods: &[QuantMethod], runs: &[RunRecord]) -> Result<()> {
    let mut out = String::from("method,runs,mean_val_full,max_val_full,mean_val_quant,max_val_quant\n");
    for m in methods {
        let name = m.to_string();
        let rs: Vec<&RunRecord> = runs.iter().filter(|r| r.method == name).collect();
        let n = rs.len() as f64;
        let mean = |f: fn(&RunRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
        let max = |f: fn(&RunRecord) -> f64| rs.iter().map(|r| f(r)).fold(f64::NEG_INFINITY, f64::max);
        out += &format!(
            "{name},{},{},{},{},{}\n",
            rs.len(),
            fmt_f64(mean(|r| r.val_full)),
            fmt_f64(max(|r| r.val_full)),
            fmt_f64(mean(|r| r.val_quant)),
            fmt_f64(max(|r| r.val_quant)),
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Applies the deterministic variant of `method` to every weight tensor of
/// the model in `input` and writes the packed result to `output`.
pub fn quantize(input: &Path, method: &str, output: &Path) -> Result<()> {
    let method: QuantMethod = method.parse()?;
    if method == QuantMethod::None {
        bail!("method none does not quantize; choose a ternary, pow2-ternary or exp method");
    }
    let method = method.deterministic();
    let model = import_model(input).with_context(|| format!("reading {}", input.display()))?;
    let encoding = Encoding::for_method(method);
    let q = match model.unpacked()? {
        UnpackedNetwork::CharLm(m) => UnpackedNetwork::CharLm(m.try_map(|_, w| quantize_tensor_deterministic(w, method))?),
        UnpackedNetwork::SeqClass(m) => {
            UnpackedNetwork::SeqClass(m.try_map(|_, w| quantize_tensor_deterministic(w, method))?)
        }
    };
    let stored = StoredModel::pack(&q, |_| encoding)?
        .with_whitening(model.whitening)
        .with_alphabet(model.alphabet);
    export_model(&stored, output).with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}

/// Evaluates a model file on a dataset: BPC for `charlm`, accuracy for
/// `seqclass`. Packed weights run through the low-bit kernels.
pub fn eval(model_path: &Path, data: &Path, task: &str) -> Result<f64> {
    let task: Task = task.parse()?;
    let model = import_model(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    match (&model.network, task) {
        (StoredNetwork::CharLm(m), Task::Charlm) => {
            let bytes = fs::read(data).with_context(|| format!("reading {}", data.display()))?;
            ensure!(!bytes.is_empty(), "corpus {} is empty", data.display());
            let symbols = encode_corpus(&bytes, model.alphabet.as_deref(), m.vocab_size())?;
            let chunks: Vec<Vec<usize>> = symbols.chunks(EVAL_SEQ_LEN).map(<[usize]>::to_vec).collect();
            Ok(bpc(m, &chunks)?)
        }
        (StoredNetwork::SeqClass(m), Task::Seqclass) => {
            let mut ds = load_feature_dataset(data).with_context(|| format!("loading {}", data.display()))?;
            ds.validate()?;
            let (rows, cols) = ds.shape().ok_or_else(|| anyhow!("dataset {} is empty", data.display()))?;
            ensure!(
                rows <= m.input_size(),
                "samples have {rows} feature dimensions, model expects {}",
                m.input_size()
            );
            pad(&mut ds, m.input_size(), cols)?;
            if let Some(w) = &model.whitening {
                w.apply(&mut ds)?;
            }
            ensure!(
                ds.samples.iter().all(|s| s.label < m.n_labels()),
                "dataset labels exceed the model's {} classes",
                m.n_labels()
            );
            Ok(accuracy(m, &ds.sequences())?)
        }
        (StoredNetwork::CharLm(_), Task::Seqclass) => bail!("model is a character language model, not a classifier"),
        (StoredNetwork::SeqClass(_), Task::Charlm) => bail!("model is a sequence classifier, not a language model"),
    }
}

fn encode_corpus(bytes: &[u8], alphabet: Option<&[u8]>, vocab: usize) -> Result<Vec<usize>> {
    let alphabet: Vec<u8> = match alphabet {
        Some(a) => a.to_vec(),
        None => {
            let mut a = Vec::new();
            for &b in bytes {
                if !a.contains(&b) {
                    a.push(b);
                }
            }
            a
        }
    };
    ensure!(
        alphabet.len() == vocab,
        "alphabet has {} symbols, model vocabulary is {vocab}",
        alphabet.len()
    );
    let mut lookup = [usize::MAX; 256];
    for (i, &b) in alphabet.iter().enumerate() {
        lookup[b as usize] = i;
    }
    bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| match lookup[b as usize] {
            usize::MAX => Err(anyhow!("byte {b:#04x} at offset {i} is not in the model's alphabet")),
            s => Ok(s),
        })
        .collect()
}

/// Writes `n_per_class` synthetic digits per class drawn with `seed`.
pub fn gen_synth(seed: u64, n_per_class: usize, out: &Path) -> Result<()> {
    ensure!(n_per_class >= 1, "n_per_class must be at least 1");
    let ds = make_synthetic_digits(&mut RandomSource::new(seed), n_per_class, DIGIT_CLASSES, DIGIT_ROWS, DIGIT_COLS)?;
    write_qfd(&ds, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
