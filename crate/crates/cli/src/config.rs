//! Experiment configuration files.
//!
//! A config is TOML with five tables. Unknown keys are errors. See
//! `configs/digits_gru.toml` for an annotated example.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qrnn_core::models::{GruClassifier, VanillaRnnLm};
use qrnn_core::train::{Network, TrainConfig};
use qrnn_core::{AdamConfig, QuantMethod};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Charlm,
    Seqclass,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Charlm => "charlm",
            Task::Seqclass => "seqclass",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "charlm" => Ok(Task::Charlm),
            "seqclass" => Ok(Task::Seqclass),
            other => bail!("unknown task {other:?}; expected charlm or seqclass"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    pub quant: QuantSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub task: Task,
    /// Relative paths resolve against the config file's directory.
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Character corpus (charlm).
    pub corpus: Option<PathBuf>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    /// Only the first `max_chars` bytes of the corpus are used.
    #[serde(default = "default_max_chars")]
    pub max_chars: usize,
    /// QFD training and validation sets (seqclass).
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    /// Generated data instead of files (seqclass).
    pub synthetic: Option<SyntheticSection>,
    /// Target `rows x cols` for zero padding; defaults to the data shape.
    pub pad_to: Option<[usize; 2]>,
    #[serde(default = "yes")]
    pub whiten: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub train_per_class: usize,
    pub valid_per_class: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_rows")]
    pub rows: usize,
    #[serde(default = "default_cols")]
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    /// Dense layer width between the GRU and the softmax (seqclass).
    pub dense: Option<usize>,
    /// Input and output weights start in U[-init_scale, init_scale)
    /// (charlm).
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

/// Missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient norm limit; 0 disables clipping. Unset means 1.0
    /// for charlm and off for seqclass.
    pub grad_clip_norm: Option<f64>,
    pub clip_masters: bool,
    /// Record per-epoch wall time. Off keeps outputs byte-identical across
    /// runs.
    pub record_wall_time: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            max_epochs: 400,
            patience: 100,
            batch_size: 32,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            grad_clip_norm: None,
            clip_masters: false,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantSection {
    /// One run per method and seed.
    pub methods: Vec<String>,
    /// Parameter groups the methods apply to. charlm: input, recurrent,
    /// output. seqclass: gru, head.
    pub groups: Option<Vec<String>>,
}

const DEFAULT_CHARLM_CLIP: f64 = 1.0;

fn default_split() -> [f64; 3] {
    [0.9, 0.05, 0.05]
}
fn default_seq_len() -> usize {
    50
}
fn default_max_chars() -> usize {
    1_000_000
}
fn yes() -> bool {
    true
}
fn default_classes() -> usize {
    10
}
fn default_rows() -> usize {
    39
}
fn default_cols() -> usize {
    200
}
fn default_init_scale() -> f64 {
    0.01
}

/// A loaded config together with its source, for diagnostics.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub methods: Vec<QuantMethod>,
    pub path: PathBuf,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.experiment.output_dir)
    }

    pub fn grad_clip_norm(&self) -> Option<f64> {
        let norm = self.config.train.grad_clip_norm.unwrap_or(match self.config.experiment.task {
            Task::Charlm => DEFAULT_CHARLM_CLIP,
            Task::Seqclass => 0.0,
        });
        (norm > 0.0).then_some(norm)
    }

    pub fn train_config(&self, method: QuantMethod, seed: u64) -> TrainConfig {
        let t = &self.config.train;
        TrainConfig {
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            seed,
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
            grad_clip_norm: self.grad_clip_norm(),
            method,
            quantized_groups: self.config.quant.groups.clone(),
            clip_masters: t.clip_masters,
            record_wall_time: t.record_wall_time,
        }
    }
}

/// Line (1-based) of `key` inside `[section]`, else of the section
/// header, for error messages.
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, line) in source.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

struct Problem {
    section: &'static str,
    key: &'static str,
    message: String,
}

fn problem(section: &'static str, key: &'static str, message: impl Into<String>) -> Problem {
    Problem {
        section,
        key,
        message: message.into(),
    }
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let source = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&source, path)
}

/// Parses and fully validates a config. Errors name the file and line.
pub fn parse(source: &str, path: &Path) -> Result<LoadedConfig> {
    let config: ExperimentConfig = toml::from_str(source).map_err(|e| {
        let line = e
            .span()
            .map(|s| source[..s.start.min(source.len())].matches('\n').count() + 1);
        match line {
            Some(l) => anyhow::anyhow!("{}:{l}: {}", path.display(), e.message()),
            None => anyhow::anyhow!("{}: {}", path.display(), e.message()),
        }
    })?;
    let methods = match validate(&config) {
        Ok(m) => m,
        Err(p) => {
            let at = locate(source, p.section, p.key)
                .map(|l| format!(":{l}"))
                .unwrap_or_default();
            bail!("{}{at}: [{}] {}: {}", path.display(), p.section, p.key, p.message);
        }
    };
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig {
        config,
        methods,
        path: path.to_path_buf(),
        base_dir,
    })
}

fn validate(c: &ExperimentConfig) -> std::result::Result<Vec<QuantMethod>, Problem> {
    let e = &c.experiment;
    if e.name.is_empty() || !e.name.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch)) {
        return Err(problem("experiment", "name", "must be non-empty and use only letters, digits, '-', '_' or '.'"));
    }
    if e.seeds.is_empty() {
        return Err(problem("experiment", "seeds", "at least one seed is required"));
    }
    let mut seen = e.seeds.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != e.seeds.len() {
        return Err(problem("experiment", "seeds", "seeds must be distinct"));
    }

    let d = &c.data;
    match e.task {
        Task::Charlm => {
            if d.corpus.is_none() {
                return Err(problem("data", "corpus", "charlm needs a corpus path"));
            }
            if d.train.is_some() || d.valid.is_some() || d.synthetic.is_some() || d.pad_to.is_some() {
                return Err(problem("data", "corpus", "train/valid/synthetic/pad_to apply to seqclass only"));
            }
            let [a, b, s] = d.split;
            if !(a > 0.0 && b > 0.0 && s > 0.0) || (a + b + s - 1.0).abs() > 1e-9 {
                return Err(problem("data", "split", "fractions must be positive and sum to 1"));
            }
            if d.seq_len == 0 {
                return Err(problem("data", "seq_len", "must be at least 1"));
            }
            if d.max_chars == 0 {
                return Err(problem("data", "max_chars", "must be at least 1"));
            }
            if c.model.dense.is_some() {
                return Err(problem("model", "dense", "charlm models have no dense layer"));
            }
            if !(c.model.init_scale > 0.0 && c.model.init_scale.is_finite()) {
                return Err(problem("model", "init_scale", "must be positive"));
            }
        }
        Task::Seqclass => {
            if d.corpus.is_some() {
                return Err(problem("data", "corpus", "corpus applies to charlm only"));
            }
            match (&d.synthetic, &d.train, &d.valid) {
                (Some(s), None, None) => {
                    if s.train_per_class == 0 || s.valid_per_class == 0 {
                        return Err(problem("data.synthetic", "train_per_class", "sample counts must be at least 1"));
                    }
                    if s.classes < 2 || s.rows == 0 || s.cols == 0 {
                        return Err(problem("data.synthetic", "classes", "need at least 2 classes and a nonzero shape"));
                    }
                }
                (None, Some(_), Some(_)) => {}
                _ => {
                    return Err(problem(
                        "data",
                        "train",
                        "give either both train and valid QFD paths or a [data.synthetic] table",
                    ))
                }
            }
            if matches!(d.pad_to, Some([0, _]) | Some([_, 0])) {
                return Err(problem("data", "pad_to", "shape must be nonzero"));
            }
            if c.model.dense.is_none_or(|v| v == 0) {
                return Err(problem("model", "dense", "seqclass needs a nonzero dense width"));
            }
        }
    }
    if c.model.hidden == 0 {
        return Err(problem("model", "hidden", "must be at least 1"));
    }

    let t = &c.train;
    if t.batch_size == 0 {
        return Err(problem("train", "batch_size", "must be at least 1"));
    }
    if t.max_epochs == 0 {
        return Err(problem("train", "max_epochs", "must be at least 1"));
    }
    if t.patience == 0 || t.patience > t.max_epochs {
        return Err(problem("train", "patience", format!("must be between 1 and max_epochs ({})", t.max_epochs)));
    }
    if t.grad_clip_norm.is_some_and(|g| !(g >= 0.0 && g.is_finite())) {
        return Err(problem("train", "grad_clip_norm", "must be finite and non-negative"));
    }
    let adam = AdamConfig {
        learning_rate: t.learning_rate,
        beta1: t.beta1,
        beta2: t.beta2,
        epsilon: t.epsilon,
    };
    adam.validate().map_err(|err| problem("train", "learning_rate", err.to_string()))?;

    let q = &c.quant;
    if q.methods.is_empty() {
        return Err(problem("quant", "methods", "list at least one method"));
    }
    let methods = q
        .methods
        .iter()
        .map(|m| m.parse::<QuantMethod>().map_err(|err| problem("quant", "methods", err.to_string())))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut tags: Vec<String> = methods.iter().map(QuantMethod::tag).collect();
    tags.sort();
    tags.dedup();
    if tags.len() != methods.len() {
        return Err(problem("quant", "methods", "methods must be distinct"));
    }
    if let Some(groups) = &q.groups {
        let known = match e.task {
            Task::Charlm => VanillaRnnLm::groups(),
            Task::Seqclass => GruClassifier::groups(),
        };
        if let Some(bad) = groups.iter().find(|g| !known.contains(&g.as_str())) {
            return Err(problem("quant", "groups", format!("unknown group {bad:?}; {} groups are {known:?}", e.task)));
        }
    }
    Ok(methods)
}
