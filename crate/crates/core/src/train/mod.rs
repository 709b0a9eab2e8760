//! Dual-copy quantized training.
//!
//! Each trainable tensor has a full-precision master and a quantized view.
//! Before every minibatch the views are recomputed from the masters
//! (stochastic methods resample), the loss gradient is taken with respect
//! to the views, and Adam applies it to the masters unchanged
//! (straight-through).

mod adam;
mod backprop;
mod early_stop;

use std::time::Instant;

pub use adam::{clip_gradients, AdamConfig, AdamState};
pub use backprop::{gru_sample_grad, vanilla_chunk_grad};
pub use early_stop::EarlyStopping;

use crate::data::LabeledSequence;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, bpc, Direction, EpochRecord, RunLog, RunMetadata};
use crate::models::{GruClassifier, VanillaRnnLm};
use crate::quantize::{quantize_tensor, quantize_tensor_deterministic, QuantMethod};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

/// Sub-stream of the run seed used for parameter initialization.
pub const INIT_STREAM: u64 = 0;
/// Sub-stream used to shuffle minibatches.
pub const SHUFFLE_STREAM: u64 = 1;
/// Sub-stream consumed by stochastic quantization.
pub const QUANT_STREAM: u64 = 2;

/// A model the training loop can drive.
pub trait Network: Clone {
    type Sample;

    /// Direction in which the validation metric improves.
    const DIRECTION: Direction;

    fn param_names(&self) -> Vec<&'static str>;
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Every parameter group name.
    fn groups() -> &'static [&'static str];
    /// Groups quantized when the configuration does not say otherwise.
    fn default_quantized_groups() -> &'static [&'static str];
    fn group_of(name: &str) -> &'static str;

    /// Loss of one sample (mean over its predictions) and its gradient in
    /// parameter order.
    fn sample_grad(&self, sample: &Self::Sample) -> Result<(f64, Vec<Tensor>)>;

    /// Validation metric: BPC for language models, accuracy for
    /// classifiers.
    fn evaluate(&self, split: &[Self::Sample]) -> Result<f64>;
}

impl Network for VanillaRnnLm {
    type Sample = Vec<usize>;
    const DIRECTION: Direction = Direction::Minimize;

    fn param_names(&self) -> Vec<&'static str> {
        self.named().map(|(n, _)| n).to_vec()
    }

    fn params(&self) -> Vec<&Tensor> {
        self.named().map(|(_, w)| w).to_vec()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.named_mut().into_iter().map(|(_, w)| w).collect()
    }

    fn groups() -> &'static [&'static str] {
        &["input", "recurrent", "output"]
    }

    fn default_quantized_groups() -> &'static [&'static str] {
        Self::groups()
    }

    fn group_of(name: &str) -> &'static str {
        match name {
            "w_xh" => "input",
            "w_hh" | "b_h" => "recurrent",
            _ => "output",
        }
    }

    fn sample_grad(&self, sample: &Vec<usize>) -> Result<(f64, Vec<Tensor>)> {
        vanilla_chunk_grad(self, sample)
    }

    fn evaluate(&self, split: &[Vec<usize>]) -> Result<f64> {
        bpc(self, split)
    }
}

impl Network for GruClassifier {
    type Sample = LabeledSequence;
    const DIRECTION: Direction = Direction::Maximize;

    fn param_names(&self) -> Vec<&'static str> {
        self.named().map(|(n, _)| n).to_vec()
    }

    fn params(&self) -> Vec<&Tensor> {
        self.named().map(|(_, w)| w).to_vec()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.named_mut().into_iter().map(|(_, w)| w).collect()
    }

    fn groups() -> &'static [&'static str] {
        &["gru", "head"]
    }

    fn default_quantized_groups() -> &'static [&'static str] {
        &["gru"]
    }

    fn group_of(name: &str) -> &'static str {
        match name {
            "w_d" | "b_d" | "w_o" | "b_o" => "head",
            _ => "gru",
        }
    }

    fn sample_grad(&self, sample: &LabeledSequence) -> Result<(f64, Vec<Tensor>)> {
        gru_sample_grad(self, sample)
    }

    fn evaluate(&self, split: &[LabeledSequence]) -> Result<f64> {
        accuracy(self, split)
    }
}

/// A full-precision master tensor with its current quantized view.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowParam {
    pub name: &'static str,
    pub master: Tensor,
    pub quantized: Tensor,
    pub method: QuantMethod,
}

impl ShadowParam {
    /// The view starts as a copy of the master until the first refresh.
    pub fn new(name: &'static str, master: Tensor, method: QuantMethod) -> Self {
        Self {
            name,
            quantized: master.clone(),
            master,
            method,
        }
    }

    pub fn refresh(&mut self, rng: &mut RandomSource) -> Result<()> {
        self.quantized = quantize_tensor(&self.master, self.method, rng)?;
        Ok(())
    }
}

/// Recomputes every quantized view from its master, in order.
pub fn refresh_quantized(params: &mut [ShadowParam], rng: &mut RandomSource) -> Result<()> {
    params.iter_mut().try_for_each(|p| p.refresh(rng))
}

/// Mean loss over `batch` and the gradient of that mean. Per-sample
/// gradients are summed in batch order, then divided by the batch size.
pub fn bptt_step<N: Network>(model: &N, batch: &[&N::Sample]) -> Result<(f64, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty minibatch".into()));
    }
    let mut loss_sum = 0.0;
    let mut acc: Option<Vec<Tensor>> = None;
    for sample in batch {
        let (loss, grads) = model.sample_grad(sample)?;
        loss_sum += loss;
        match acc.as_mut() {
            None => acc = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    let n = batch.len() as f64;
    let loss = loss_sum / n;
    if !loss.is_finite() {
        return Err(Error::Training(format!("loss became {loss}")));
    }
    let mut grads = acc.expect("batch is non-empty");
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub grad_clip_norm: Option<f64>,
    pub method: QuantMethod,
    /// Parameter groups the method applies to; `None` means the network's
    /// default groups.
    pub quantized_groups: Option<Vec<String>>,
    /// Clamp masters to [-1, 1] after each update.
    pub clip_masters: bool,
    /// Fill the `seconds` column with wall time; zero otherwise.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 400,
            patience: 100,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
            grad_clip_norm: None,
            method: QuantMethod::None,
            quantized_groups: None,
            clip_masters: false,
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience must be in 1..={}, got {}",
                self.max_epochs, self.patience
            )));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::Config(format!("grad_clip_norm must be positive, got {c}")));
            }
        }
        self.adam.validate()
    }

    /// Per-parameter methods for network `N`.
    pub fn methods_for<N: Network>(&self, model: &N) -> Result<Vec<QuantMethod>> {
        let groups: Vec<&str> = match &self.quantized_groups {
            Some(g) => g.iter().map(String::as_str).collect(),
            None => N::default_quantized_groups().to_vec(),
        };
        if let Some(bad) = groups.iter().find(|g| !N::groups().contains(g)) {
            return Err(Error::Config(format!(
                "unknown parameter group {bad:?}; expected one of {:?}",
                N::groups()
            )));
        }
        Ok(model
            .param_names()
            .into_iter()
            .map(|name| {
                if groups.contains(&N::group_of(name)) {
                    self.method
                } else {
                    QuantMethod::None
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<N> {
    pub log: RunLog,
    /// Full-precision masters from the epoch with the best validation
    /// metric.
    pub best: N,
    pub best_epoch: usize,
    /// Masters after the last epoch.
    pub last: N,
    /// Per-parameter quantization methods used.
    pub methods: Vec<QuantMethod>,
}

impl<N: Network> TrainOutcome<N> {
    /// The best masters passed through the deterministic variant of each
    /// parameter's method.
    pub fn best_quantized(&self) -> Result<N> {
        deterministic_view(&self.best, &self.methods)
    }
}

/// Copies `values` into the parameters of `model`.
fn load_params<'a, N: Network>(model: &mut N, values: impl Iterator<Item = &'a Tensor>) {
    for (dst, src) in model.params_mut().into_iter().zip(values) {
        dst.data_mut().copy_from_slice(src.data());
    }
}

/// `model` with each parameter replaced by its deterministic quantization.
pub fn deterministic_view<N: Network>(model: &N, methods: &[QuantMethod]) -> Result<N> {
    let quantized = model
        .params()
        .into_iter()
        .zip(methods)
        .map(|(p, m)| quantize_tensor_deterministic(p, *m))
        .collect::<Result<Vec<_>>>()?;
    let mut out = model.clone();
    load_params(&mut out, quantized.iter());
    Ok(out)
}

/// Trains `model` with dual-copy quantization and early stopping.
///
/// Per epoch: shuffle, then for each minibatch refresh the quantized
/// views, backpropagate through them, optionally clip, and update the
/// masters with Adam. The validation metric is logged for the masters and
/// for their deterministic quantization; early stopping follows the
/// masters' metric.
pub fn train_loop<N: Network>(
    model: &N,
    train: &[N::Sample],
    valid: &[N::Sample],
    config: &TrainConfig,
    metadata: RunMetadata,
) -> Result<TrainOutcome<N>> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    let methods = config.methods_for(model)?;
    let mut shadows: Vec<ShadowParam> = model
        .param_names()
        .into_iter()
        .zip(model.params())
        .zip(&methods)
        .map(|((name, p), m)| ShadowParam::new(name, p.clone(), *m))
        .collect();

    let mut shuffle_rng = RandomSource::derive(config.seed, SHUFFLE_STREAM);
    let mut quant_rng = RandomSource::derive(config.seed, QUANT_STREAM);
    let mut adam = AdamState::new(config.adam, shadows.iter().map(|s| &s.master));
    let mut stopper = EarlyStopping::new(config.patience, N::DIRECTION);
    let mut log = RunLog::new(metadata, N::DIRECTION);
    let mut view = model.clone();
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            refresh_quantized(&mut shadows, &mut quant_rng)?;
            load_params(&mut view, shadows.iter().map(|s| &s.quantized));
            let batch: Vec<&N::Sample> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = bptt_step(&view, &batch)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {n_batches}: {e}")))?;
            if let Some(max_norm) = config.grad_clip_norm {
                clip_gradients(&mut grads, max_norm)?;
            }
            adam.update(shadows.iter_mut().map(|s| &mut s.master), &grads)?;
            if config.clip_masters {
                for s in &mut shadows {
                    s.master.data_mut().iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
                }
            }
            loss_sum += loss;
            n_batches += 1;
        }

        let mut full = model.clone();
        load_params(&mut full, shadows.iter().map(|s| &s.master));
        let val_full = full.evaluate(valid)?;
        let val_quant = deterministic_view(&full, &methods)?.evaluate(valid)?;
        if !val_full.is_finite() {
            return Err(Error::Training(format!("validation metric became {val_full} at epoch {epoch}")));
        }
        log.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_full,
            val_quant,
            seconds: if config.record_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })?;
        let stop = stopper.observe(epoch, val_full);
        if stopper.best().map(|(e, _)| e) == Some(epoch) {
            best = full.clone();
        }
        view = full;
        if stop {
            break;
        }
    }

    let best_epoch = stopper.best().map_or(1, |(e, _)| e);
    let mut last = model.clone();
    load_params(&mut last, shadows.iter().map(|s| &s.master));
    Ok(TrainOutcome {
        log,
        best,
        best_epoch,
        last,
        methods,
    })
}
