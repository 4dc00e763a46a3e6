//! Train/test split, BCE-with-logits loss, AdamW and the epoch loop.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::annotate::LabelMatrix;
use crate::corpus::Document;
use crate::model::{encoder_forward, loss_and_gradients, Example, ModelConfig, ModelError, ModelParams};
use crate::ontology::LabelSpace;
use crate::seed;
use crate::tokenizer::{encode, Vocab};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

/// Learning-rate shape after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Decays linearly to zero at the last optimizer step.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub threshold: f64,
    pub split_ratio: f64,
    /// Linear warmup length in optimizer steps.
    pub warmup_steps: usize,
    pub schedule: LrSchedule,
    /// Global gradient-norm clipping threshold.
    pub max_grad_norm: Option<f64>,
    /// Standard deviation of the truncated-normal weight initializer.
    pub init_std: f64,
    /// Optional per-label positive-class weights.
    pub pos_weight: Option<Vec<f64>>,
    pub max_len: usize,
    pub with_fulltext: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 10,
            batch_size: 16,
            seed: 42,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            threshold: 0.5,
            split_ratio: 0.8,
            warmup_steps: 0,
            schedule: LrSchedule::Constant,
            max_grad_norm: None,
            init_std: crate::model::INIT_STD,
            pos_weight: None,
            max_len: crate::tokenizer::DEFAULT_MAX_LEN,
            with_fulltext: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |field: &str, constraint: &str| {
            Err(TrainError::InvalidConfig(format!("{field} must satisfy {constraint}")))
        };
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", ">= 0 and finite");
        }
        if self.epochs < 1 {
            return fail("epochs", ">= 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size", ">= 1");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return fail("split_ratio", "0 < split_ratio < 1");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail("threshold", "0 < threshold < 1");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay", ">= 0");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("beta1/beta2", "0 <= beta < 1");
        }
        if !(self.eps > 0.0) {
            return fail("eps", "> 0");
        }
        if self.max_grad_norm.is_some_and(|n| !(n > 0.0)) {
            return fail("max_grad_norm", "> 0");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail("init_std", "> 0 and finite");
        }
        if self.max_len < 2 {
            return fail("max_len", ">= 2");
        }
        Ok(())
    }
}

/// Seeded shuffle, then `⌊n·ratio⌋` items to train and the rest to test.
pub fn split<T: Clone>(examples: &[T], ratio: f64, seed_value: u64) -> Result<(Vec<T>, Vec<T>), TrainError> {
    let (train_idx, test_idx) = split_indices(examples.len(), ratio, seed_value)?;
    Ok((
        train_idx.iter().map(|&i| examples[i].clone()).collect(),
        test_idx.iter().map(|&i| examples[i].clone()).collect(),
    ))
}

pub fn split_indices(n: usize, ratio: f64, seed_value: u64) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if n < 2 {
        return Err(TrainError::InvalidInput(format!("need at least 2 examples to split, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TrainError::InvalidInput(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stage_rng(seed_value, "split"));
    let n_train = libm::floor(n as f64 * ratio) as usize;
    let test = order.split_off(n_train);
    Ok((order, test))
}

/// `max(x,0) − x·y + log(1 + e^{−|x|})`
pub fn bce_with_logits_scalar(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + libm::log1p(libm::exp(-x.abs()))
}

/// Positive-weighted form; identical to the plain loss when `pos_weight == 1`.
pub fn bce_with_logits_weighted(x: f64, y: f64, pos_weight: f64) -> f64 {
    if pos_weight == 1.0 {
        return bce_with_logits_scalar(x, y);
    }
    let c = 1.0 + (pos_weight - 1.0) * y;
    (1.0 - y) * x + c * (libm::log1p(libm::exp(-x.abs())) + (-x).max(0.0))
}

/// `∂loss/∂x` of [`bce_with_logits_weighted`].
pub fn bce_with_logits_grad(x: f64, y: f64, pos_weight: f64) -> f64 {
    if pos_weight == 1.0 {
        return sigmoid(x) - y;
    }
    let c = 1.0 + (pos_weight - 1.0) * y;
    (1.0 - y) - c * sigmoid(-x)
}

/// Mean loss over all elements.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> Result<f64, TrainError> {
    if logits.len() != targets.len() {
        return Err(TrainError::Dimension(format!(
            "{} logits vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = logits.iter().zip(targets).map(|(&x, &y)| bce_with_logits_scalar(x, y)).sum();
    Ok(sum / logits.len() as f64)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// First and second moments per parameter tensor plus the step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data().len()]).collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamWHyper {
    fn from(c: &TrainConfig) -> Self {
        AdamWHyper {
            lr: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            weight_decay: c.weight_decay,
        }
    }
}

/// One AdamW update of a flat parameter slice at step `t` (already
/// incremented). Weight decay is applied to the parameter directly.
pub fn adamw_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, h: &AdamWHyper) {
    let bc1 = 1.0 - libm::pow(h.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(h.beta2, t as f64);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= h.lr * (m_hat / (libm::sqrt(v_hat) + h.eps) + h.weight_decay * param[i]);
    }
}

pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    hyper: &AdamWHyper,
) -> Result<(), TrainError> {
    let named = grads.named_tensors();
    if state.m.len() != named.len() {
        return Err(TrainError::Dimension(format!(
            "optimizer state has {} tensors, params have {}",
            state.m.len(),
            named.len()
        )));
    }
    for (name, g) in &named {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient(name.clone()));
        }
    }
    state.t += 1;
    for (i, p) in params.tensors_mut().into_iter().enumerate() {
        let g = named[i].1;
        if p.shape() != g.shape() {
            return Err(TrainError::Dimension(format!("gradient shape for {}", named[i].0)));
        }
        adamw_update(p.data_mut(), g.data(), &mut state.m[i], &mut state.v[i], state.t, hyper);
    }
    Ok(())
}

/// Learning rate for 1-based optimizer step `step` of `total`.
pub fn learning_rate_at(config: &TrainConfig, step: u64, total: u64) -> f64 {
    let warm = config.warmup_steps as u64;
    if step <= warm {
        return config.learning_rate * step as f64 / warm as f64;
    }
    match config.schedule {
        LrSchedule::Constant => config.learning_rate,
        LrSchedule::Linear => {
            let left = total.saturating_sub(step) as f64;
            let span = total.saturating_sub(warm).max(1) as f64;
            config.learning_rate * (left + 1.0) / span
        }
    }
}

/// Rescales all gradients together so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(mut grads: ModelParams, max_norm: f64) -> ModelParams {
    let norm = libm::sqrt(grads.tensors().iter().flat_map(|t| t.data()).map(|g| g * g).sum::<f64>());
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.scale(s);
        }
    }
    grads
}

/// Encodes each document and pairs it with its label-matrix row.
pub fn build_examples(
    docs: &[Document],
    matrix: &LabelMatrix,
    vocab: &Vocab,
    max_len: usize,
    with_fulltext: bool,
) -> Result<Vec<Example>, TrainError> {
    let rows: BTreeMap<&str, usize> = matrix.row_index();
    docs.iter()
        .map(|doc| {
            let row = *rows
                .get(doc.pmid.as_str())
                .ok_or_else(|| TrainError::InvalidInput(format!("pmid {} not in label matrix", doc.pmid)))?;
            let enc = encode(&doc.training_text(with_fulltext), vocab, max_len);
            Ok(Example {
                ids: enc.ids,
                mask: enc.attention_mask,
                targets: matrix.dense_row(row).into_iter().map(f64::from).collect(),
            })
        })
        .collect()
}

/// Mean per-element loss over `examples` in inference mode.
pub fn mean_loss(params: &ModelParams, config: &ModelConfig, examples: &[Example]) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::InvalidInput("cannot evaluate loss on an empty set".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        let logits = encoder_forward(&ex.ids, &ex.mask, params, config)?;
        total += logits
            .iter()
            .zip(&ex.targets)
            .map(|(&x, &y)| bce_with_logits_scalar(x, y))
            .sum::<f64>();
    }
    Ok(total / (examples.len() * config.num_labels) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub final_params: ModelParams,
    pub curve: Vec<EpochRecord>,
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
}

/// `epoch,train_loss,val_loss` with six decimals.
pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in curve {
        let _ = writeln!(out, "{},{:.6},{:.6}", r.epoch, r.train_loss, r.val_loss);
    }
    out
}

pub fn train_loop(
    train: &[Example],
    validation: &[Example],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let init = ModelParams::init_with_std(model_config, &mut seed::stage_rng(config.seed, "init"), config.init_std)?;
    train_loop_from(init, train, validation, model_config, config)
}

/// Runs the epoch loop starting from the given parameters.
pub fn train_loop_from(
    mut params: ModelParams,
    train: &[Example],
    validation: &[Example],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    model_config.validate()?;
    params.check_shapes(model_config)?;
    if train.is_empty() || validation.is_empty() {
        return Err(TrainError::InvalidInput(format!(
            "train ({}) and validation ({}) sets must be nonempty",
            train.len(),
            validation.len()
        )));
    }
    if let Some(w) = &config.pos_weight {
        if w.len() != model_config.num_labels {
            return Err(TrainError::InvalidConfig(format!(
                "pos_weight has {} entries for {} labels",
                w.len(),
                model_config.num_labels
            )));
        }
    }

    let mut shuffle_rng = seed::stage_rng(config.seed, "shuffle");
    let mut dropout_rng = seed::stage_rng(config.seed, "dropout");
    let mut state = OptimizerState::new(&params);
    let mut hyper = AdamWHyper::from(config);

    let initial_train_loss = mean_loss(&params, model_config, train)?;
    let initial_val_loss = mean_loss(&params, model_config, validation)?;

    let mut curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let total_steps = (config.epochs * train.len().div_ceil(config.batch_size)) as u64;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Example> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = loss_and_gradients(
                &params,
                model_config,
                &batch,
                config.pos_weight.as_deref(),
                Some(&mut dropout_rng as &mut dyn RngCore),
            )?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_no });
            }
            hyper.lr = learning_rate_at(config, state.t + 1, total_steps);
            let grads = match config.max_grad_norm {
                Some(max) => clip_grad_norm(grads, max),
                None => grads,
            };
            adamw_step(&mut params, &grads, &mut state, &hyper)?;
        }
        let train_loss = mean_loss(&params, model_config, train)?;
        let val_loss = mean_loss(&params, model_config, validation)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: order.len().div_ceil(config.batch_size) });
        }
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        final_params: params,
        curve,
        initial_train_loss,
        initial_val_loss,
    })
}

/// Labels whose sigmoid probability exceeds `threshold`.
pub fn labels_from_logits(logits: &[f64], threshold: f64) -> Vec<(usize, f64)> {
    logits
        .iter()
        .enumerate()
        .map(|(i, &x)| (i, sigmoid(x)))
        .filter(|&(_, p)| p > threshold)
        .collect()
}

pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    labels: &LabelSpace,
    vocab: &Vocab,
    text: &str,
    threshold: f64,
    max_len: usize,
) -> Result<Vec<(usize, f64)>, TrainError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(TrainError::InvalidInput(format!("threshold {threshold} outside (0, 1)")));
    }
    if labels.len() != config.num_labels {
        return Err(TrainError::Incompatible(format!(
            "model predicts {} labels but the label space has {}",
            config.num_labels,
            labels.len()
        )));
    }
    if vocab.len() != config.vocab_size {
        return Err(TrainError::Incompatible(format!(
            "model vocabulary has {} entries but the vocab file has {}",
            config.vocab_size,
            vocab.len()
        )));
    }
    let enc = encode(text, vocab, max_len.min(config.max_positions));
    let logits = encoder_forward(&enc.ids, &enc.attention_mask, params, config)?;
    Ok(labels_from_logits(&logits, threshold))
}

/// Binarized predictions for every example, as label-matrix cells.
pub fn predict_matrix(
    params: &ModelParams,
    config: &ModelConfig,
    examples: &[Example],
    row_ids: Vec<String>,
    threshold: f64,
) -> Result<LabelMatrix, TrainError> {
    let mut m = LabelMatrix::new(row_ids, config.num_labels);
    for (r, ex) in examples.iter().enumerate() {
        let logits = encoder_forward(&ex.ids, &ex.mask, params, config)?;
        for (label, _) in labels_from_logits(&logits, threshold) {
            m.set(r, label).map_err(|e| TrainError::InvalidInput(format!("{e}")))?;
        }
    }
    Ok(m)
}
