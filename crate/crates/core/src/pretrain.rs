//! Phase 1: regress the HYDRA query/key logits onto dependency relation
//! matrices while the body stays frozen.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{HydraError, Result};
use crate::ingest::{align_sdoi_to_tokens, build_sdoi_with, ParsedSentence, SdoiRule, Vocabulary};
use crate::model::{HydraHeads, ModelConfig, QkVars, TokenBatch, TransformerBody};
use crate::optim::{clip_grad_norm, AdamConfig, AdamState};
use crate::tensor::Tensor;
use crate::util::{fnv1a, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Token positions including CLS; longer sentences are dropped.
    pub max_len: usize,
    pub grad_clip: f64,
    pub val_fraction: f64,
    pub sdoi_rule: SdoiRule,
    /// Apply a row softmax to the logits before the loss (ablation).
    pub softmax_logits: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 2,
            batch_size: 8,
            lr: 3e-3,
            seed: 0,
            max_len: 64,
            grad_clip: 1.0,
            val_fraction: 0.1,
            sdoi_rule: SdoiRule::Adjacency,
            softmax_logits: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(HydraError::Config("pretrain epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(HydraError::Config("pretrain batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(HydraError::Config("pretrain lr must be positive".into()));
        }
        if self.max_len < 2 {
            return Err(HydraError::Config("pretrain max_len must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(HydraError::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Validation loss of the untrained heads (epoch 0).
    pub initial_val_loss: Option<f64>,
    /// Mean target density over the training split.
    pub initial_loss_estimate: f64,
    pub epochs: Vec<EpochLog>,
    pub sentences_used: usize,
    pub sentences_dropped: usize,
    pub train_sentences: usize,
    pub val_sentences: usize,
    pub seconds: f64,
}

impl PretrainReport {
    /// One JSON object per epoch: `epoch`, `train_loss`, `val_loss`, `seconds`.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("epoch log serializes") + "\n")
            .collect()
    }
}

/// One sentence ready for the head loss: cached `H_l`, aligned target and mask.
#[derive(Clone, Debug)]
pub struct PreparedSentence {
    pub hidden: Tensor,
    pub target: Tensor,
    pub mask: Tensor,
}

impl PreparedSentence {
    pub fn new(body: &TransformerBody, vocab: &Vocabulary, sentence: &ParsedSentence, rule: SdoiRule) -> Result<Self> {
        let ids = vocab.encode_words(&sentence.tokens);
        let seq = ids.len();
        let (target, mask) = align_sdoi_to_tokens(&build_sdoi_with(sentence, rule), seq)?;
        let hidden = body.forward(&TokenBatch::from_sequences(&[ids])?)?;
        Ok(PreparedSentence {
            hidden,
            target: target.reshape(vec![1, seq, seq])?,
            mask: mask.reshape(vec![1, seq, seq])?,
        })
    }
}

/// Mean over heads of the masked MSE between `M^h` and the target.
pub fn pretraining_loss(
    tape: &mut Tape,
    config: &ModelConfig,
    qk: QkVars,
    hidden: Var,
    target: &Tensor,
    mask: &Tensor,
    softmax_logits: bool,
) -> Result<Var> {
    let logits = qk.all_logits(tape, config, hidden)?;
    let mut per_head = Vec::with_capacity(logits.len());
    for m in logits {
        let m = if softmax_logits { tape.softmax_rows(m) } else { m };
        per_head.push(tape.masked_mse(m, target, mask)?);
    }
    tape.mean(&per_head)
}

fn sentence_loss(tape: &mut Tape, heads: &HydraHeads, qk: QkVars, s: &PreparedSentence, softmax: bool) -> Result<Var> {
    let h = tape.constant(s.hidden.clone());
    pretraining_loss(tape, &heads.config, qk, h, &s.target, &s.mask, softmax)
}

/// Mean per-sentence loss without updates.
pub fn evaluate_heads(heads: &HydraHeads, sentences: &[PreparedSentence], softmax: bool) -> Result<f64> {
    if sentences.is_empty() {
        return Err(HydraError::EmptyLoss);
    }
    let mut total = 0.0;
    for s in sentences {
        let mut tape = Tape::inference();
        let qk = heads.bind(&mut tape);
        let loss = sentence_loss(&mut tape, heads, qk, s, softmax)?;
        total += tape.value(loss).item();
    }
    Ok(total / sentences.len() as f64)
}

/// Mean density of 1s in the relation matrices, which is the loss of heads
/// whose logits are all zero.
pub fn initial_loss_estimate(sentences: &[ParsedSentence], rule: SdoiRule) -> Result<f64> {
    if sentences.is_empty() {
        return Err(HydraError::Config(
            "initial loss estimate needs at least one sentence".into(),
        ));
    }
    let total: f64 = sentences.iter().map(|s| build_sdoi_with(s, rule).density()).sum();
    Ok(total / sentences.len() as f64)
}

/// Deterministic validation membership from the sentence text.
pub fn is_validation(sentence: &ParsedSentence, fraction: f64) -> bool {
    (fnv1a(sentence.text().as_bytes()) % 10_000) < (fraction * 10_000.0).round() as u64
}

/// Trains fresh HYDRA query/key projections against `body`, which is only
/// read. Sentences whose CLS-prefixed length exceeds `max_len` are dropped.
pub fn pretrain_heads(
    body: &TransformerBody,
    vocab: &Vocabulary,
    corpus: &[ParsedSentence],
    cfg: &PretrainConfig,
) -> Result<(HydraHeads, PretrainReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let max_len = cfg.max_len.min(body.config.max_len);
    let kept: Vec<&ParsedSentence> = corpus.iter().filter(|s| s.len() < max_len).collect();
    let dropped = corpus.len() - kept.len();
    if kept.is_empty() {
        return Err(HydraError::Config(format!(
            "no sentence fits within max_len {max_len} ({} dropped)",
            dropped
        )));
    }
    let (mut train_raw, mut val_raw): (Vec<&ParsedSentence>, Vec<&ParsedSentence>) =
        kept.iter().partition(|s| !is_validation(s, cfg.val_fraction));
    if train_raw.is_empty() {
        train_raw = std::mem::take(&mut val_raw);
    }

    let prepare = |set: &[&ParsedSentence]| -> Result<Vec<PreparedSentence>> {
        set.iter()
            .map(|s| PreparedSentence::new(body, vocab, s, cfg.sdoi_rule))
            .collect()
    };
    let train = prepare(&train_raw)?;
    let val = prepare(&val_raw)?;
    let estimate = initial_loss_estimate(
        &train_raw.iter().map(|s| (*s).clone()).collect::<Vec<_>>(),
        cfg.sdoi_rule,
    )?;

    let mut heads = HydraHeads::init(body.config.clone(), cfg.seed)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let val_loss = |heads: &HydraHeads| -> Result<Option<f64>> {
        if val.is_empty() {
            Ok(None)
        } else {
            evaluate_heads(heads, &val, cfg.softmax_logits).map(Some)
        }
    };
    let initial_val_loss = val_loss(&heads)?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut rng_for(cfg.seed, &format!("pretrain.shuffle.{epoch}")));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let qk = heads.bind(&mut tape);
            let losses = chunk
                .iter()
                .map(|&i| sentence_loss(&mut tape, &heads, qk, &train[i], cfg.softmax_logits))
                .collect::<Result<Vec<_>>>()?;
            loss_sum += losses.iter().map(|&l| tape.value(l).item()).sum::<f64>();
            let loss = tape.mean(&losses)?;
            tape.backward(loss)?.accumulate_into(&mut heads.params)?;
            clip_grad_norm(&mut heads.params, cfg.grad_clip);
            adam.step(&mut heads.params);
        }
        epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: val_loss(&heads)?,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
    }

    let report = PretrainReport {
        initial_val_loss,
        initial_loss_estimate: estimate,
        epochs,
        sentences_used: kept.len(),
        sentences_dropped: dropped,
        train_sentences: train.len(),
        val_sentences: val.len(),
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok((heads, report))
}

/// Writes the heads-only checkpoint.
pub fn export_heads(heads: &HydraHeads, path: impl AsRef<Path>) -> Result<()> {
    heads.to_checkpoint().save(path)
}
