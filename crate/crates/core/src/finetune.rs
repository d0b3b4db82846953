//! Phase 2: attach the HYDRA layer (or not), unfreeze everything and train on
//! a labeled sequence task. Also evaluation metrics and the three-variant
//! comparison used to separate the effect of the pretrained heads from the
//! effect of simply having one more layer.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{HydraError, Result};
use crate::ingest::{tokenize, Label, LabeledExample, TaskKind, Vocabulary};
use crate::model::layers::qk_names;
use crate::model::{Encoder, HydraHeads, TaskInfo, TokenBatch, TransformerBody, HYDRA_PREFIX};
use crate::optim::{clip_grad_norm, AdamConfig, AdamState};
use crate::tensor::Tensor;
use crate::util::{rng_for, sha256_hex};

/// Batch size used for inference-only passes.
const EVAL_BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Accuracy,
    Pearson,
}

impl Metric {
    pub fn for_task(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Classification => Metric::Accuracy,
            TaskKind::Regression => Metric::Pearson,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Pearson => "pearson",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Token positions including CLS; longer inputs are truncated.
    pub max_len: usize,
    pub grad_clip: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 20,
            batch_size: 8,
            lr: 3e-4,
            seed: 0,
            max_len: 64,
            grad_clip: 1.0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(HydraError::Config("finetune epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(HydraError::Config("finetune batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(HydraError::Config("finetune lr must be positive".into()));
        }
        if self.max_len < 2 {
            return Err(HydraError::Config("finetune max_len must be at least 2".into()));
        }
        Ok(())
    }
}

/// Fraction of positions where `predicted == gold`.
pub fn accuracy(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(HydraError::Evaluation(format!(
            "{} predictions for {} labels",
            predicted.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(HydraError::Evaluation("no examples to score".into()));
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Sample Pearson correlation. A constant series has no defined correlation;
/// it scores 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(HydraError::Evaluation(format!(
            "{} predictions for {} labels",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(HydraError::Evaluation("no examples to score".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub gold: Label,
    pub predicted: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub metric: Metric,
    pub value: f64,
    pub examples: usize,
    pub predictions: Vec<Prediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_metric: f64,
    pub dev_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub layers: usize,
    pub hydra: bool,
    pub splits: Vec<SplitReport>,
    /// Per-epoch metrics; empty for a standalone evaluation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<EpochMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    /// SHA-256 of the settings that produced this report.
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn split(&self, name: &str) -> Option<&SplitReport> {
        self.splits.iter().find(|s| s.split == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Hex SHA-256 of a value's JSON form.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("fingerprinted value serializes"))
}

fn check_labels(task: &TaskInfo, examples: &[LabeledExample]) -> Result<()> {
    for (i, e) in examples.iter().enumerate() {
        let ok = match (task.kind, e.label) {
            (TaskKind::Classification, Label::Class(c)) => c < task.num_outputs,
            (TaskKind::Regression, Label::Value(v)) => v.is_finite(),
            _ => false,
        };
        if !ok {
            return Err(HydraError::Config(format!(
                "example {} has label {:?}, which does not fit a {:?} task with {} outputs",
                i + 1,
                e.label,
                task.kind,
                task.num_outputs
            )));
        }
    }
    Ok(())
}

fn encode(vocab: &Vocabulary, examples: &[LabeledExample], max_len: usize) -> Vec<Vec<usize>> {
    examples.iter().map(|e| tokenize(&e.text, vocab, max_len)).collect()
}

fn predict_labels(model: &Encoder, seqs: &[Vec<usize>]) -> Result<Vec<Label>> {
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EVAL_BATCH) {
        let logits = model.predict(&TokenBatch::from_sequences(chunk)?)?;
        for row in logits.data().chunks(logits.last_dim()) {
            out.push(match model.task.kind {
                TaskKind::Classification => Label::Class(argmax(row)),
                TaskKind::Regression => Label::Value(row[0]),
            });
        }
    }
    Ok(out)
}

fn score(kind: TaskKind, predicted: &[Label], gold: &[Label]) -> Result<f64> {
    match kind {
        TaskKind::Classification => {
            let class = |l: &Label| match *l {
                Label::Class(c) => c,
                Label::Value(_) => usize::MAX,
            };
            accuracy(
                &predicted.iter().map(class).collect::<Vec<_>>(),
                &gold.iter().map(class).collect::<Vec<_>>(),
            )
        }
        TaskKind::Regression => {
            let value = |l: &Label| match *l {
                Label::Value(v) => v,
                Label::Class(c) => c as f64,
            };
            pearson(
                &predicted.iter().map(value).collect::<Vec<_>>(),
                &gold.iter().map(value).collect::<Vec<_>>(),
            )
        }
    }
}

fn split_report(model: &Encoder, split: &str, seqs: &[Vec<usize>], examples: &[LabeledExample]) -> Result<SplitReport> {
    if examples.is_empty() {
        return Err(HydraError::Evaluation(format!("{split} split is empty")));
    }
    let predicted = predict_labels(model, seqs)?;
    let gold: Vec<Label> = examples.iter().map(|e| e.label).collect();
    Ok(SplitReport {
        split: split.to_string(),
        metric: Metric::for_task(model.task.kind),
        value: score(model.task.kind, &predicted, &gold)?,
        examples: examples.len(),
        predictions: gold
            .into_iter()
            .zip(predicted)
            .map(|(gold, predicted)| Prediction { gold, predicted })
            .collect(),
    })
}

#[derive(Serialize)]
struct EvalSettings<'a> {
    model: &'a crate::model::ModelConfig,
    task: &'a TaskInfo,
    hydra: bool,
    max_len: usize,
}

/// Scores `model` on one split. Inputs longer than `max_len` are truncated.
pub fn evaluate(
    model: &Encoder,
    vocab: &Vocabulary,
    examples: &[LabeledExample],
    split: &str,
    max_len: usize,
) -> Result<EvalReport> {
    check_labels(&model.task, examples)?;
    let max_len = max_len.min(model.config.max_len);
    let seqs = encode(vocab, examples, max_len);
    Ok(EvalReport {
        layers: model.layer_count(),
        hydra: model.has_hydra(),
        splits: vec![split_report(model, split, &seqs, examples)?],
        history: Vec::new(),
        best_epoch: None,
        config_fingerprint: fingerprint(&EvalSettings {
            model: &model.config,
            task: &model.task,
            hydra: model.has_hydra(),
            max_len,
        }),
    })
}

/// One optimizer step on a batch; returns the batch loss before the update.
pub fn train_step(
    model: &mut Encoder,
    adam: &mut AdamState,
    seqs: &[Vec<usize>],
    labels: &[Label],
    grad_clip: f64,
) -> Result<f64> {
    let batch = TokenBatch::from_sequences(seqs)?;
    let mut tape = Tape::new();
    let (_, logits) = model.forward_var(&mut tape, &batch)?;
    let loss = match model.task.kind {
        TaskKind::Classification => {
            let classes = labels
                .iter()
                .map(|l| match *l {
                    Label::Class(c) => Ok(c),
                    Label::Value(_) => Err(HydraError::Config("real label in a classification task".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            tape.cross_entropy(logits, &classes)?
        }
        TaskKind::Regression => {
            let values = labels
                .iter()
                .map(|l| match *l {
                    Label::Value(v) => Ok(v),
                    Label::Class(_) => Err(HydraError::Config("class label in a regression task".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            let n = values.len();
            let target = Tensor::new(vec![n, 1], values)?;
            tape.masked_mse(logits, &target, &Tensor::full(&[n, 1], 1.0))?
        }
    };
    let value = tape.value(loss).item();
    tape.backward(loss)?.accumulate_into(&mut model.params)?;
    clip_grad_norm(&mut model.params, grad_clip);
    adam.step(&mut model.params);
    Ok(value)
}

#[derive(Serialize)]
struct FinetuneSettings<'a> {
    model: &'a crate::model::ModelConfig,
    task: &'a TaskInfo,
    hydra: bool,
    finetune: &'a FinetuneConfig,
}

/// Trains every parameter of `model` and returns the epoch with the best dev
/// metric (the earlier epoch on ties). With an empty `dev`, selection uses
/// the training split.
pub fn finetune(
    mut model: Encoder,
    vocab: &Vocabulary,
    train: &[LabeledExample],
    dev: &[LabeledExample],
    cfg: &FinetuneConfig,
) -> Result<(Encoder, EvalReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(HydraError::Config("training set is empty".into()));
    }
    check_labels(&model.task, train)?;
    check_labels(&model.task, dev)?;
    let max_len = cfg.max_len.min(model.config.max_len);
    let train_seqs = encode(vocab, train, max_len);
    let dev_seqs = encode(vocab, dev, max_len);
    let (sel_seqs, sel_examples) = if dev.is_empty() {
        (&train_seqs, train)
    } else {
        (&dev_seqs, dev)
    };

    model.params.set_trainable(true);
    model.params.zero_grad();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Encoder)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_for(cfg.seed, &format!("finetune.shuffle.{epoch}")));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<Vec<usize>> = chunk.iter().map(|&i| train_seqs[i].clone()).collect();
            let labels: Vec<Label> = chunk.iter().map(|&i| train[i].label).collect();
            loss_sum += train_step(&mut model, &mut adam, &seqs, &labels, cfg.grad_clip)? * chunk.len() as f64;
        }
        let train_metric = split_report(&model, "train", &train_seqs, train)?.value;
        let dev_metric = if dev.is_empty() {
            train_metric
        } else {
            split_report(&model, "dev", sel_seqs, sel_examples)?.value
        };
        history.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_metric,
            dev_metric,
        });
        if best.as_ref().is_none_or(|(_, m, _)| dev_metric > *m) {
            best = Some((epoch, dev_metric, model.clone()));
        }
    }

    let (best_epoch, _, best_model) = best.expect("at least one epoch ran");
    let mut splits = vec![split_report(&best_model, "train", &train_seqs, train)?];
    if !dev.is_empty() {
        splits.push(split_report(&best_model, "dev", &dev_seqs, dev)?);
    }
    let report = EvalReport {
        layers: best_model.layer_count(),
        hydra: best_model.has_hydra(),
        splits,
        history,
        best_epoch: Some(best_epoch),
        config_fingerprint: fingerprint(&FinetuneSettings {
            model: &best_model.config,
            task: &best_model.task,
            hydra: best_model.has_hydra(),
            finetune: cfg,
        }),
    };
    Ok((best_model, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// The body alone.
    Baseline,
    /// Body plus an appended layer whose query/key start random.
    FreshLayer,
    /// Body plus an appended layer whose query/key come from pretraining.
    PretrainedHydra,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::FreshLayer, Variant::PretrainedHydra];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::FreshLayer => "fresh-layer",
            Variant::PretrainedHydra => "pretrained-hydra",
        }
    }
}

/// The three untrained models compared for one seed. Everything except the
/// appended layer's query/key is drawn from the same `seed`.
pub fn comparison_variants(
    body: &TransformerBody,
    heads: &HydraHeads,
    task: &TaskInfo,
    seed: u64,
) -> Result<[Encoder; 3]> {
    let fresh = HydraHeads::init(body.config.clone(), seed)?;
    Ok([
        Encoder::baseline(body, task.clone(), seed)?,
        Encoder::attach(body, &fresh, task.clone(), seed)?,
        Encoder::attach(body, heads, task.clone(), seed)?,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: Variant,
    pub seed: u64,
    pub layers: usize,
    pub train_metric: f64,
    pub dev_metric: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantMean {
    pub variant: Variant,
    pub layers: usize,
    pub train_metric: f64,
    pub dev_metric: f64,
}

/// Parameters whose initial values differ between the fresh-layer and
/// pretrained-HYDRA models of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCheck {
    pub seed: u64,
    pub differing: Vec<String>,
    /// True when only the appended layer's query/key differ.
    pub controlled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: Metric,
    pub rows: Vec<ComparisonRow>,
    pub means: Vec<VariantMean>,
    pub ablation: Vec<AblationCheck>,
}

impl Comparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    pub fn to_text(&self) -> String {
        let m = self.metric.name();
        let mut out = format!(
            "{:<18} {:>6} {:>6} {:>16} {:>16} {:>10}\n",
            "variant",
            "seed",
            "layers",
            format!("train_{m}"),
            format!("dev_{m}"),
            "best_epoch"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<18} {:>6} {:>6} {:>16.4} {:>16.4} {:>10}",
                r.variant.name(),
                r.seed,
                r.layers,
                r.train_metric,
                r.dev_metric,
                r.best_epoch
            );
        }
        for mean in &self.means {
            let _ = writeln!(
                out,
                "{:<18} {:>6} {:>6} {:>16.4} {:>16.4} {:>10}",
                mean.variant.name(),
                "mean",
                mean.layers,
                mean.train_metric,
                mean.dev_metric,
                "-"
            );
        }
        out
    }
}

/// Fine-tunes the three variants for every seed on the same data.
#[allow(clippy::too_many_arguments)]
pub fn compare_baseline(
    body: &TransformerBody,
    heads: &HydraHeads,
    vocab: &Vocabulary,
    train: &[LabeledExample],
    dev: &[LabeledExample],
    task: &TaskInfo,
    seeds: &[u64],
    cfg: &FinetuneConfig,
) -> Result<Comparison> {
    if seeds.len() < 3 {
        return Err(HydraError::Config(format!(
            "comparison needs at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    let qk = qk_names(HYDRA_PREFIX);
    let mut rows = Vec::with_capacity(3 * seeds.len());
    let mut ablation = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let models = comparison_variants(body, heads, task, seed)?;
        let differing = models[1].params.differing_names(&models[2].params);
        ablation.push(AblationCheck {
            seed,
            controlled: differing.iter().all(|n| qk.contains(n)),
            differing,
        });
        let run_cfg = FinetuneConfig { seed, ..cfg.clone() };
        for (variant, model) in Variant::ALL.into_iter().zip(models) {
            let (trained, report) = finetune(model, vocab, train, dev, &run_cfg)?;
            let train_metric = report.split("train").map_or(f64::NAN, |s| s.value);
            let dev_metric = report.split("dev").map_or(train_metric, |s| s.value);
            rows.push(ComparisonRow {
                variant,
                seed,
                layers: trained.layer_count(),
                train_metric,
                dev_metric,
                best_epoch: report.best_epoch.unwrap_or(0),
            });
        }
    }
    let means = Variant::ALL
        .into_iter()
        .map(|variant| {
            let of: Vec<&ComparisonRow> = rows.iter().filter(|r| r.variant == variant).collect();
            let n = of.len() as f64;
            VariantMean {
                variant,
                layers: of[0].layers,
                train_metric: of.iter().map(|r| r.train_metric).sum::<f64>() / n,
                dev_metric: of.iter().map(|r| r.dev_metric).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(Comparison {
        metric: Metric::for_task(task.kind),
        rows,
        means,
        ablation,
    })
}
