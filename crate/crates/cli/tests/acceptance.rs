//! End-to-end acceptance checks. Each prints one PASS/FAIL line; the process
//! exits nonzero when any check fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hydra::autodiff::{Tape, Var};
use hydra::finetune::{compare_baseline, finetune, train_step, FinetuneConfig};
use hydra::gradcheck::{grad_check, TapeFn};
use hydra::ingest::{align_sdoi_to_tokens, build_sdoi, split_words, tokenize, Label, ParsedSentence, Vocabulary};
use hydra::model::{
    load_checkpoint, CheckpointKind, Encoder, HydraHeads, ModelConfig, QkVars, TaskInfo, TransformerBody,
};
use hydra::optim::{AdamConfig, AdamState};
use hydra::pretrain::{pretrain_heads, pretraining_loss, PretrainConfig};
use hydra::synth;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn gradient_integrity() -> Outcome {
    let started = Instant::now();
    let config = common::tiny_config(10);
    let mut r = common::rng(11);
    let hidden = common::uniform(&mut r, &[1, 4, 8]);
    let parse = common::random_parse(&mut r, 3);
    let (target, mask) = align_sdoi_to_tokens(&build_sdoi(&parse), 4).map_err(|e| e.to_string())?;
    let target = target.reshape(vec![1, 4, 4]).unwrap();
    let mask = mask.reshape(vec![1, 4, 4]).unwrap();
    let mut heads = HydraHeads::init(config.clone(), 3).unwrap();
    common::randomize_heads(&mut heads, 4);
    let value = |name: &str| heads.params.by_name(name).unwrap().value.clone();

    let mut worst: f64 = 0.0;
    for name in ["hydra.attn.wq.weight", "hydra.attn.wk.weight"] {
        let f = |t: &mut Tape, x: Var| {
            let mut bind = |n: &str| if n == name { x } else { t.constant(value(n)) };
            let qk = QkVars {
                wq_weight: bind("hydra.attn.wq.weight"),
                wq_bias: bind("hydra.attn.wq.bias"),
                wk_weight: bind("hydra.attn.wk.weight"),
                wk_bias: bind("hydra.attn.wk.bias"),
            };
            let h = t.constant(hidden.clone());
            pretraining_loss(t, &config, qk, h, &target, &mask, false)
        };
        let report = grad_check(&TapeFn(f), &value(name), 1e-5).map_err(|e| e.to_string())?;
        ensure(report.passed, || format!("{name}: {report:?}"))?;
        worst = worst.max(report.max_relative_error);
    }
    within(Duration::from_secs(10), started)?;
    Ok(format!("max relative error {worst:.2e} over W_q and W_k"))
}

fn agreement_setup() -> (Vec<ParsedSentence>, Vocabulary, TransformerBody) {
    let corpus = synth::treebank(600, 0);
    let (train, _) = synth::agreement_task(200, 100, 0);
    let words = corpus
        .iter()
        .flat_map(|s| s.tokens.clone())
        .chain(train.examples.iter().flat_map(|e| split_words(&e.text)));
    let vocab = Vocabulary::build(words, 2);
    let config = ModelConfig {
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    (corpus, vocab, TransformerBody::init(config, 0).unwrap())
}

fn frozen_body_contract() -> Outcome {
    let (corpus, vocab, body) = agreement_setup();
    let before = body.params.clone();
    let cfg = PretrainConfig {
        epochs: 1,
        batch_size: 8,
        ..PretrainConfig::default()
    };
    let (heads, report) = pretrain_heads(&body, &vocab, &corpus, &cfg).map_err(|e| e.to_string())?;
    let steps = report.train_sentences.div_ceil(cfg.batch_size);
    ensure(steps >= 50, || format!("only {steps} pretraining steps"))?;
    let moved = before.differing_names(&body.params);
    ensure(moved.is_empty(), || format!("body changed: {moved:?}"))?;

    let (train, _) = synth::agreement_task(16, 0, 0);
    let mut model = Encoder::attach(&body, &heads, TaskInfo::classification(train.label_names.clone()), 0)
        .map_err(|e| e.to_string())?;
    let start = model.params.clone();
    let seqs: Vec<Vec<usize>> = train.examples.iter().map(|e| tokenize(&e.text, &vocab, 64)).collect();
    let labels: Vec<Label> = train.examples.iter().map(|e| e.label).collect();
    let mut adam = AdamState::new(AdamConfig::default());
    train_step(&mut model, &mut adam, &seqs, &labels, 1.0).map_err(|e| e.to_string())?;
    let changed = start.differing_names(&model.params);
    let prefixes = model.layer_prefixes();
    let stale: Vec<&String> = prefixes
        .iter()
        .filter(|p| !changed.iter().any(|n| n.starts_with(&format!("{p}."))))
        .collect();
    ensure(stale.is_empty(), || {
        format!("layers unchanged after one step: {stale:?}")
    })?;
    Ok(format!(
        "{steps} pretraining steps left {} body tensors bitwise equal; all {} layers moved after one step",
        before.len(),
        prefixes.len()
    ))
}

fn sdoi_oracle() -> Outcome {
    let mut r = common::rng(3);
    for case in 0..20 {
        let n = 1 + case % 6;
        let parse = common::random_parse(&mut r, n);
        let got = build_sdoi(&parse).rows();
        ensure(got == common::sdoi_oracle(&parse.heads), || {
            format!("heads {:?}: {got:?}", parse.heads)
        })?;
    }
    Ok("20 random trees with n <= 6 match exactly".into())
}

fn attention_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut r = common::rng(seed);
        let n_heads = 2;
        let d_k = 1 + (seed as usize % 4);
        let config = ModelConfig {
            vocab_size: 5,
            d_model: n_heads * d_k,
            n_heads,
            n_body_layers: 1,
            d_ff: 4,
            max_len: 8,
        };
        let mut heads = HydraHeads::init(config.clone(), seed).unwrap();
        common::randomize_heads(&mut heads, seed + 100);
        let s = 1 + (seed as usize % 5);
        let h_l = common::uniform(&mut r, &[2, s, config.d_model]);
        for head in 0..n_heads {
            let got = hydra::model::hydra_logits(&heads, &h_l, head).map_err(|e| e.to_string())?;
            let want: Vec<f64> = common::hydra_logits_oracle(&heads, &h_l, head)
                .into_iter()
                .flatten()
                .flatten()
                .collect();
            for (g, w) in got.data().iter().zip(&want) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("10 seeds, s <= 5, d_k <= 4, max deviation {worst:.1e}"))
}

fn pretraining_convergence() -> Outcome {
    let started = Instant::now();
    let (corpus, vocab, body) = agreement_setup();
    let cfg = PretrainConfig {
        epochs: 2,
        ..PretrainConfig::default()
    };
    let (_, report) = pretrain_heads(&body, &vocab, &corpus, &cfg).map_err(|e| e.to_string())?;
    let val = report.epochs[1].val_loss.ok_or("no validation split")?;
    let bound = report.initial_loss_estimate;
    ensure(report.sentences_used >= 500, || {
        format!("only {} sentences", report.sentences_used)
    })?;
    ensure(val <= 0.5 * bound, || {
        format!("validation loss {val:.4} vs estimate {bound:.4}")
    })?;
    within(Duration::from_secs(600), started)?;
    Ok(format!(
        "{} sentences, epoch-2 validation loss {val:.4} is {:.0}% below the estimate {bound:.4} ({:.1} s)",
        report.sentences_used,
        100.0 * (1.0 - val / bound),
        started.elapsed().as_secs_f64()
    ))
}

fn shortcut_dataset() -> Outcome {
    let started = Instant::now();
    let data = synth::shortcut_sentiment();
    let vocab = Vocabulary::build(data.examples.iter().flat_map(|e| split_words(&e.text)), 1);
    let config = ModelConfig {
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let body = TransformerBody::init(config.clone(), 0).unwrap();
    let heads = HydraHeads::init(config, 1).unwrap();
    let task = TaskInfo::classification(data.label_names.clone());
    let cfg = FinetuneConfig {
        epochs: 200,
        ..FinetuneConfig::default()
    };
    let mut reached = Vec::new();
    for hydra in [false, true] {
        let model = if hydra {
            Encoder::attach(&body, &heads, task.clone(), 0)
        } else {
            Encoder::baseline(&body, task.clone(), 0)
        }
        .map_err(|e| e.to_string())?;
        let (_, report) = finetune(model, &vocab, &data.examples, &[], &cfg).map_err(|e| e.to_string())?;
        let first = report.history.iter().find(|e| e.train_metric == 1.0).map(|e| e.epoch);
        let name = if hydra { "hydra" } else { "baseline" };
        reached.push(format!("{name} at epoch {}", first.ok_or(format!("{name} never fit"))?));
    }
    within(Duration::from_secs(60), started)?;
    Ok(format!(
        "{} examples fit: {} ({:.1} s)",
        data.examples.len(),
        reached.join(", "),
        started.elapsed().as_secs_f64()
    ))
}

fn lightweight_checkpoint() -> Outcome {
    let config = ModelConfig::default();
    let body = TransformerBody::init(config.clone(), 0).unwrap();
    let heads = HydraHeads::init(config.clone(), 0).unwrap();
    let model = Encoder::attach(&body, &heads, TaskInfo::classes(2), 0).unwrap();
    let heads_bytes = heads.to_checkpoint().to_bytes().len() as f64;
    let model_bytes = model.to_checkpoint().to_bytes().len() as f64;
    let d = config.d_model;
    let predicted = (4 * (2 * d * d + 2 * d)) as f64;
    let off = (heads_bytes - predicted).abs() / predicted;
    let ratio = heads_bytes / model_bytes;
    ensure(off <= 0.05, || format!("{heads_bytes} bytes vs predicted {predicted}"))?;
    ensure(ratio < 0.10, || format!("heads are {:.1}% of the model", 100.0 * ratio))?;
    Ok(format!(
        "heads {heads_bytes} B ({:.2}% over {predicted} B), {:.1}% of the {model_bytes} B model",
        100.0 * off,
        100.0 * ratio
    ))
}

fn controlled_ablation() -> Outcome {
    let (corpus, vocab, body) = agreement_setup();
    let cfg = PretrainConfig {
        epochs: 1,
        ..PretrainConfig::default()
    };
    let (heads, _) = pretrain_heads(&body, &vocab, &corpus, &cfg).map_err(|e| e.to_string())?;
    let (train, dev) = synth::agreement_task(60, 40, 0);
    let task = TaskInfo::classification(train.label_names.clone());
    let ft = FinetuneConfig {
        epochs: 2,
        ..FinetuneConfig::default()
    };
    let table = compare_baseline(
        &body,
        &heads,
        &vocab,
        &train.examples,
        &dev.examples,
        &task,
        &[0, 1, 2],
        &ft,
    )
    .map_err(|e| e.to_string())?;
    let leaks: Vec<_> = table.ablation.iter().filter(|a| !a.controlled).collect();
    ensure(leaks.is_empty(), || format!("uncontrolled seeds: {leaks:?}"))?;
    ensure(table.rows.len() == 9, || format!("{} rows", table.rows.len()))?;
    let means: Vec<String> = table
        .means
        .iter()
        .map(|m| format!("{} {:.3}", m.variant.name(), m.dev_metric))
        .collect();
    Ok(format!(
        "3 seeds, only W_q/W_k differ; mean dev accuracy {}",
        means.join(", ")
    ))
}

fn hydra_bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hydra"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("hydra {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

/// Runs every command once into `dir` and returns the produced files.
fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let quick = ["--set", "pretrain.epochs=1", "--set", "finetune.epochs=1"];
    let with = |args: &[&str]| -> Vec<String> { args.iter().chain(quick.iter()).map(|s| s.to_string()).collect() };
    let run = |args: Vec<String>| hydra_bin(&args.iter().map(String::as_str).collect::<Vec<_>>());
    hydra_bin(&["synth-data", "--out", &p("data"), "--sentences", "500"])?;
    let (tb, tr, dv) = (
        p("data/treebank.conllu"),
        p("data/agreement_train.tsv"),
        p("data/agreement_dev.tsv"),
    );
    run(with(&[
        "init-body",
        "--corpus",
        &tb,
        "--task",
        &tr,
        "--out",
        &p("body.ckpt"),
    ]))?;
    run(with(&[
        "pretrain-heads",
        "--body",
        &p("body.ckpt"),
        "--corpus",
        &tb,
        "--out",
        &p("heads.ckpt"),
    ]))?;
    run(with(&[
        "finetune",
        "--body",
        &p("body.ckpt"),
        "--heads",
        &p("heads.ckpt"),
        "--train",
        &tr,
        "--dev",
        &dv,
        "--out",
        &p("model.ckpt"),
    ]))?;
    run(with(&[
        "evaluate",
        "--model",
        &p("model.ckpt"),
        "--data",
        &dv,
        "--out",
        &p("eval.json"),
    ]))?;
    hydra_bin(&[
        "inspect",
        "--model",
        &p("heads.ckpt"),
        "--body",
        &p("body.ckpt"),
        "--conllu",
        &tb,
        "--out",
        &p("inspect"),
    ])?;
    run(with(&[
        "compare",
        "--body",
        &p("body.ckpt"),
        "--heads",
        &p("heads.ckpt"),
        "--train",
        &tr,
        "--dev",
        &dv,
        "--out",
        &p("compare"),
    ]))?;
    let mut files = BTreeMap::new();
    collect(dir, dir, &mut files)?;
    Ok(files)
}

fn collect(root: &Path, dir: &Path, files: &mut BTreeMap<String, Vec<u8>>) -> Result<(), String> {
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.is_dir() {
            collect(root, &path, files)?;
        } else {
            let key = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            files.insert(key, fs::read(&path).map_err(|e| e.to_string())?);
        }
    }
    Ok(())
}

fn determinism_and_persistence() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    ensure(first.keys().eq(second.keys()), || "different file sets".into())?;
    // per-epoch wall-clock seconds in the pretraining log legitimately vary
    let compared: Vec<&String> = first.keys().filter(|k| !k.ends_with(".log.jsonl")).collect();
    let differing: Vec<&&String> = compared.iter().filter(|k| first[**k] != second[**k]).collect();
    ensure(differing.is_empty(), || format!("re-run changed {differing:?}"))?;

    let mut round_trips = 0;
    for (name, bytes) in &first {
        if !name.ends_with(".ckpt") {
            continue;
        }
        let ckpt = load_checkpoint(a.path().join(name)).map_err(|e| e.to_string())?;
        let again = match ckpt.kind {
            CheckpointKind::Body => TransformerBody::from_checkpoint(&ckpt).map(|m| m.to_checkpoint()),
            CheckpointKind::Heads => HydraHeads::from_checkpoint(&ckpt).map(|m| m.to_checkpoint()),
            CheckpointKind::Model => Encoder::from_checkpoint(&ckpt).map(|m| m.to_checkpoint()),
        }
        .map_err(|e| e.to_string())?;
        let out = b.path().join(format!("{name}.resaved"));
        again.save(&out).map_err(|e| e.to_string())?;
        ensure(&fs::read(&out).unwrap() == bytes, || {
            format!("{name} changed on save/load/save")
        })?;
        round_trips += 1;
    }
    ensure(round_trips == 3, || {
        format!("expected 3 checkpoints, found {round_trips}")
    })?;
    Ok(format!(
        "{} files identical across two runs of every command; {round_trips} checkpoints survive save/load/save",
        compared.len()
    ))
}

fn main() {
    type Check = (&'static str, fn() -> Outcome);
    let checks: [Check; 9] = [
        ("gradient integrity", gradient_integrity),
        ("frozen-body contract", frozen_body_contract),
        ("relation-matrix oracle", sdoi_oracle),
        ("attention-logit oracle", attention_oracle),
        ("pretraining convergence", pretraining_convergence),
        ("shortcut dataset fits", shortcut_dataset),
        ("lightweight checkpoint", lightweight_checkpoint),
        ("controlled ablation", controlled_ablation),
        ("determinism and persistence", determinism_and_persistence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
