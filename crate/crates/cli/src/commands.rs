use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use hydra::finetune::{compare_baseline, evaluate, finetune, Comparison, EvalReport};
use hydra::ingest::{
    align_sdoi_to_tokens, build_sdoi_with, load_labeled_tsv, load_labeled_tsv_with_labels, parse_conllu, split_words,
    write_labeled_tsv, write_minimal_conllu, LabeledData, ParsedSentence, TaskKind, Vocabulary,
};
use hydra::model::{Checkpoint, CheckpointKind, Encoder, HydraHeads, TaskInfo, TokenBatch, TransformerBody};
use hydra::pretrain::{pretrain_heads, PretrainReport};
use hydra::synth;
use hydra::HydraError;

use crate::config::RunConfig;
use crate::error::CliError;

const MIN_FREQ: usize = 2;

/// `body.ckpt` + `vocab` -> `body.ckpt.vocab`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name: OsString = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

fn ensure_free(paths: &[PathBuf], force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(CliError::Usage(format!(
            "{} already exists; pass --force to overwrite",
            p.display()
        ))),
        None => Ok(()),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn read_corpus(paths: &[PathBuf]) -> Result<Vec<ParsedSentence>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(parse_conllu(open(p)?).map_err(CliError::in_file(p))?);
    }
    Ok(out)
}

fn read_tasks(path: &Path, kind: TaskKind, known: &[String]) -> Result<LabeledData, CliError> {
    load_labeled_tsv_with_labels(open(path)?, kind, known).map_err(CliError::in_file(path))
}

fn load_vocab(checkpoint: &Path) -> Result<Vocabulary, CliError> {
    let path = sidecar(checkpoint, "vocab");
    Vocabulary::read(open(&path)?).map_err(CliError::in_file(&path))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| match e {
        HydraError::Io { .. } => CliError::Hydra(e),
        other => CliError::in_file(path)(other),
    })
}

fn load_body(path: &Path) -> Result<TransformerBody, CliError> {
    TransformerBody::from_checkpoint(&load_checkpoint(path)?).map_err(CliError::in_file(path))
}

fn load_heads(path: &Path, body: &TransformerBody) -> Result<HydraHeads, CliError> {
    HydraHeads::from_checkpoint_for(&load_checkpoint(path)?, &body.config).map_err(CliError::in_file(path))
}

fn load_model(path: &Path) -> Result<Encoder, CliError> {
    Encoder::from_checkpoint(&load_checkpoint(path)?).map_err(CliError::in_file(path))
}

fn task_info(kind: TaskKind, data: &LabeledData) -> Result<TaskInfo, CliError> {
    let task = match kind {
        TaskKind::Classification => TaskInfo::classification(data.label_names.clone()),
        TaskKind::Regression => TaskInfo::regression(),
    };
    task.validate()?;
    Ok(task)
}

pub fn init_body(
    mut cfg: RunConfig,
    corpus: &[PathBuf],
    tasks: &[PathBuf],
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    let vocab_path = sidecar(out, "vocab");
    let config_path = sidecar(out, "config.toml");
    ensure_free(&[out.to_path_buf(), vocab_path.clone(), config_path.clone()], force)?;

    let mut words: Vec<String> = read_corpus(corpus)?.into_iter().flat_map(|s| s.tokens).collect();
    for t in tasks {
        let data = load_labeled_tsv(open(t)?, cfg.task).map_err(CliError::in_file(t))?;
        words.extend(data.examples.iter().flat_map(|e| split_words(&e.text)));
    }
    let vocab = Vocabulary::build(words, MIN_FREQ);
    cfg.model.vocab_size = vocab.len();
    let body = TransformerBody::init(cfg.model.clone(), cfg.seed)?;

    write(out, body.to_checkpoint().to_bytes())?;
    write(&vocab_path, vocab.to_file_string())?;
    write(&config_path, cfg.to_toml())?;
    println!(
        "body: {} layers, {} parameters, vocabulary {} -> {}",
        body.layer_count(),
        body.params.scalar_count(),
        vocab.len(),
        out.display()
    );
    Ok(())
}

pub fn pretrain(
    mut cfg: RunConfig,
    body_path: &Path,
    corpus: &[PathBuf],
    out: &Path,
    force: bool,
) -> Result<PretrainReport, CliError> {
    let log_path = sidecar(out, "log.jsonl");
    let config_path = sidecar(out, "config.toml");
    ensure_free(&[out.to_path_buf(), log_path.clone(), config_path.clone()], force)?;

    let body = load_body(body_path)?;
    let vocab = load_vocab(body_path)?;
    cfg.model = body.config.clone();
    let sentences = read_corpus(corpus)?;
    let (heads, report) = pretrain_heads(&body, &vocab, &sentences, &cfg.pretrain)?;

    write(out, heads.to_checkpoint().to_bytes())?;
    write(&log_path, report.to_jsonl())?;
    write(&config_path, cfg.to_toml())?;
    let last = report.epochs.last().expect("at least one epoch");
    println!(
        "heads: {} sentences ({} dropped), density estimate {:.4}, final train loss {:.4}{} -> {}",
        report.sentences_used,
        report.sentences_dropped,
        report.initial_loss_estimate,
        last.train_loss,
        last.val_loss.map(|v| format!(", val loss {v:.4}")).unwrap_or_default(),
        out.display()
    );
    Ok(report)
}

pub fn finetune_cmd(
    mut cfg: RunConfig,
    body_path: &Path,
    heads_path: Option<&Path>,
    train_path: &Path,
    dev_path: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<EvalReport, CliError> {
    let outputs = ["vocab", "report.json", "config.toml"].map(|s| sidecar(out, s));
    ensure_free(&[&[out.to_path_buf()][..], &outputs[..]].concat(), force)?;

    let body = load_body(body_path)?;
    let vocab = load_vocab(body_path)?;
    cfg.model = body.config.clone();
    let train = read_tasks(train_path, cfg.task, &[])?;
    let dev = match dev_path {
        Some(p) => read_tasks(p, cfg.task, &train.label_names)?,
        None => LabeledData {
            examples: Vec::new(),
            label_names: train.label_names.clone(),
        },
    };
    let task = task_info(cfg.task, &dev)?;
    let model = match heads_path {
        Some(h) => Encoder::attach(&body, &load_heads(h, &body)?, task, cfg.seed)?,
        None => Encoder::baseline(&body, task, cfg.seed)?,
    };
    let (trained, report) = finetune(model, &vocab, &train.examples, &dev.examples, &cfg.finetune)?;

    write(out, trained.to_checkpoint().to_bytes())?;
    write(&outputs[0], vocab.to_file_string())?;
    write(&outputs[1], report.to_json() + "\n")?;
    write(&outputs[2], cfg.to_toml())?;
    let summary: Vec<String> = report
        .splits
        .iter()
        .map(|s| format!("{} {} {:.4}", s.split, s.metric.name(), s.value))
        .collect();
    println!(
        "model: {} layers, best epoch {}, {} -> {}",
        report.layers,
        report.best_epoch.unwrap_or(0),
        summary.join(", "),
        out.display()
    );
    Ok(report)
}

pub fn evaluate_cmd(
    cfg: RunConfig,
    model_path: &Path,
    data_path: &Path,
    out: Option<&Path>,
    force: bool,
) -> Result<EvalReport, CliError> {
    if let Some(o) = out {
        ensure_free(&[o.to_path_buf()], force)?;
    }
    let model = load_model(model_path)?;
    let vocab = load_vocab(model_path)?;
    let data = read_tasks(data_path, model.task.kind, &model.task.label_names)?;
    let split = data_path
        .file_stem()
        .map_or("data".into(), |s| s.to_string_lossy().into_owned());
    let report = evaluate(&model, &vocab, &data.examples, &split, cfg.finetune.max_len)?;
    match out {
        Some(o) => write(o, report.to_json() + "\n")?,
        None => println!("{}", report.to_json()),
    }
    Ok(report)
}

/// Where the sentence to inspect comes from.
pub enum InspectInput<'a> {
    Text(&'a str),
    Conllu { path: &'a Path, index: usize },
}

fn csv_matrix(labels: &[String], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = std::iter::once(String::new()).chain(labels.iter().cloned());
    let csv_err = |e: csv::Error| CliError::Usage(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for (label, row) in labels.iter().zip(rows) {
        w.write_record(std::iter::once(label).chain(row)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Writes `head_<h>.csv` for every head and, when a parse is available,
/// `gold.csv`. Returns the written paths.
/// Produces the input of the HYDRA layer for one batch.
type HiddenFn = Box<dyn Fn(&TokenBatch) -> hydra::Result<hydra::Tensor>>;

pub fn inspect(
    model_path: &Path,
    body_path: Option<&Path>,
    input: InspectInput,
    out_dir: &Path,
    force: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let ckpt = load_checkpoint(model_path)?;
    let (sentence, tokens) = match input {
        InspectInput::Text(t) => (None, split_words(t)),
        InspectInput::Conllu { path, index } => {
            let mut all = read_corpus(&[path.to_path_buf()])?;
            if index >= all.len() {
                return Err(CliError::InFile {
                    path: path.to_path_buf(),
                    source: HydraError::Index {
                        what: "sentence",
                        index,
                        size: all.len(),
                    },
                });
            }
            let s = all.swap_remove(index);
            let tokens = s.tokens.clone();
            (Some(s), tokens)
        }
    };
    if tokens.is_empty() {
        return Err(CliError::Usage("nothing to inspect: the sentence has no tokens".into()));
    }

    let (heads, vocab, hidden_of): (HydraHeads, Vocabulary, HiddenFn) = match ckpt.kind {
        CheckpointKind::Heads => {
            let body_path =
                body_path.ok_or_else(|| CliError::Usage("inspecting a heads checkpoint needs --body".into()))?;
            let body = load_body(body_path)?;
            let heads = HydraHeads::from_checkpoint_for(&ckpt, &body.config).map_err(CliError::in_file(model_path))?;
            (heads, load_vocab(body_path)?, Box::new(move |b| body.forward(b)))
        }
        CheckpointKind::Model => {
            let model = Encoder::from_checkpoint(&ckpt).map_err(CliError::in_file(model_path))?;
            let heads = model.hydra_heads().ok_or_else(|| {
                CliError::Hydra(HydraError::Compatibility(format!(
                    "{} has no HYDRA layer",
                    model_path.display()
                )))
            })?;
            (heads, load_vocab(model_path)?, Box::new(move |b| model.body_hidden(b)))
        }
        CheckpointKind::Body => {
            return Err(CliError::Hydra(HydraError::Compatibility(format!(
                "{} is a body checkpoint; inspect needs heads or a HYDRA model",
                model_path.display()
            ))))
        }
    };

    let ids = vocab.encode_words(&tokens);
    let seq = ids.len();
    let hidden = hidden_of(&TokenBatch::from_sequences(&[ids])?)?;
    let labels: Vec<String> = std::iter::once("[CLS]".to_string()).chain(tokens).collect();

    let paths: Vec<PathBuf> = (0..heads.n_heads())
        .map(|h| out_dir.join(format!("head_{h}.csv")))
        .chain(sentence.as_ref().map(|_| out_dir.join("gold.csv")))
        .collect();
    ensure_free(&paths, force)?;

    for (h, path) in paths.iter().enumerate().take(heads.n_heads()) {
        let m = heads.logits(&hidden, h)?;
        let rows: Vec<Vec<String>> = m
            .data()
            .chunks(seq)
            .map(|r| r.iter().map(|v| format!("{v:.6}")).collect())
            .collect();
        write(path, csv_matrix(&labels, &rows)?)?;
    }
    if let Some(s) = &sentence {
        let (target, _) = align_sdoi_to_tokens(&build_sdoi_with(s, Default::default()), seq)?;
        let rows: Vec<Vec<String>> = target
            .data()
            .chunks(seq)
            .map(|r| r.iter().map(|v| format!("{}", *v as u8)).collect())
            .collect();
        write(&paths[heads.n_heads()], csv_matrix(&labels, &rows)?)?;
    }
    println!(
        "wrote {} matrices of size {seq}x{seq} to {}",
        paths.len(),
        out_dir.display()
    );
    Ok(paths)
}

#[allow(clippy::too_many_arguments)]
pub fn compare(
    mut cfg: RunConfig,
    body_path: &Path,
    heads_path: &Path,
    train_path: &Path,
    dev_path: Option<&Path>,
    seeds: &[u64],
    out_dir: &Path,
    force: bool,
) -> Result<Comparison, CliError> {
    let outputs = ["comparison.json", "comparison.txt", "config.toml"].map(|f| out_dir.join(f));
    ensure_free(&outputs, force)?;
    let body = load_body(body_path)?;
    let vocab = load_vocab(body_path)?;
    let heads = load_heads(heads_path, &body)?;
    cfg.model = body.config.clone();
    let train = read_tasks(train_path, cfg.task, &[])?;
    let dev = match dev_path {
        Some(p) => read_tasks(p, cfg.task, &train.label_names)?,
        None => LabeledData {
            examples: Vec::new(),
            label_names: train.label_names.clone(),
        },
    };
    let task = task_info(cfg.task, &dev)?;
    let table = compare_baseline(
        &body,
        &heads,
        &vocab,
        &train.examples,
        &dev.examples,
        &task,
        seeds,
        &cfg.finetune,
    )?;
    write(&outputs[0], table.to_json() + "\n")?;
    write(&outputs[1], table.to_text())?;
    write(&outputs[2], cfg.to_toml())?;
    print!("{}", table.to_text());
    Ok(table)
}

/// Writes the generated datasets used by the quick start.
pub fn synth_data(out_dir: &Path, sentences: usize, seed: u64, force: bool) -> Result<Vec<PathBuf>, CliError> {
    let names = [
        "treebank.conllu",
        "agreement_train.tsv",
        "agreement_dev.tsv",
        "shortcut_sentiment.tsv",
    ];
    let paths = names.map(|n| out_dir.join(n));
    ensure_free(&paths, force)?;
    let treebank = synth::treebank(sentences, seed);
    let (train, dev) = synth::agreement_task(200, 100, seed);
    let shortcut = synth::shortcut_sentiment();
    write(&paths[0], write_minimal_conllu(&treebank))?;
    for (path, data) in paths[1..].iter().zip([&train, &dev, &shortcut]) {
        write(path, write_labeled_tsv(data))?;
    }
    println!("wrote {} files to {}", paths.len(), out_dir.display());
    Ok(paths.to_vec())
}
