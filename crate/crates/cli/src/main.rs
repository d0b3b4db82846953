//! `hydra`: build a body, pretrain dependency heads, fine-tune, evaluate,
//! inspect and compare.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::InspectInput;
use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "hydra",
    version,
    about = "Dependency-supervised attention heads for a small transformer encoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Settings {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set finetune.lr=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

impl Settings {
    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Initialize a body and its vocabulary from CoNLL-U corpora and task files.
    InitBody {
        #[command(flatten)]
        settings: Settings,
        #[arg(long, required = true)]
        corpus: Vec<PathBuf>,
        /// Labeled TSV files whose words join the vocabulary.
        #[arg(long)]
        task: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain HYDRA query/key projections against a frozen body.
    PretrainHeads {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        body: PathBuf,
        #[arg(long, required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the body, with the HYDRA layer when `--heads` is given.
    Finetune {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        body: PathBuf,
        #[arg(long)]
        heads: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fine-tuned model on a labeled TSV.
    Evaluate {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-head attention logits (and the gold relation matrix) as CSV.
    Inspect {
        /// A heads checkpoint (with `--body`) or a fine-tuned HYDRA model.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        body: Option<PathBuf>,
        #[arg(long, conflicts_with = "conllu", required_unless_present = "conllu")]
        sentence: Option<String>,
        /// Take the sentence and its gold parse from a CoNLL-U file.
        #[arg(long)]
        conllu: Option<PathBuf>,
        /// Zero-based sentence index within `--conllu`.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Fine-tune baseline, fresh-layer and pretrained-HYDRA variants per seed.
    Compare {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        body: PathBuf,
        #[arg(long)]
        heads: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic treebank and task files.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 600)]
        sentences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::InitBody {
            settings,
            corpus,
            task,
            out,
        } => commands::init_body(settings.load()?, &corpus, &task, &out, settings.force),
        Command::PretrainHeads {
            settings,
            body,
            corpus,
            out,
        } => commands::pretrain(settings.load()?, &body, &corpus, &out, settings.force).map(drop),
        Command::Finetune {
            settings,
            body,
            heads,
            train,
            dev,
            out,
        } => commands::finetune_cmd(
            settings.load()?,
            &body,
            heads.as_deref(),
            &train,
            dev.as_deref(),
            &out,
            settings.force,
        )
        .map(drop),
        Command::Evaluate {
            settings,
            model,
            data,
            out,
        } => commands::evaluate_cmd(settings.load()?, &model, &data, out.as_deref(), settings.force).map(drop),
        Command::Inspect {
            model,
            body,
            sentence,
            conllu,
            index,
            out,
            force,
        } => {
            let input = match (&sentence, &conllu) {
                (Some(text), _) => InspectInput::Text(text),
                (None, Some(path)) => InspectInput::Conllu { path, index },
                (None, None) => return Err(CliError::Usage("give --sentence or --conllu".into())),
            };
            commands::inspect(&model, body.as_deref(), input, &out, force).map(drop)
        }
        Command::Compare {
            settings,
            body,
            heads,
            train,
            dev,
            seeds,
            out,
        } => commands::compare(
            settings.load()?,
            &body,
            &heads,
            &train,
            dev.as_deref(),
            &seeds,
            &out,
            settings.force,
        )
        .map(drop),
        Command::SynthData {
            out,
            sentences,
            seed,
            force,
        } => commands::synth_data(&out, sentences, seed, force).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
