//! `lipread`: preprocess → train → decode → evaluate → analyze, plus synthetic data.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lipread::config::RunConfig;
use lipread::tokenizer::Vocabulary;
use lipread::Error;

#[derive(Parser, Debug)]
#[command(name = "lipread", version, about = "Spanish visual speech recognition toolkit")]
struct Cli {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-utterance parallelism. Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Vocabulary file (one symbol per line); the built-in Spanish set by default.
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    /// Overrides one configuration key, e.g. `--set beam=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(flatten)]
    ablation: Ablation,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Ablation {
    /// Drop the attention decoder: α = λ = 1.
    #[arg(long = "ctc_only", global = true)]
    ctc_only: bool,
    /// Drop the CTC branch: α = λ = 0.
    #[arg(long = "attn_only", global = true)]
    attn_only: bool,
    /// Decode without the language model: β = 0.
    #[arg(long = "no_lm", global = true)]
    no_lm: bool,
    /// Train without data augmentation.
    #[arg(long = "no_augment", global = true)]
    no_augment: bool,
    /// Train the language model without the in-domain transcripts.
    #[arg(long = "no_lm_finetune", global = true)]
    no_lm_finetune: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic corpus (LRV1 clips, landmark CSVs, manifest, transcripts).
    SynthData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Align and crop mouth ROIs, write processed clips and normalization statistics.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the hybrid CTC/attention model on a preprocessed directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the character n-gram language model.
    LmTrain {
        /// General-domain text, one sentence per line.
        #[arg(long)]
        text: Option<PathBuf>,
        /// In-domain `id<TAB>text` transcripts added on top of the general text.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint CTC/attention/LM beam search over a preprocessed directory.
    Decode {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lm: Option<PathBuf>,
        /// Output directory for `nbest.tsv` and `hyp.txt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score hypotheses against references with bootstrap confidence intervals.
    Evaluate {
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// WER histogram, Zipf curve and vocabulary coverage tables.
    Analyze {
        /// Training transcripts (`id<TAB>text`).
        #[arg(long)]
        train: PathBuf,
        /// Test references (`id<TAB>text`).
        #[arg(long)]
        test: PathBuf,
        /// Test hypotheses; enables the WER histogram.
        #[arg(long)]
        hyps: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Why a command failed, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) => Failure::Numerical(e.to_string()),
            Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    let a = &cli.ablation;
    cfg.ctc_only |= a.ctc_only;
    cfg.attn_only |= a.attn_only;
    cfg.no_lm |= a.no_lm;
    cfg.no_augment |= a.no_augment;
    cfg.no_lm_finetune |= a.no_lm_finetune;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve_config(&cli)?;
    let vocab = match &cli.vocab {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Vocabulary::from_text(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
        }
        None => Vocabulary::spanish(),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot start {} worker threads: {e}", cfg.jobs)))?;
    let ctx = artifacts::Context { cfg, vocab };
    match cli.command {
        Command::SynthData { out } => commands::synth_data(&ctx, &out),
        Command::Preprocess { manifest, out } => commands::preprocess(&ctx, &manifest, &out),
        Command::Train { data, out } => commands::train(&ctx, &data, &out),
        Command::LmTrain { text, transcripts, out } => {
            commands::lm_train(&ctx, text.as_deref(), transcripts.as_deref(), &out)
        }
        Command::Decode { data, model, lm, out } => commands::decode(&ctx, &data, &model, lm.as_deref(), &out),
        Command::Evaluate { refs, hyps, out } => commands::evaluate(&ctx, &refs, &hyps, &out),
        Command::Analyze { train, test, hyps, out } => commands::analyze(&ctx, &train, &test, hyps.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
