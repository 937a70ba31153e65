use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use persona_cli::commands::{self, EvalOptions, GRADCHECK_TOLERANCE};
use persona_cli::service::AppState;
use persona_cli::{error_kind, error_line, error_message};
use persona_core::inference::SystemVariant;
use persona_core::model::{DecodeMode, Precision};

#[derive(Parser)]
#[command(name = "persona", version, about = "Train and run a chatbot that answers from a fixed profile")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dims {
    Toy,
}

#[derive(Clone, Copy, ValueEnum)]
enum StoredPrecision {
    F64,
    F32,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory.
    GenCorpus {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-stage training; writes a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to the corpus profile.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Training config JSON; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// iccm trains with detected anchors, iccm-pos with random anchors.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, value_enum, default_value = "f64")]
        precision: StoredPrecision,
    },
    /// Line-oriented chat on stdin/stdout.
    Chat {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value = "iccm")]
        variant: String,
    },
    /// HTTP API for the chat UI.
    Serve {
        /// Checkpoint trained with detected anchors (all variants but iccm-pos).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Checkpoint trained with random anchors (iccm-pos).
        #[arg(long)]
        pos_ckpt: Option<PathBuf>,
        #[arg(long)]
        profile: PathBuf,
        /// The port is overridden by $PORT when set.
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Detector, position and session metrics as a JSON report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value = "iccm")]
        variant: String,
        /// Per-pair detector decisions on the held-out profile-binary set.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        sessions_per_key: usize,
        #[arg(long, default_value_t = 3)]
        session_size: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
    /// Finite-difference check of the full loss on a toy model.
    Gradcheck {
        #[arg(long, value_enum)]
        dims: Dims,
        #[arg(long, default_value_t = 3)]
        seed: u64,
    },
}

fn parse_variant(name: &str) -> Result<SystemVariant> {
    Ok(name.parse::<SystemVariant>()?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenCorpus { config, seed, out } => {
            commands::gen_corpus(&config, seed, &out)?;
        }
        Command::Train { corpus, profile, config, out, variant, precision } => {
            let variant = variant.as_deref().map(parse_variant).transpose()?;
            let precision = match precision {
                StoredPrecision::F64 => Precision::F64,
                StoredPrecision::F32 => Precision::F32,
            };
            let report = commands::train(&corpus, profile.as_deref(), config.as_deref(), variant, &out, precision)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Chat { ckpt, profile, variant } => {
            let variant = parse_variant(&variant)?;
            let ckpt = commands::load_checkpoint(&ckpt)?;
            let profile = commands::load_profile_file(&profile)?;
            let stdout = io::stdout();
            commands::chat(&ckpt, profile, variant, io::stdin().lock(), BufWriter::new(stdout.lock()))?;
        }
        Command::Serve { ckpt, pos_ckpt, profile, addr } => {
            let detected = ckpt.as_deref().map(commands::load_checkpoint).transpose()?;
            let random = pos_ckpt.as_deref().map(commands::load_checkpoint).transpose()?;
            let profile = commands::load_profile_file(&profile)?;
            let state = AppState::new(detected, random, profile, DecodeMode::Greedy)?;
            let addr = commands::resolve_addr(&addr, std::env::var("PORT").ok().as_deref())?;
            tokio::runtime::Runtime::new()?.block_on(commands::serve(state, &addr))?;
        }
        Command::Eval { ckpt, corpus, report, profile, variant, csv, sessions_per_key, session_size, seed } => {
            let opts = EvalOptions {
                ckpt: &ckpt,
                corpus: &corpus,
                profile: profile.as_deref(),
                variant: parse_variant(&variant)?,
                sessions_per_key,
                session_size,
                seed,
                csv: csv.as_deref(),
            };
            let result = commands::eval(&opts)?;
            write_json(&report, &result)?;
            println!("{}", serde_json::to_string(&result)?);
        }
        Command::Gradcheck { dims: Dims::Toy, seed } => {
            let summary = commands::gradcheck(seed)?;
            println!("{}", serde_json::to_string(&summary)?);
            if !summary.passed {
                bail!(persona_core::Error::Num(numgrad::NumError::Contract(format!(
                    "max relative error {:.3e} is not below {GRADCHECK_TOLERANCE:e}",
                    summary.max_relative_error
                ))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = io::stdout().flush();
            eprintln!("{}", error_line(error_kind(&e), &error_message(&e)));
            ExitCode::FAILURE
        }
    }
}
