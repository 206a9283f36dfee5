//! `ifim`: dataset synthesis, training-example formatting, benchmark
//! derivation, evaluation, request assembly, and the infill service.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "ifim", version, about = "Instruction-aware fill-in-the-middle pipeline")]
pub struct Cli {
    /// Pipeline configuration (TOML); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build an instruction dataset from a code corpus.
    Synth(SynthArgs),
    /// Turn a dataset into training examples under a mode and mixing ratio.
    Format(FormatArgs),
    /// Derive a single-line infilling benchmark.
    Bench(BenchArgs),
    /// Run a completion backend over a benchmark and report Pass@1.
    Eval(EvalArgs),
    /// Assemble the model input for a file and cursor position.
    Assemble(AssembleArgs),
    /// Serve the infill HTTP API.
    Serve(ServeArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthBackendKind {
    Mock,
    Http,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Corpus JSONL: {"id", "language", "code", "source"?} per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Benchmark files to decontaminate against (HumanEval problems,
    /// benchmark tasks, or corpus JSONL).
    #[arg(long = "contaminants")]
    pub contaminants: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<SynthBackendKind>,
    /// Chat model name for the http backend.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub retries: Option<usize>,
    #[arg(long)]
    pub min_lines: Option<usize>,
    #[arg(long)]
    pub max_lines: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FormatArgs {
    /// Instruction dataset JSONL from `ifim synth`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Layout mode, e.g. PSIM, PIMS, PSM.
    #[arg(long)]
    pub mode: String,
    /// Share of records rendered with their instruction.
    #[arg(long, default_value_t = 1.0)]
    pub ratio: f64,
    /// Instructed records become comment-in-prefix FIM instead of IFIM.
    #[arg(long)]
    pub cfim: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Profile whose sentinels are used.
    #[arg(long, default_value = "default")]
    pub profile: String,
    #[arg(long)]
    pub profiles: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OriginKind {
    /// HumanEval problem JSONL; docstrings are stripped.
    Humaneval,
    /// Benchmark task JSONL; context is truncated.
    Rme,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub problems: PathBuf,
    #[arg(long, value_enum)]
    pub origin: OriginKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep every derived task instead of a representative subset.
    #[arg(long)]
    pub full: bool,
    /// Keep docstrings in HumanEval problems.
    #[arg(long)]
    pub keep_docstrings: bool,
    /// Synthesize instructions for the tasks with this backend.
    #[arg(long, value_enum)]
    pub backend: Option<SynthBackendKind>,
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalBackendKind {
    Oracle,
    Scripted,
    Http,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub benchmark: PathBuf,
    #[arg(long, value_enum)]
    pub backend: Option<EvalBackendKind>,
    /// JSON map task id -> completion or {"error": ...}, for the scripted
    /// backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Override the layout mode (default: the profile's IFIM or base mode).
    #[arg(long)]
    pub mode: Option<String>,
    /// Evaluate a base model: instructions go in as prefix comments.
    #[arg(long)]
    pub base_model: bool,
    #[arg(long, conflicts_with = "both")]
    pub with_instruction: bool,
    /// Run with and without instructions.
    #[arg(long)]
    pub both: bool,
    #[arg(long)]
    pub timeout_s: Option<f64>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    /// Output directory for result JSONL and reports.
    #[arg(long)]
    pub out: PathBuf,
    /// Row label in the report (default: the backend name).
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Args, Debug)]
pub struct AssembleArgs {
    #[arg(long)]
    pub file: PathBuf,
    /// Byte offset of the cursor (default: end of file).
    #[arg(long)]
    pub cursor: Option<usize>,
    #[arg(long, default_value = "python")]
    pub language: String,
    #[arg(long, default_value = "default")]
    pub profile: String,
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Print the parsed request and input as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServeBackendKind {
    None,
    Http,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<ServeBackendKind>,
    #[arg(long)]
    pub model: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.config {
        Some(path) => PipelineConfig::load(path),
        None => Ok(PipelineConfig::default()),
    }
    .and_then(|cfg| commands::run(&cli, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
