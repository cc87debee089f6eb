//! `aode` — merge expert checkpoints, score transcripts, inspect schedules,
//! and run the synthetic continual-learning lab.

mod commands;
mod failure;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use failure::{Failure, EXIT_USAGE};

#[derive(Parser)]
#[command(
    name = "aode",
    version,
    about = "Average-of-domain-experts toolkit",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Average two or more compatible checkpoints into one.
    Merge(MergeArgs),
    /// Score a hypothesis transcript against a reference.
    Wer(WerArgs),
    /// Dump the learning-rate schedule (and LLRD multipliers) as CSV.
    Schedule(ScheduleArgs),
    /// Run the synthetic continual-learning experiment.
    Toy(ToyArgs),
    /// Render evaluation/experiment reports as a combined table.
    Report(ReportArgs),
}

#[derive(clap::Args)]
struct MergeArgs {
    /// Input checkpoint files (at least two).
    #[arg(required = true, num_args = 2..)]
    inputs: Vec<PathBuf>,
    /// Output checkpoint path.
    #[arg(long, short)]
    output: PathBuf,
    /// "equal" or a comma-separated weight per input summing to 1.
    #[arg(long, default_value = "equal")]
    weights: String,
    /// Glob over tensor names to average; everything else is copied from the
    /// first input.
    #[arg(long)]
    include: Option<String>,
}

#[derive(clap::Args)]
struct WerArgs {
    /// Reference transcript: one "<utt_id>\t<text>" per line.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Hypothesis transcript in the same format.
    #[arg(long)]
    hyp: PathBuf,
    /// "default", "none", or a path to a normalization config JSON.
    #[arg(long, default_value = "default")]
    normalize: String,
    /// Write the report JSON here as well.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Domain name used in the report.
    #[arg(long, default_value = "corpus")]
    domain: String,
}

#[derive(clap::Args)]
struct ScheduleArgs {
    #[arg(long)]
    total_steps: u64,
    #[arg(long)]
    lr_max: f64,
    #[arg(long, default_value_t = aode::schedules::DEFAULT_CUT_FRAC)]
    cut_frac: f64,
    #[arg(long, default_value_t = aode::schedules::DEFAULT_RATIO)]
    ratio: f64,
    /// Also dump LLRD multipliers for this decay factor.
    #[arg(long)]
    llrd_decay: Option<f64>,
    /// Number of encoder layers for the LLRD dump.
    #[arg(long)]
    layers: Option<usize>,
}

#[derive(clap::Args)]
struct ToyArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated list of seeds, e.g. "0,1,2".
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Directory for per-seed reports, checkpoints, and the summary.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// Report JSON files (experiment reports or WER reports).
    #[arg(long, required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Output format.
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ReportFormat {
    Table,
    Csv,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successes; everything else is a usage
            // error under this tool's exit-code scheme.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    let result: Result<(), Failure> = match cli.command {
        Command::Merge(args) => commands::merge::run(&args),
        Command::Wer(args) => commands::wer::run(&args),
        Command::Schedule(args) => commands::schedule::run(&args),
        Command::Toy(args) => commands::toy::run(&args),
        Command::Report(args) => commands::report::run(&args),
    };
    if let Err(failure) = result {
        eprintln!("error: {failure}");
        std::process::exit(failure.code);
    }
}
