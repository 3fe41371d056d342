//! `vsr` — experiment harness for the visual speech recognition stack:
//! corpus generation, pretext pretraining, downstream word/sentence
//! training, tap studies, label-fraction sweeps, evaluation, and plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod runs;

pub use config::{load_config, HarnessConfig};
pub use error::CliError;
pub use plot::{emit_plot, PlotKind};

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "vsr", version, about = "Visual speech recognition experiment harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides applied on top of the config file.
    #[arg(value_name = "DOTTED.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct PlotArgs {
    /// Metrics CSV to render.
    #[arg(long)]
    csv: PathBuf,
    /// Plot kind: fraction-curve or tap-bars.
    #[arg(long)]
    kind: String,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic audio-visual corpus.
    GenCorpus(RunArgs),
    /// Self-supervised pretext training (video -> acoustic features).
    Pretrain(RunArgs),
    /// Word-level downstream training.
    TrainWord(RunArgs),
    /// Sentence-level downstream training.
    TrainSentence(RunArgs),
    /// Frozen-feature accuracy per tap vs a random-projection baseline.
    TapStudy(RunArgs),
    /// Accuracy over (regime, label fraction, seed) cells.
    FractionSweep(RunArgs),
    /// Recompute the test metric of a saved checkpoint.
    Evaluate(RunArgs),
    /// Render a metrics CSV as an SVG figure.
    Plot(PlotArgs),
}

fn run(cmd: Cmd) -> error::Result<()> {
    match cmd {
        Cmd::Plot(args) => {
            let kind: PlotKind = args.kind.parse()?;
            emit_plot(&args.csv, kind, &args.out)
        }
        Cmd::GenCorpus(a) => commands::gen_corpus(&load_config(&a.config, &a.overrides)?),
        Cmd::Pretrain(a) => commands::pretrain(&load_config(&a.config, &a.overrides)?).map(|_| ()),
        Cmd::TrainWord(a) => commands::train_word(&load_config(&a.config, &a.overrides)?).map(|_| ()),
        Cmd::TrainSentence(a) => {
            commands::train_sentence(&load_config(&a.config, &a.overrides)?).map(|_| ())
        }
        Cmd::TapStudy(a) => commands::tap_study(&load_config(&a.config, &a.overrides)?).map(|_| ()),
        Cmd::FractionSweep(a) => {
            commands::fraction_sweep(&load_config(&a.config, &a.overrides)?).map(|_| ())
        }
        Cmd::Evaluate(a) => commands::evaluate(&load_config(&a.config, &a.overrides)?).map(|_| ()),
    }
}

/// Parse `argv` and execute; returns the process exit status (0 ok,
/// 1 config error, 2 runtime failure).
pub fn cli_dispatch(argv: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    match run(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
