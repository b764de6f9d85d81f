//! `mbe`: one subcommand per pipeline stage. Stages exchange files, so an
//! external model runtime can sit between `extract` and `score`.

mod commands;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;

#[derive(Parser)]
#[command(name = "mbe", version, about = "Multilingual bias evaluation for masked language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract female/male sentence subsets from a parallel corpus.
    Extract(ExtractArgs),
    /// Downsample the larger subset to the size of the smaller one.
    Balance(BalanceArgs),
    /// Produce model records with the deterministic mock backend.
    MockScore(MockScoreArgs),
    /// Similarity-weighted bias score of male vs female records.
    Score(ScoreArgs),
    /// Bias score over stereotypical/anti-stereotypical record pairs.
    PairedEval(PairedEvalArgs),
    /// Shuffled-pairing baseline over male and female records.
    Shf(ShfArgs),
    /// Generate occupation template sentence pairs.
    Templates(TemplatesArgs),
    /// Replace personal names with same-gender substitutes.
    SubstituteNames(SubstituteNamesArgs),
    /// Share of extracted sentences whose translation keeps a gendered term.
    Preservation(PreservationArgs),
    /// Compare candidate bias scores against reference scores across models.
    Meta(MetaArgs),
    /// McNemar test of indicator outcomes against a random predictor.
    Mcnemar(McnemarArgs),
}

/// Exit status for invalid invocations.
const EXIT_USAGE: u8 = 1;
/// Exit status for failures caused by input data.
const EXIT_DATA: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Extract(a) => extract(a),
        Command::Balance(a) => balance(a),
        Command::MockScore(a) => mock_score(a),
        Command::Score(a) => score(a),
        Command::PairedEval(a) => paired_eval(a),
        Command::Shf(a) => shf(a),
        Command::Templates(a) => templates(a),
        Command::SubstituteNames(a) => substitute_names(a),
        Command::Preservation(a) => preservation(a),
        Command::Meta(a) => meta(a),
        Command::Mcnemar(a) => mcnemar(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_DATA)
            }
        }
    }
}
