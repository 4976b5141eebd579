mod cmd_catalog;
mod cmd_derive;
mod cmd_pipeline;
mod cmd_report;
mod cmd_score;
mod cmd_sim;
mod errors;
mod provenance;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "visemes",
    version,
    about = "Derive, compare, and evaluate phoneme-to-viseme maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List, print, or export the built-in map catalog
    Catalog(cmd_catalog::CatalogArgs),
    /// Derive phoneme-to-viseme maps from confusion matrices
    Derive(cmd_derive::DeriveArgs),
    /// Compare maps: pairwise match table or full similarity matrix
    Sim(cmd_sim::SimArgs),
    /// Score hypothesis transcripts against references
    Score(cmd_score::ScoreArgs),
    /// Compression, similarity, homophone, and guessing-baseline tables
    Report(cmd_report::ReportArgs),
    /// Synthesize data, train classifiers, and evaluate across folds
    Pipeline(cmd_pipeline::PipelineArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Catalog(args) => cmd_catalog::run(args),
        Command::Derive(args) => cmd_derive::run(args),
        Command::Sim(args) => cmd_sim::run(args),
        Command::Score(args) => cmd_score::run(args),
        Command::Report(args) => cmd_report::run(args),
        Command::Pipeline(args) => cmd_pipeline::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}
