use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sepsis_cli::{exit_code, prepare, run, Step};

/// Clinical notes to sepsis progression networks.
#[derive(Debug, Parser)]
#[command(name = "sepsis", version)]
struct Cli {
    /// JSON pipeline configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Artifact directory; overrides paths.output_dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Print the effective configuration with all defaults and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Load notes, vitals and demographics into first admissions.
    Ingest,
    /// Extract polarity-tagged concepts from every note.
    Structure,
    /// Align, impute and segment concepts into stages.
    Stages,
    /// Build ternary stage vectors and train the autoencoder.
    Vectors,
    /// Cluster stage-1 dense vectors and pick k by silhouette.
    Cluster,
    /// Random forest and SHAP profiles per subgroup.
    Explain,
    /// Sepsis state per stage from vitals and flags.
    Severity,
    /// Transition networks, annotations and renders.
    Pathways,
    /// Subgroup and next-state classifiers.
    Predict,
    /// Generate a synthetic cohort with planted ground truth.
    Synth,
    /// Run ingest through predict.
    All,
}

impl From<Command> for Step {
    fn from(c: Command) -> Self {
        match c {
            Command::Ingest => Step::Ingest,
            Command::Structure => Step::Structure,
            Command::Stages => Step::Stages,
            Command::Vectors => Step::Vectors,
            Command::Cluster => Step::Cluster,
            Command::Explain => Step::Explain,
            Command::Severity => Step::Severity,
            Command::Pathways => Step::Pathways,
            Command::Predict => Step::Predict,
            Command::Synth => Step::Synth,
            Command::All => Step::All,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = match prepare(cli.config.as_deref(), cli.out, cli.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&config).expect("config serializes"));
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand given; see `sepsis --help`");
        return ExitCode::from(1);
    };
    match run(command.into(), &config) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
