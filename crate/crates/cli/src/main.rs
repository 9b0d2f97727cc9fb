use clap::{Parser, Subcommand};
use luq_cli::config::Command as Pipeline;
use std::path::PathBuf;
use std::process::ExitCode;

/// Quantify the error of reduced stochastic models: divergences between
/// evolving densities, observable-error bounds, and divergence-rate fields.
#[derive(Parser)]
#[command(name = "luq", version, about)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(clap::Args)]
struct RunArgs {
    /// experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// override run.seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// cap on parallel workers (also honors LUQ_WORKERS)
    #[arg(long)]
    workers: Option<usize>,
    /// override output.dir from the config
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Divergence between two analytic densities on a grid
    Divergence(RunArgs),
    /// Observable-error bound report for a density pair
    Bound(RunArgs),
    /// Forward Kolmogorov (Fokker-Planck) solve with snapshot export
    Fpe(RunArgs),
    /// Field-based divergence bound for a model pair
    ReconstructBound(RunArgs),
    /// Centred-flow finite-time divergence-rate field
    FtdrField(RunArgs),
    /// Pathspace finite-marginal bound for a model pair
    PathspaceBound(RunArgs),
    /// The slow-fast reduced-model comparison
    CaseStudy(RunArgs),
    /// Print the model and generator catalog with parameter schemas
    ListPresets,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (pipeline, args) = match cli.command {
        CliCommand::Divergence(a) => (Pipeline::Divergence, a),
        CliCommand::Bound(a) => (Pipeline::Bound, a),
        CliCommand::Fpe(a) => (Pipeline::Fpe, a),
        CliCommand::ReconstructBound(a) => (Pipeline::ReconstructBound, a),
        CliCommand::FtdrField(a) => (Pipeline::FtdrField, a),
        CliCommand::PathspaceBound(a) => (Pipeline::PathspaceBound, a),
        CliCommand::CaseStudy(a) => (Pipeline::CaseStudy, a),
        CliCommand::ListPresets => {
            print!("{}", luq_cli::pipelines::list_presets());
            return ExitCode::SUCCESS;
        }
    };
    let code = luq_cli::run(
        pipeline,
        &args.config,
        args.seed,
        args.out.as_deref(),
        args.workers,
    );
    ExitCode::from(code as u8)
}
