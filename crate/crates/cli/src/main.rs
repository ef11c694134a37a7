use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nbf_core::config::PipelineConfig;
use nbf_core::pipeline::{Pipeline, Summary};
use nbf_core::Error;

#[derive(Parser)]
#[command(
    name = "nbf-lab",
    version,
    about = "Neural basis function surrogates for hypersonic blunt-body flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Root of the data/, bases/, models/ and reports/ directories.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Overwrite artifacts whose contents differ.
    #[arg(long)]
    force: bool,
    /// Worker threads for generate-data and ablation.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Mach sweep and write snapshots.
    GenerateData(Common),
    /// Compute POD bases of the training snapshots.
    Pod(Common),
    /// Fit the basis networks to the POD modes.
    TrainBasis(Common),
    /// Pretrain and physics-train the unknowns networks.
    TrainUnknowns(Common),
    /// Train the DeepONet baseline.
    TrainDeeponet(Common),
    /// Relative errors over the Mach sweep.
    Evaluate(Common),
    /// Training-set-size study of NBF against DeepONet.
    Ablation(Common),
    /// Warm-start the solver from the NBF prediction.
    Accelerate(Common),
    /// Run every step in order.
    Pipeline(Common),
}

fn load_config(c: &Common) -> Result<PipelineConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = &c.out_dir {
        cfg.out_dir = dir.clone();
    }
    let seed = c.seed.unwrap_or(cfg.seed);
    Ok(cfg.with_seed(seed))
}

fn run(cmd: Command) -> Result<Summary, Error> {
    let (common, step): (Common, fn(&Pipeline) -> Result<Summary, Error>) = match cmd {
        Command::GenerateData(c) => (c, Pipeline::generate_data),
        Command::Pod(c) => (c, Pipeline::pod),
        Command::TrainBasis(c) => (c, Pipeline::train_basis),
        Command::TrainUnknowns(c) => (c, Pipeline::train_unknowns),
        Command::TrainDeeponet(c) => (c, Pipeline::train_deeponet),
        Command::Evaluate(c) => (c, Pipeline::evaluate),
        Command::Ablation(c) => (c, Pipeline::ablation),
        Command::Accelerate(c) => (c, Pipeline::accelerate),
        Command::Pipeline(c) => (c, Pipeline::run_all),
    };
    let cfg = load_config(&common)?;
    let pipeline = Pipeline::new(cfg, common.force, common.jobs)?;
    step(&pipeline)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{}", summary.line());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = if e.is_usage() { 1 } else { 2 };
            eprintln!("error: {e}");
            println!("status=error exit={code}");
            ExitCode::from(code)
        }
    }
}
