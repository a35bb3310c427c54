use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualspace_cli::{commands, CliResult, Overrides, RunConfig, CACHE_ENV};

#[derive(Parser)]
#[command(name = "dualspace", version, about = "Semantic anomaly detection in two feature spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract backbone features into the cache.
    Extract(RunArgs),
    /// Train student blocks on the normal data of the configured pivot.
    Train(RunArgs),
    /// Score every variant and write report.json / report.csv / summary.csv.
    Evaluate(RunArgs),
    /// Class-confusion analysis and the confusion / inflation demonstrations.
    Diagnose(RunArgs),
    /// Print a summary of an existing report.json.
    Report {
        path: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Variant string such as `combined-m10:gaussian:0.90`; repeatable.
    #[arg(long = "variant")]
    variants: Vec<String>,
    /// `unimodal` or `multimodal`.
    #[arg(long)]
    setting: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    /// Block list, e.g. `2..11` or `0,5,11`.
    #[arg(long)]
    blocks: Option<String>,
    /// Whitening energy applied to every variant.
    #[arg(long)]
    energy: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> CliResult<RunConfig> {
        let ov = Overrides {
            seed: self.seed,
            trials: self.trials,
            variants: self.variants,
            setting: self.setting,
            dataset: self.dataset,
            blocks: self.blocks,
            energy: self.energy,
            cache_dir: self.cache,
            output_dir: self.output,
        };
        let env_cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
        RunConfig::resolve(self.config.as_deref(), &ov, env_cache)
    }
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Extract(a) => commands::extract(&a.resolve()?),
        Command::Train(a) => commands::train(&a.resolve()?),
        Command::Evaluate(a) => {
            let cfg = a.resolve()?;
            commands::evaluate(&cfg)?;
            commands::summarize(&cfg.output_dir.join("report.json"))
        }
        Command::Diagnose(a) => commands::diagnose(&a.resolve()?),
        Command::Report { path } => commands::summarize(&path),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
