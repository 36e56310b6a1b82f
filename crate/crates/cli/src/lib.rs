//! `eoli` command line: JSON-configured pipeline from a country-year panel
//! to imputed data, sub-indices, rankings and reports.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use eoli_core::panel::{self, default_schema, ValueFormat};
use eoli_core::synthetic;

use crate::config::{parse_config, ImputerMethod, PipelineConfig};
use crate::pipeline::Command;

#[derive(Debug, Parser)]
#[command(name = "eoli", version, about = "Composite country indices from sparse panel data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Pipeline configuration (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Master seed; overrides the configured one.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Imputation method; overrides the configured one.
    #[arg(long, value_enum)]
    pub method: Option<ImputerMethod>,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Load, merge and unit-standardize the sources; writes panel.csv.
    Ingest(CommonArgs),
    /// Per-indicator missingness; writes missingness_report.csv.
    ReportMissingness(CommonArgs),
    /// Impute each pillar; writes imputed.csv.
    Impute(CommonArgs),
    /// Masking benchmark of the imputers; writes benchmark_report.csv and kde.csv.
    Benchmark(CommonArgs),
    /// PCA, KMO and factor analysis per pillar; writes pca_report.csv,
    /// factor_report.csv and kmo_report.csv.
    Reduce(CommonArgs),
    /// Sub-indices and the composite; writes subindex.csv.
    BuildIndex(CommonArgs),
    /// Yearly ranks and decade averages; writes rankings.csv and average_ranks.csv.
    Rank(CommonArgs),
    /// Quartile levels per year; writes categories.csv.
    Categorize(CommonArgs),
    /// Compare against an external ranking; writes comparison.csv.
    Compare(CommonArgs),
    /// Full pipeline.
    Run(CommonArgs),
    /// Write the synthetic toy panel, its schema and a config into a directory.
    GenerateToy(ToyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ToyArgs {
    /// Target directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Generator seed.
    #[arg(long, value_name = "U64", default_value_t = 0)]
    pub seed: u64,
}

/// Loads the configuration and applies command-line overrides.
pub fn load_config(args: &CommonArgs) -> Result<PipelineConfig, config::ConfigError> {
    let mut config = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(method) = args.method {
        config.imputer.method = method;
    }
    Ok(config)
}

/// Writes `panel.csv`, `schema.csv` and `config.json` for the toy panel.
pub fn generate_toy(dir: &Path, seed: u64) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let dataset = synthetic::toy_panel(seed);
    let mut buf = Vec::new();
    panel::write_long_csv(&dataset, &mut buf, ValueFormat::Fixed(6)).map_err(std::io::Error::other)?;
    fs::write(dir.join("panel.csv"), buf)?;
    let mut buf = Vec::new();
    panel::write_schema_csv(&default_schema(), &mut buf).map_err(std::io::Error::other)?;
    fs::write(dir.join("schema.csv"), buf)?;
    let config = serde_json::json!({
        "data_sources": [{ "path": "panel.csv", "format": "long" }],
        "schema": "schema.csv",
        "seed": seed,
        "output_dir": "out",
    });
    let mut text = serde_json::to_string_pretty(&config).expect("json");
    text.push('\n');
    fs::write(dir.join("config.json"), text)
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 when the manifest was written, 1 on a pipeline failure, 2 on a usage
/// or configuration error.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (command, common) = match cli.command {
        CliCommand::GenerateToy(a) => {
            return match generate_toy(&a.out, a.seed) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {}: {e}", a.out.display());
                    1
                }
            };
        }
        CliCommand::Ingest(a) => (Command::Ingest, a),
        CliCommand::ReportMissingness(a) => (Command::ReportMissingness, a),
        CliCommand::Impute(a) => (Command::Impute, a),
        CliCommand::Benchmark(a) => (Command::Benchmark, a),
        CliCommand::Reduce(a) => (Command::Reduce, a),
        CliCommand::BuildIndex(a) => (Command::BuildIndex, a),
        CliCommand::Rank(a) => (Command::Rank, a),
        CliCommand::Categorize(a) => (Command::Categorize, a),
        CliCommand::Compare(a) => (Command::Compare, a),
        CliCommand::Run(a) => (Command::Run, a),
    };
    let config = match load_config(&common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return 2;
        }
    };
    match pipeline::execute(command, &config) {
        Ok(m) => {
            eprintln!("{}: {} artifacts written to {}", m.command, m.artifacts.len(), config.output_dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
