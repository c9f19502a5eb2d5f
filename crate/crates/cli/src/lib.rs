//! The `qembed` command line: configuration layering, subcommands, and the
//! mapping from errors to exit codes.

pub mod bench;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use qembed_core::ErrorClass;
use serde_json::json;

pub use config::{ConfigError, Preset, RunConfig, Split};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "qembed",
    version,
    about = "Context-aware logical query embedding"
)]
pub struct Cli {
    /// Flat JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base defaults when the config file does not name a preset.
    #[arg(long, global = true, value_parser = ["full", "desk"])]
    pub preset: Option<String>,
    /// Override one key, e.g. `--set dim=32`. Repeatable; later wins.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate triple files and print their sizes; with
    /// `synthetic_entities > 0`, write a random graph to them first.
    BuildKg,
    /// Ground random queries of `query_types` into `queries_output`.
    MakeQueries,
    /// Train on `train_queries` and write `checkpoint`.
    Train,
    /// Rank `eval_queries` with `checkpoint` and print the report.
    Eval,
    /// Rank all entities for one query.
    Answer {
        /// Query type name such as `1p` or `2in`.
        #[arg(long = "type")]
        query_type: String,
        /// Anchor entity labels in template order, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        anchors: Vec<String>,
        /// Relation labels in template order, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        relations: Vec<String>,
    },
    /// Finite-difference checks of the primitives and the full loss.
    Gradcheck,
    /// Time the relation-induced context for each `bench_samples` value.
    BenchContext,
}

/// A numeric check that ran but did not meet its threshold.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

/// Exit code and error kind for any error surfaced by a subcommand.
pub fn classify(err: &anyhow::Error) -> (i32, &'static str) {
    if err.downcast_ref::<ConfigError>().is_some() {
        return (EXIT_CONFIG, "config");
    }
    if err.downcast_ref::<NumericFailure>().is_some() {
        return (EXIT_NUMERIC, "numeric");
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<qembed_core::Error>() {
            return match e.class() {
                ErrorClass::Config => (EXIT_CONFIG, "config"),
                ErrorClass::Data => (EXIT_DATA, "data"),
                ErrorClass::Numeric => (EXIT_NUMERIC, "numeric"),
            };
        }
    }
    (EXIT_DATA, "data")
}

/// One-line JSON error record.
pub fn error_line(err: &anyhow::Error) -> String {
    let (code, kind) = classify(err);
    let message = format!("{err:#}");
    match err.downcast_ref::<ConfigError>() {
        Some(c) => json!({"error": kind, "code": code, "key": c.key, "message": message}),
        None => json!({"error": kind, "code": code, "message": message}),
    }
    .to_string()
}

/// Resolves the configuration from the parsed arguments.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let fallback = match cli.preset.as_deref() {
        Some(p) => p.parse()?,
        None => Preset::Full,
    };
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path, fallback)?,
        None => RunConfig::preset(fallback),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.set("workers", &serde_json::Value::from(w))?;
    }
    cfg.resolve();
    Ok(cfg)
}

/// Runs the command line and returns the process exit code. Results go
/// to `out`; the config echo, progress and errors go to `log`.
pub fn run<I, T>(args: I, out: &mut dyn Write, log: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            let _ = writeln!(
                log,
                "{}",
                json!({"error": "usage", "code": EXIT_USAGE, "message": first})
            );
            return EXIT_USAGE;
        }
    };
    let result = resolve_config(&cli)
        .map_err(anyhow::Error::from)
        .and_then(|cfg| {
            let _ = writeln!(log, "config {}", cfg.echo());
            let _ = writeln!(log, "seed {}", cfg.seed);
            commands::dispatch(&cli.command, &cfg, out, log)
        });
    match result {
        Ok(()) => EXIT_OK,
        Err(err) => {
            let _ = writeln!(log, "{}", error_line(&err));
            classify(&err).0
        }
    }
}
