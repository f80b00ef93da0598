//! Experiment driver for the `btc` command-line tool.
//!
//! Each experiment writes one or more CSV tables (header row, comma separated,
//! 17 significant digits, LF line endings) and a `<output>.meta` sidecar with
//! the resolved configuration.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod stats;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, Command};

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::CliError;

pub const VERSION: &str = concat!("btc-experiments ", env!("CARGO_PKG_VERSION"));

pub fn command() -> Command {
    let mut cmd = Command::new("btc")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Collective-spin dynamics, trajectories and stabilizer entropy experiments")
        .after_help(format!(
            "Environment: {} caps the number of worker threads (0 or unset = automatic).",
            btc_core::parallel::THREADS_ENV
        ))
        .arg(
            Arg::new("experiment")
                .required(true)
                .value_parser(clap::builder::EnumValueParser::<ExperimentKind>::new())
                .help("experiment to run"),
        )
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value file; command-line flags take precedence"),
        );
    for (key, help) in config::OPTIONS {
        cmd = cmd.arg(Arg::new(*key).long(*key).value_name("VALUE").action(ArgAction::Set).help(*help));
    }
    cmd
}

/// Parses arguments into a validated configuration.
pub fn parse_args<I, T>(args: I) -> Result<ExperimentConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    let kind = *matches.get_one::<ExperimentKind>("experiment").expect("required");
    let mut map = BTreeMap::new();
    if let Some(path) = matches.get_one::<String>("config") {
        map = config::read_config_file(std::path::Path::new(path)).map_err(to_clap)?;
    }
    for (key, _) in config::OPTIONS {
        if let Some(v) = matches.get_one::<String>(key) {
            map.insert(key.to_string(), v.clone());
        }
    }
    ExperimentConfig::from_map(kind, &map).map_err(to_clap)
}

fn to_clap(e: CliError) -> clap::Error {
    let kind = match e {
        CliError::Io { .. } => clap::error::ErrorKind::Io,
        _ => clap::error::ErrorKind::ValueValidation,
    };
    clap::Error::raw(kind, format!("{e}\n"))
}

/// Runs the experiment on the current thread pool and writes every artifact.
/// Returns the written CSV paths (the main output first).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let outputs = experiments::compute(cfg)?;
    if let Some(dir) = cfg.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut written = Vec::new();
    for (path, table) in &outputs {
        table.write(path)?;
        written.push(path.clone());
    }
    let mut meta = cfg.to_pairs();
    meta.push(("version".into(), VERSION.into()));
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    meta.push(("timestamp".into(), stamp.to_string()));
    let files: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
    meta.push(("files".into(), files.join(",")));
    output::write_meta(&output::meta_path(&cfg.output), &meta)?;
    Ok(written)
}
