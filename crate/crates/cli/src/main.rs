//! `cwnlab`: batch driver for the convoluted white-noise laboratory.

mod config;
mod output;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::json;

use config::{ConfigError, ExperimentConfig, Task};
use output::{sha256_hex, Manifest, TaskOutput};
use tasks::TaskError;

#[derive(Debug, Parser)]
#[command(
    name = "cwnlab",
    version,
    about = "Runs field-model experiments from a TOML configuration"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Relative tolerance for the momentum-space quadratures and bound integrals.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lattice Monte Carlo moments and truncated moments.
    Sample,
    /// Analytic truncated Schwinger functions against Monte Carlo.
    Schwinger,
    /// Truncated Wightman functions in momentum space.
    Wightman,
    /// Position-space against momentum-space values at ordered points.
    LaplaceCheck,
    /// Constants bounding the truncated Wightman functions.
    Bounds,
    /// Positivity certificate for the configured test-function family.
    Certify,
    /// Gram matrix, majorization and Krein reduction.
    Krein,
    /// Decay under growing spacelike separation.
    Cluster,
    /// Vanishing outside the spectral support.
    Spectral,
    /// Every task listed under `tasks` in the configuration.
    Run,
}

impl Command {
    fn task(&self) -> Option<Task> {
        Some(match self {
            Command::Sample => Task::Sample,
            Command::Schwinger => Task::Schwinger,
            Command::Wightman => Task::Wightman,
            Command::LaplaceCheck => Task::LaplaceCheck,
            Command::Bounds => Task::Bounds,
            Command::Certify => Task::Certify,
            Command::Krein => Task::Krein,
            Command::Cluster => Task::Cluster,
            Command::Spectral => Task::Spectral,
            Command::Run => return None,
        })
    }
}

fn report(kind: &str, field: Option<&str>, message: &str, code: i32) -> ExitCode {
    eprintln!(
        "{}",
        json!({"status": "error", "kind": kind, "field": field, "message": message, "exit_code": code})
    );
    ExitCode::from(code as u8)
}

fn config_error(e: &ConfigError) -> ExitCode {
    report("config", Some(&e.field), &e.message, 2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            let kind = e.kind();
            let field = (kind == ErrorKind::InvalidSubcommand).then_some("subcommand");
            return report("usage", field, e.to_string().trim(), 2);
        }
    };

    let Some(path) = &cli.config else {
        return config_error(&ConfigError::new("--config", "required"));
    };
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            return config_error(&ConfigError::new(
                "--config",
                format!("cannot read {}: {e}", path.display()),
            ))
        }
    };
    let text = match String::from_utf8(bytes) {
        Ok(t) => t,
        Err(_) => return config_error(&ConfigError::new("--config", "not valid UTF-8")),
    };
    let mut cfg = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.tolerance {
        if !(t > 0.0 && t.is_finite()) {
            return config_error(&ConfigError::new(
                "--tolerance",
                format!("must be positive, got {t}"),
            ));
        }
        cfg.quadrature.rel_tol = t;
        cfg.bound_grid.rel_tol = t;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return config_error(&ConfigError::new("--threads", "must be at least 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            return report("internal", None, &e.to_string(), 1);
        }
    }
    let Some(root) = cli.out.clone().or_else(|| cfg.output_dir.clone()) else {
        return config_error(&ConfigError::new(
            "output_dir",
            "give `output_dir` in the configuration or --out",
        ));
    };
    let tasks = match cli.command.task() {
        Some(t) => vec![t],
        None if cfg.tasks.is_empty() => {
            return config_error(&ConfigError::new(
                "tasks",
                "`run` needs a nonempty task list",
            ))
        }
        None => cfg.tasks.clone(),
    };

    let config_sha = sha256_hex(text.as_bytes());
    let mut worst: Option<TaskError> = None;
    for task in tasks {
        let mut out = match TaskOutput::create(&root, task.name()) {
            Ok(o) => o,
            Err(e) => return report("io", Some("--out"), &e.to_string(), 1),
        };
        let result = tasks::run(task, &cfg, &mut out);
        let status = if result.is_ok() { "ok" } else { "failed" };
        let error = result.as_ref().err().map(ToString::to_string);
        let (artifacts, started_unix, elapsed_seconds) = out.summary();
        let written = out.write_manifest(&Manifest {
            tool: env!("CARGO_PKG_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            core_version: cwn_core::VERSION,
            task: task.name(),
            config_path: path.display().to_string(),
            config_sha256: &config_sha,
            seed: cfg.seed,
            threads: cli.threads,
            tolerance: cli.tolerance,
            status,
            error,
            artifacts,
            started_unix,
            elapsed_seconds,
        });
        if let Err(e) = written {
            return report("io", Some("--out"), &e.to_string(), 1);
        }
        if let Err(e) = result {
            let field = match &e {
                TaskError::Config(c) => Some(c.field.clone()),
                _ => None,
            };
            let message = match &e {
                TaskError::Config(c) => c.message.clone(),
                other => other.to_string(),
            };
            eprintln!(
                "{}",
                json!({"status": "error", "task": task.name(), "kind": e.kind(), "field": field, "message": message, "exit_code": e.exit_code()})
            );
            if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                worst = Some(e);
            }
        }
    }
    match worst {
        None => ExitCode::SUCCESS,
        Some(e) => ExitCode::from(e.exit_code() as u8),
    }
}
