use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cyflow::Error;
use serde_json::json;

mod commands;
mod config;
mod formula;

use commands::{Context, Outcome, EXIT_CONFIG};
use config::RunConfig;

/// Conformal curvature flow on flat complex tori.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parent directory for run output; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print sampled rows to stderr.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate the flow and write the time series.
    Flow,
    /// Integrate until the curvature is constant to `params.tol`.
    Steady,
    /// Energy of the bump family over `params.radii`.
    Unbounded,
    /// Lowest Hessian eigenvalue, optionally followed by the saddle run.
    Stability,
    /// Co-evolve and check the sup-norm certificate.
    C0cert,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Steady => "steady",
            Command::Unbounded => "unbounded",
            Command::Stability => "stability",
            Command::C0cert => "c0cert",
        }
    }
}

fn report_error(err: &Error, code: u8, dir: Option<&Path>) {
    let body = json!({
        "error": err.kind(),
        "message": err.to_string(),
        "exit_code": code,
    });
    if let Some(dir) = dir {
        let _ = std::fs::write(dir.join("error.json"), format!("{body:#}\n"));
    }
    eprintln!("{body}");
}

fn prepare(cli: &Cli) -> Result<(RunConfig, PathBuf), Error> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let parent = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let hash = cfg.hash(cli.command.name());
    let dir = parent.join(format!("{}-{}", cli.command.name(), &hash[..16]));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), format!("{:#}\n", json!(cfg)))?;
    Ok((cfg, dir))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, dir) = match prepare(&cli) {
        Ok(v) => v,
        Err(e) => {
            report_error(&e, EXIT_CONFIG, None);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let ctx = Context {
        cfg: &cfg,
        dir: &dir,
        verbose: cli.verbose,
    };
    let result = match cli.command {
        Command::Flow => commands::flow(&ctx),
        Command::Steady => commands::steady(&ctx),
        Command::Unbounded => commands::unbounded(&ctx),
        Command::Stability => commands::stability(&ctx),
        Command::C0cert => commands::c0cert(&ctx),
    };
    match result {
        Ok(Outcome { exit, summary }) => {
            let mut summary = summary;
            summary["command"] = json!(cli.command.name());
            summary["exit_code"] = json!(exit);
            if let Err(e) = std::fs::write(dir.join("summary.json"), format!("{summary:#}\n")) {
                let e = Error::from(e);
                report_error(&e, EXIT_CONFIG, Some(&dir));
                return ExitCode::from(EXIT_CONFIG);
            }
            println!("{}", json!({ "run_dir": dir, "exit_code": exit }));
            ExitCode::from(exit)
        }
        Err(e) => {
            let code = commands::exit_code(&e);
            report_error(&e, code, Some(&dir));
            ExitCode::from(code)
        }
    }
}
