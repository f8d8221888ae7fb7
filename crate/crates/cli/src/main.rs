//! `mpcl` — message-passing simulation of contrastive learning dynamics.
//!
//! Subcommands: `synth`, `run`, `analyze`, `check`. Each takes an optional
//! `--config <path>` (flat `key = value` file) plus any number of
//! `--set key=value` overrides.

use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod config;
mod io;
mod svg;

use config::RunConfig;

const USAGE: &str = "\
usage: mpcl <command> [--config <path>] [--set key=value]...

commands:
  synth     generate a synthetic Gaussian-mixture point cloud and its
            threshold graph (points.csv, labels.csv, graph.edges)
  run       run the configured dynamics and write trajectory.csv,
            features_final.csv, snapshots/*.csv and plot.svg
  analyze   report clustering metrics and the equilibrium residual for a
            saved features/graph/labels triple
  check     run the numerical verifier suite; exit 1 if any check fails

exit codes: 0 success, 1 check failure, 2 config error, 3 divergence
";

struct Args {
    command: String,
    config_path: Option<PathBuf>,
    overrides: Vec<(String, String)>,
}

fn parse_args() -> Result<Args, String> {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.is_empty() {
        return Err("missing command".into());
    }
    let command = argv[0].clone();
    let mut config_path = None;
    let mut overrides = Vec::new();
    let mut i = 1;
    while i < argv.len() {
        match argv[i].as_str() {
            "--config" => {
                let v = argv.get(i + 1).ok_or("--config needs a path")?;
                config_path = Some(PathBuf::from(v));
                i += 2;
            }
            "--set" => {
                let v = argv.get(i + 1).ok_or("--set needs key=value")?;
                let (k, val) = v
                    .split_once('=')
                    .ok_or_else(|| format!("--set expects key=value, got '{v}'"))?;
                overrides.push((k.trim().to_string(), val.trim().to_string()));
                i += 2;
            }
            other => return Err(format!("unknown argument '{other}'")),
        }
    }
    Ok(Args {
        command,
        config_path,
        overrides,
    })
}

fn main() -> ExitCode {
    let args = match parse_args() {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}\n{USAGE}");
            return ExitCode::from(2);
        }
    };

    let cfg = match RunConfig::load(args.config_path.as_deref(), &args.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let result = match args.command.as_str() {
        "synth" => commands::cmd_synth(&cfg),
        "run" => commands::cmd_run(&cfg),
        "analyze" => commands::cmd_analyze(&cfg),
        "check" => commands::cmd_check(&cfg),
        other => {
            eprintln!("error: unknown command '{other}'\n{USAGE}");
            return ExitCode::from(2);
        }
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
