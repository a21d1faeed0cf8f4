//! `fbt <command> --config <file> [--out <dir>] [--seed <u64>] [--threads <k>]`

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::commands::Command;
use crate::error::CliError;
use crate::output::{to_json, OutDir};

#[derive(Parser, Debug)]
#[command(name = "fbt", version, about = "Finsler geodesics, indices and bifurcations")]
struct Args {
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides solver.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps (overrides solver.threads).
    #[arg(long)]
    threads: Option<usize>,
}

fn load(args: &Args) -> Result<config::Config, CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::Read {
        path: args.config.display().to_string(),
        message: e.to_string(),
    })?;
    let mut cfg = config::parse_config(&text)?;
    if let Some(s) = args.seed {
        cfg.solver.seed = s;
    }
    if let Some(t) = args.threads {
        cfg.solver.threads = Some(t);
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FBT_LOG", "warn")).init();
    let args = Args::parse();
    let cfg = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            eprint!("{}", to_json(&e.to_json()));
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(t) = cfg.solver.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    // the output location is not recorded in artifacts, so runs into different directories compare equal
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let mut out = match OutDir::create(&dir) {
        Ok(o) => o,
        Err(e) => {
            eprint!("{}", to_json(&e.to_json()));
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(args.command, &cfg, &mut out) {
        Ok(()) => {
            for p in &out.written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut v = e.to_json();
            v["command"] = serde_json::json!(args.command.name());
            v["config"] = serde_json::to_value(&cfg).expect("config serializes");
            let _ = out.json("error.json", &v);
            v.as_object_mut().expect("object").remove("config");
            eprint!("{}", to_json(&v));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
