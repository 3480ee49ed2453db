//! Command-line front end: `train`, `eval`, `ablate`, `export-gates` and
//! `make-toy`. Exit codes: 0 success, 1 runtime failure, 2 usage or
//! configuration error.

pub mod args;
pub mod commands;
pub mod config;
mod error;

pub use error::{CliError, CliResult};

use args::{Cli, Command, ConfigArgs, RunArgs};
use config::RunConfig;

fn build_config(c: &ConfigArgs, run: Option<&RunArgs>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &c.config {
        cfg.apply_file(path)?;
    }
    if let Some(dir) = &c.data {
        cfg.data_dir = Some(dir.clone());
        cfg.toy = None;
    }
    if let Some(n) = c.toy {
        cfg.toy = Some(n);
    }
    if let Some(s) = c.toy_seed {
        cfg.toy_seed = s;
    }
    cfg.apply_overrides(&c.set)?;
    if let Some(run) = run {
        if let Some(seed) = run.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        if let Some(e) = run.epochs {
            cfg.train.epochs = e;
        }
        if let Some(r) = run.runs {
            cfg.runs = r;
        }
    }
    Ok(cfg)
}

/// Executes a parsed command line, printing results to stdout.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, run, out } => {
            let cfg = build_config(&config, Some(&run))?;
            let report = commands::cmd_train(&cfg, &out)?;
            print!("{}", report.to_text());
        }
        Command::Eval {
            checkpoint,
            config,
            split,
            out,
        } => {
            let cfg = build_config(&config, None)?;
            let split = split.parse()?;
            let r = commands::cmd_eval(&checkpoint, &cfg, split, out.as_deref())?;
            let m = r.metrics;
            println!(
                "split = {}\nn_queries = {}\nmrr = {:.6}\nhits1 = {:.6}\nhits3 = {:.6}\nhits10 = {:.6}",
                r.split,
                r.n_queries(),
                m.mrr,
                m.hits1,
                m.hits3,
                m.hits10
            );
        }
        Command::Ablate {
            mode,
            grid,
            config,
            run,
            out,
        } => {
            let cfg = build_config(&config, Some(&run))?;
            let report = commands::cmd_ablate(&cfg, mode.parse()?, &grid, &out)?;
            print!("{}", report.to_text());
        }
        Command::ExportGates {
            checkpoint,
            config,
            out,
            all_splits,
        } => {
            let cfg = build_config(&config, None)?;
            let rows = commands::cmd_export_gates(&checkpoint, &cfg, &out, all_splits)?;
            println!("wrote {rows} gate rows to {}", out.display());
        }
        Command::MakeToy { n, seed, out } => {
            let dir = commands::cmd_make_toy(n, seed, &out)?;
            println!("wrote toy graph to {}", dir.display());
        }
    }
    Ok(())
}
