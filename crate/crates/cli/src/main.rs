//! Thin argument layer over `osda_core::pipeline`.
//!
//! Every subcommand takes an optional flat `key = value` config file and
//! trailing `--key value` overrides; overrides win. Relative output paths
//! resolve against `$OSDA_OUT`. Exit codes: 0 success, 2 configuration
//! error, 3 numerical fault, 4 missing input, 1 anything else.

use clap::{Args, Parser, Subcommand};
use osda_core::pipeline::{
    cmd_adapt_eval, cmd_curve, cmd_gen_data, cmd_report, cmd_train, load_config, resolve_path,
    RunManifest,
};
use osda_core::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "osda", version, about = "one-shot detection adaptation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the output directory if it is not empty.
    #[arg(long)]
    force: bool,
    /// Trailing `--key value` pairs overriding config file entries.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the source splits and shifted target datasets.
    GenData {
        /// Dataset root to create.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain a detector variant on the source splits.
    Train {
        /// Dataset root produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Run directory for checkpoint.bin and metrics.csv.
        #[arg(long)]
        out: PathBuf,
        /// Warm-start checkpoint (required by the meta variants).
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Adapt a checkpoint per image on target datasets and evaluate.
    AdaptEval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target dataset directory; repeat for several domains.
        #[arg(long, required = true)]
        target: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also sweep the full iteration curve per domain.
        #[arg(long)]
        curve: bool,
        #[command(flatten)]
        common: Common,
    },
    /// mAP versus adaptation iterations on one target dataset.
    Curve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Merge adapt-eval runs into one report CSV and chart.
    Report {
        /// adapt-eval output directory; repeat to merge several.
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Replace the output directory if it is not empty.
        #[arg(long)]
        force: bool,
    },
}

fn parse_overrides(tokens: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        let key = tok.strip_prefix("--").ok_or_else(|| {
            Error::Config(format!("override '{tok}' must look like --key value"))
        })?;
        let value = it
            .next()
            .ok_or_else(|| Error::Config(format!("override --{key} is missing a value")))?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}

fn pairs_for(common: &Common) -> Result<Vec<(String, String)>> {
    load_config(common.config.as_deref(), &parse_overrides(&common.overrides)?)
}

fn announce(manifest: &RunManifest, out: &Path) {
    println!(
        "{}: {} artifacts under {}",
        manifest.command,
        manifest.outputs.len(),
        resolve_path(out).display()
    );
    for (label, secs) in &manifest.timings {
        println!("  {label}: {secs:.3}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::GenData { out, common } => {
            let m = cmd_gen_data(&out, &pairs_for(&common)?, common.force)?;
            announce(&m, &out);
        }
        Cmd::Train { data, out, init, common } => {
            let m = cmd_train(&data, &out, &pairs_for(&common)?, init.as_deref(), common.force)?;
            announce(&m, &out);
        }
        Cmd::AdaptEval { checkpoint, target, out, curve, common } => {
            let m = cmd_adapt_eval(
                &checkpoint,
                &target,
                &out,
                &pairs_for(&common)?,
                curve,
                common.force,
            )?;
            announce(&m, &out);
        }
        Cmd::Curve { checkpoint, target, out, common } => {
            let m = cmd_curve(&checkpoint, &target, &out, &pairs_for(&common)?, common.force)?;
            announce(&m, &out);
        }
        Cmd::Report { run, out, force } => {
            let m = cmd_report(&run, &out, force)?;
            announce(&m, &out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
