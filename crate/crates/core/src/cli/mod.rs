//! Command-line interface: `generate`, `train`, `eval` and `ablate`.
//!
//! Every command resolves its configuration (defaults, file, `OSTAR_SEED`,
//! then `--set` overrides) and echoes the result as JSON on stderr before
//! doing any work. Exit codes: 0 success, 1 usage or configuration error,
//! 2 runtime failure.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    AblationRow, Availability, EvalMetrics, Sweep, cmd_ablate, cmd_eval, cmd_generate, cmd_train, scatter_csv,
};
pub use config::{CsvPaths, DataConfig, EvalConfig, RunConfig, SEED_ENV, apply_set, from_value, generate, load_data, resolve};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "ostar", version, about = "Optimal-transport domain adaptation under generalized target shift")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `train.lambda_ot=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageFlag {
    /// Alignment with information maximization stages.
    Full,
    /// Alignment and classification only.
    CalOnly,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic source/target CSVs and the monotonicity probe.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.json, metrics.jsonl, report.json.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = StageFlag::Full)]
        stage: StageFlag,
    },
    /// Evaluate a checkpoint on the configured data; prints metrics JSON.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the metrics JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV of 2-D latents with columns domain,class,z1,z2,mapped.
        #[arg(long)]
        export_scatter: Option<PathBuf>,
    },
    /// Sweep settings and seeds; writes one CSV row per run plus summaries.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// JSON sweep file with optional lists lambda_ot, init_gain,
        /// im_enabled and seeds.
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        lambda_ot: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        init_gain: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        im: Option<Vec<bool>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolved(cfg: &ConfigArgs) -> Result<RunConfig> {
    let env = std::env::var(SEED_ENV).ok();
    let c = resolve(cfg.config.as_deref(), &cfg.sets, env.as_deref())?;
    eprintln!("{}", serde_json::to_string_pretty(&c)?);
    Ok(c)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { cfg, out } => {
            let c = resolved(&cfg)?;
            let probe = cmd_generate(&c, &out)?;
            println!("{}", serde_json::to_string(&probe)?);
        }
        Command::Train { cfg, out, stage } => {
            let mut c = resolved(&cfg)?;
            if stage == StageFlag::CalOnly {
                c.train.im_enabled = false;
            }
            let report = cmd_train(&c, &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "source_only_accuracy": report.source_only_accuracy,
                    "final_accuracy": report.final_accuracy,
                    "final_p_n": report.final_p_n,
                    "final_p_n_l1_error": report.final_p_n_l1_error,
                })
            );
        }
        Command::Eval {
            cfg,
            checkpoint,
            out,
            export_scatter,
        } => {
            let c = resolved(&cfg)?;
            let metrics = cmd_eval(&c, &checkpoint, export_scatter.as_deref())?;
            let text = serde_json::to_string_pretty(&metrics)?;
            if let Some(p) = out {
                std::fs::write(&p, &text).map_err(|e| Error::io(&p, e))?;
            }
            println!("{text}");
        }
        Command::Ablate {
            cfg,
            sweep,
            lambda_ot,
            init_gain,
            im,
            seeds,
            out,
        } => {
            let c = resolved(&cfg)?;
            let mut s = match sweep {
                Some(p) => Sweep::load(&p)?,
                None => Sweep::default(),
            };
            s.lambda_ot = lambda_ot.or(s.lambda_ot);
            s.init_gain = init_gain.or(s.init_gain);
            s.im_enabled = im.or(s.im_enabled);
            s.seeds = seeds.or(s.seeds);
            let rows = cmd_ablate(&c, &s, &out)?;
            eprintln!("wrote {} runs to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
