//! Command-line runner: parses flags, resolves the configuration (file,
//! `--seed`, `--set` overrides, derived stage seeds), runs one stage and
//! writes a manifest hashing every artifact.

pub mod config;
pub mod manifest;
pub mod stages;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use diffaudit::error::{Category, Error};

use config::ExperimentConfig;
use manifest::{ArtifactDir, RunManifest, CSV_FORMAT_VERSION, MANIFEST_VERSION};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "DIFFAUDIT_OUT";
const DEFAULT_OUT: &str = "diffaudit-out";

#[derive(Debug, Parser)]
#[command(
    name = "diffaudit",
    version,
    about = "Train desk-scale diffusion models and audit them for memorization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config, or a run manifest to replay.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $DIFFAUDIT_OUT, else ./diffaudit-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dotted-path override such as `train.steps=2000`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run single-threaded. Results never depend on thread count; this only
    /// removes scheduling from the picture.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train one model and save its checkpoint.
    Train,
    /// Sample images from a model.
    Generate,
    /// Generate-and-filter extraction scan.
    Extract,
    /// Shadow ensemble plus leave-one-out LiRA and the loss-threshold attack.
    Mia,
    /// LiRA success across timesteps.
    #[command(name = "sweep-t")]
    SweepT,
    /// LiRA success across training checkpoints.
    Progress,
    /// Inpainting reconstruction attack.
    Inpaint,
    /// Deduplicate and compare extraction before and after.
    Dedup,
    /// Canary insertion and exposure audit.
    Canary,
    /// Summarize finished runs in the output directory.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Generate => "generate",
            Command::Extract => "extract",
            Command::Mia => "mia",
            Command::SweepT => "sweep-t",
            Command::Progress => "progress",
            Command::Inpaint => "inpaint",
            Command::Dedup => "dedup",
            Command::Canary => "canary",
            Command::Report => "report",
        }
    }
}

/// Everything a finished run produced.
#[derive(Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
}

/// Resolves the effective configuration for `cli`.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let base = match &cli.config {
        None => ExperimentConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let doc: serde_json::Value = serde_json::from_str(&text)?;
            if RunManifest::looks_like(&doc) {
                let m: RunManifest = serde_json::from_value(doc)?;
                if m.subcommand != cli.command.name() {
                    return Err(Error::Config(format!(
                        "manifest records a `{}` run, not `{}`",
                        m.subcommand,
                        cli.command.name()
                    )));
                }
                m.config
            } else {
                serde_json::from_value(doc)?
            }
        }
    };
    let mut cfg = base.with_overrides(&cli.sets)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<RunOutput, Error> {
    let mut cfg = resolve_config(cli)?;
    let stage_seeds = cfg.fan_out_seeds();
    let dir = out_dir(cli);
    let threads = if cli.deterministic {
        Some(1)
    } else {
        cli.threads
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Argument("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::State(format!("thread pool: {e}")))?;
    let mut out = ArtifactDir::create(&dir)?;
    log::info!("{} -> {}", cli.command.name(), dir.display());
    pool.install(|| run_stage(cli.command, &cfg, &mut out))?;
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        tool: format!("diffaudit {}", env!("CARGO_PKG_VERSION")),
        subcommand: cli.command.name().into(),
        master_seed: cfg.seed,
        stage_seeds,
        csv_format_version: CSV_FORMAT_VERSION,
        config: cfg,
        artifacts: out.hashes()?,
    };
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    std::fs::write(dir.join(RunManifest::file_name(cli.command.name())), text)?;
    Ok(RunOutput {
        out_dir: dir,
        manifest,
    })
}

fn run_stage(cmd: Command, cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<(), Error> {
    match cmd {
        Command::Train => stages::run_train(cfg, out),
        Command::Generate => stages::run_generate(cfg, out),
        Command::Extract => stages::run_extract(cfg, out),
        Command::Mia => stages::run_mia(cfg, out),
        Command::SweepT => stages::run_sweep_t(cfg, out),
        Command::Progress => stages::run_progress(cfg, out),
        Command::Inpaint => stages::run_inpaint(cfg, out),
        Command::Dedup => stages::run_dedup(cfg, out),
        Command::Canary => stages::run_canary(cfg, out),
        Command::Report => stages::run_report(cfg, out),
    }
}

/// Parses `args`, runs, and returns the process exit code. Failures print a
/// one-line JSON error with its category to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                Category::Argument.exit_code()
            } else {
                0
            };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(r) => {
            println!(
                "{}",
                r.out_dir
                    .join(RunManifest::file_name(cli.command.name()))
                    .display()
            );
            0
        }
        Err(e) => {
            report_error(&e);
            e.category().exit_code()
        }
    }
}

fn report_error(e: &Error) {
    let line = serde_json::json!({ "error": { "category": e.category().as_str(), "message": e.to_string() } });
    eprintln!("{line}");
}

/// Reads a manifest written by [`run`].
pub fn read_manifest(path: &Path) -> Result<RunManifest, Error> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
