use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gabm_core::agent::graph::ArchitectureName;
use gabm_core::backends::remote::RemoteConfig;
use gabm_core::harness::reference::ReferenceTable;
use gabm_core::harness::report::{report, ReportOptions, RunSet};
use gabm_core::harness::{self, replay, BackendSpec, ExperimentConfig};
use gabm_core::Study;

/// Exit status when some replicas failed.
const EXIT_FAILURES: u8 = 3;
/// Exit status when a replay differs from the recording.
const EXIT_DIFFS: u8 = 4;

#[derive(Parser)]
#[command(name = "gabm", version, about = "Generative agent experiments: trust game with third-party punishment and public goods game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicas and write transcripts, cache, manifest and outcomes.
    Run(RunArgs),
    /// Compute statistics over finished runs and compare with reference values.
    Report(ReportArgs),
    /// Re-execute a run offline from its cache and diff the outcomes.
    Replay(ReplayArgs),
    /// Check a config file without running anything.
    ValidateConfig {
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    study: Option<Study>,
    /// Condition to run; repeat for several. Defaults to all tabled conditions.
    #[arg(long = "condition")]
    conditions: Vec<String>,
    #[arg(long)]
    architecture: Option<ArchitectureName>,
    /// Games (tpp) or sessions (pgg) per condition.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Chat-completions URL for the remote backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name for the remote backend.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories of one study and architecture.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Reference table; the shipped one by default.
    #[arg(long, conflicts_with = "no_reference")]
    reference: Option<PathBuf>,
    /// Statistics only, without comparison columns.
    #[arg(long)]
    no_reference: bool,
    /// Fail when an analysis cannot be computed.
    #[arg(long)]
    strict: bool,
    /// Where to write report.json and report.md; the first run directory by default.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    run: PathBuf,
    /// Replay under this config instead of the recorded one.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn build_config(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&a.config, a.study) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(study)) => ExperimentConfig::new(study, default_n(study), 42),
        (None, None) => bail!("give --config or --study"),
    };
    if let Some(study) = a.study {
        if study != cfg.study {
            cfg.study = study;
            cfg.conditions = ExperimentConfig::new(study, 1, 0).conditions;
        }
    }
    if !a.conditions.is_empty() {
        cfg.conditions = a.conditions.clone();
    }
    if let Some(arch) = a.architecture {
        cfg.architecture = arch;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    match a.backend {
        Some(BackendKind::Scripted) => cfg.backend = BackendSpec::default(),
        Some(BackendKind::Remote) => {
            let mut remote = match &cfg.backend {
                BackendSpec::Remote(r) => r.clone(),
                _ => {
                    let (Some(endpoint), Some(model)) = (&a.endpoint, &a.model) else {
                        bail!("--backend remote needs --endpoint and --model (or a [backend] table in the config)");
                    };
                    RemoteConfig::new(endpoint.clone(), model.clone())
                }
            };
            if let Some(e) = &a.endpoint {
                remote.endpoint = e.clone();
            }
            if let Some(m) = &a.model {
                remote.model = m.clone();
            }
            cfg.backend = BackendSpec::Remote(remote);
        }
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_n(study: Study) -> u64 {
    match study {
        Study::Tpp => 100,
        Study::Pgg => 5,
    }
}

fn run_cmd(a: RunArgs) -> Result<ExitCode> {
    let cfg = build_config(&a)?;
    let summary = harness::run(&cfg)?;
    println!("run {}", summary.run_id);
    println!("directory {}", summary.run_dir.display());
    println!(
        "replicas {} succeeded {} failed {} (resumed {})",
        summary.total, summary.succeeded, summary.failed, summary.resumed
    );
    if summary.failed > 0 {
        eprintln!("{} replicas failed; see manifest.json. Rerun the same command to retry them.", summary.failed);
        return Ok(ExitCode::from(EXIT_FAILURES));
    }
    Ok(ExitCode::SUCCESS)
}

fn report_cmd(a: ReportArgs) -> Result<ExitCode> {
    let reference = match (&a.reference, a.no_reference) {
        (_, true) => ReferenceTable::default(),
        (Some(path), false) => ReferenceTable::load(path)?,
        (None, false) => ReferenceTable::builtin(),
    };
    let set = RunSet::load(&a.runs)?;
    let rep = report(&set, &ReportOptions { reference, strict: a.strict })?;
    let dir = a.output_dir.clone().unwrap_or_else(|| a.runs[0].clone());
    let (json, md) = rep.write(&dir)?;
    print!("{}", rep.to_markdown());
    eprintln!("wrote {} and {}", json.display(), md.display());
    for m in &rep.missing {
        log::warn!("not computed: {} ({})", m.analysis, m.reason);
    }
    Ok(ExitCode::SUCCESS)
}

fn replay_cmd(a: ReplayArgs) -> Result<ExitCode> {
    let cfg = a.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let rep = replay::replay(&a.run, cfg.as_ref())?;
    println!("run {}: replayed {} replicas, {} diffs", rep.run_id, rep.replayed, rep.diffs.len());
    for d in &rep.diffs {
        println!("{} replica {} at {:?}: recorded {} replayed {}", d.condition, d.replica, d.path, d.recorded, d.replayed);
    }
    Ok(if rep.is_clean() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_DIFFS) })
}

fn validate_cmd(path: PathBuf) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(&path)?;
    cfg.validate().with_context(|| format!("{} is invalid", path.display()))?;
    println!("{}: ok (run id {})", path.display(), cfg.run_id()?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Replay(a) => replay_cmd(a),
        Command::ValidateConfig { config } => validate_cmd(config),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
