//! Experiment orchestration: replicas, transcripts, checkpoints and outcomes.
//!
//! A run directory holds
//!
//! ```text
//! <output>/<run id>/
//!   manifest.json          config snapshot, backend identity, replica status
//!   cache.jsonl            every completion the run used
//!   transcripts/<condition>/<replica>.jsonl
//!   outcomes.jsonl         one line per successful replica, in a fixed order
//! ```
//!
//! Replica transcripts are written to a temporary name and renamed when the
//! replica finishes, so an existing transcript is a finished replica. A rerun
//! of the same config skips finished replicas.

pub mod config;
pub mod reference;
pub mod replay;
pub mod report;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::graph::{ArchitectureConfig, ArchitectureName, GraphError};
use crate::agent::DecideOptions;
use crate::backends::cache::CachingBackend;
use crate::backends::{BackendError, DecisionBackend};
use crate::personas::{Persona, PersonaError};
use crate::pgg::{self, PggOutcome, PggParams};
use crate::stats::StatsError;
use crate::tpp::{self, TppOutcome, TppParams};
use crate::transcript::{Event, SCHEMA_VERSION};
use crate::{seed, Study};
pub use config::{BackendSpec, Condition, ExperimentConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("reference table: {0}")]
    Reference(String),
    #[error("replay refused: {0}")]
    ConfigMismatch(String),
    #[error("missing analysis {analysis}: {reason}")]
    MissingAnalysis { analysis: String, reason: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl HarnessError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Tpp(TppOutcome),
    Pgg(PggOutcome),
}

/// One line of `outcomes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub study: Study,
    pub architecture: ArchitectureName,
    pub condition: Condition,
    pub replica: u64,
    pub seed: u64,
    pub outcome: Outcome,
}

/// One line of a replica transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TranscriptLine {
    Header {
        schema_version: u32,
        run_id: String,
        study: Study,
        architecture: ArchitectureName,
        condition: Condition,
        replica: u64,
        seed: u64,
    },
    Event(Event),
    Outcome(OutcomeRecord),
    Failure { error: String },
}

impl TranscriptLine {
    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaStatus {
    pub condition: Condition,
    pub replica: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub run_id: String,
    pub config: ExperimentConfig,
    pub architecture_config: ArchitectureConfig,
    pub backend_id: String,
    pub model_id: String,
    pub replicas_total: u64,
    pub complete: bool,
    pub succeeded: u64,
    pub failures: Vec<ReplicaStatus>,
}

pub const MANIFEST: &str = "manifest.json";
pub const OUTCOMES: &str = "outcomes.jsonl";
pub const CACHE: &str = "cache.jsonl";
pub const TRANSCRIPTS: &str = "transcripts";

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self, HarnessError> {
        let path = run_dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Parse { path, line: e.line(), message: e.to_string() })
    }
}

pub fn transcript_path(run_dir: &Path, condition: Condition, replica: u64) -> PathBuf {
    run_dir.join(TRANSCRIPTS).join(condition.as_str()).join(format!("{replica:05}.jsonl"))
}

/// Result of one replica: its outcome or error text, plus the event log.
pub struct ReplicaRun {
    pub result: Result<Outcome, String>,
    pub events: Vec<Event>,
}

/// Everything a replica needs besides its index.
pub struct RunContext {
    pub study: Study,
    pub architecture: Arc<ArchitectureConfig>,
    pub personas: Vec<Persona>,
    pub options: DecideOptions,
    pub backend: Arc<dyn DecisionBackend>,
}

impl RunContext {
    pub fn run_replica(&self, condition: Condition, replica_seed: u64) -> ReplicaRun {
        match condition {
            Condition::Tpp(c) => {
                let params = TppParams::new(c);
                let (r, events) =
                    tpp::tpp_game(&self.architecture, &params, &self.personas, &*self.backend, &self.options, replica_seed);
                ReplicaRun { result: r.map(Outcome::Tpp).map_err(|e| e.to_string()), events }
            }
            Condition::Pgg(c) => {
                let params = PggParams::new(c);
                let (r, events) =
                    pgg::run_session(&params, &self.architecture, &self.personas, &*self.backend, &self.options, replica_seed);
                ReplicaRun { result: r.map(Outcome::Pgg).map_err(|e| e.to_string()), events }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after this many newly executed replicas, leaving the run
    /// incomplete (used to exercise resumption).
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub total: u64,
    pub succeeded: u64,
    pub failed: u64,
    /// Replicas found finished on disk and not rerun.
    pub resumed: u64,
    pub complete: bool,
}

/// Runs `config` with the backend it names.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    run_with(config, config.backend.build()?, &RunOptions::default())
}

/// Runs `config` against `backend`, recording completions in the run's cache.
pub fn run_with(
    config: &ExperimentConfig,
    backend: Arc<dyn DecisionBackend>,
    opts: &RunOptions,
) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let run_id = config.run_id()?;
    let run_dir = config.output_dir.join(&run_id);
    std::fs::create_dir_all(&run_dir).map_err(|e| HarnessError::io(&run_dir, e))?;
    let recorder = Arc::new(CachingBackend::record(backend, run_dir.join(CACHE))?);
    let ctx = RunContext {
        study: config.study,
        architecture: Arc::new(config.architecture_config()?),
        personas: config.personas()?,
        options: config.decide_options(),
        backend: recorder.clone(),
    };
    let conditions = config.parsed_conditions()?;
    let jobs: Vec<(Condition, u64)> =
        conditions.iter().flat_map(|c| (0..config.n).map(move |i| (*c, i))).collect();

    let mut finished: Vec<Option<Result<OutcomeRecord, String>>> =
        jobs.iter().map(|(c, i)| read_finished(&transcript_path(&run_dir, *c, *i))).collect::<Result<_, _>>()?;
    let resumed = finished.iter().filter(|f| matches!(f, Some(Ok(_)))).count() as u64;
    let mut pending: Vec<usize> = (0..jobs.len()).filter(|&j| !matches!(finished[j], Some(Ok(_)))).collect();
    if let Some(k) = opts.stop_after {
        pending.truncate(k);
    }
    log::info!("run {run_id}: {} replicas, {resumed} already finished, {} to run", jobs.len(), pending.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let fresh: Vec<(usize, Result<Result<OutcomeRecord, String>, HarnessError>)> = pool.install(|| {
        pending
            .par_iter()
            .map(|&j| {
                let (condition, replica) = jobs[j];
                (j, execute_replica(&ctx, &run_dir, &run_id, config, condition, replica))
            })
            .collect()
    });
    for (j, r) in fresh {
        finished[j] = Some(r?);
    }

    let complete = finished.iter().all(Option::is_some);
    let mut failures = Vec::new();
    let mut outcomes = Vec::new();
    for ((condition, replica), f) in jobs.iter().zip(&finished) {
        match f {
            Some(Ok(rec)) => outcomes.push(rec),
            Some(Err(error)) => failures.push(ReplicaStatus {
                condition: *condition,
                replica: *replica,
                seed: seed::replica(config.seed, *replica),
                error: Some(error.clone()),
            }),
            None => {}
        }
    }
    if complete {
        write_outcomes(&run_dir.join(OUTCOMES), &outcomes)?;
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        run_id: run_id.clone(),
        config: config.clone(),
        architecture_config: (*ctx.architecture).clone(),
        backend_id: recorder.backend_id().to_string(),
        model_id: recorder.model_id().to_string(),
        replicas_total: jobs.len() as u64,
        complete,
        succeeded: outcomes.len() as u64,
        failures: failures.clone(),
    };
    write_json(&run_dir.join(MANIFEST), &manifest)?;
    Ok(RunSummary {
        run_id,
        run_dir,
        total: jobs.len() as u64,
        succeeded: outcomes.len() as u64,
        failed: failures.len() as u64,
        resumed,
        complete,
    })
}

fn execute_replica(
    ctx: &RunContext,
    run_dir: &Path,
    run_id: &str,
    config: &ExperimentConfig,
    condition: Condition,
    replica: u64,
) -> Result<Result<OutcomeRecord, String>, HarnessError> {
    let replica_seed = seed::replica(config.seed, replica);
    let run = ctx.run_replica(condition, replica_seed);
    let result = run.result.map(|outcome| OutcomeRecord {
        study: config.study,
        architecture: config.architecture,
        condition,
        replica,
        seed: replica_seed,
        outcome,
    });
    if let Err(e) = &result {
        log::warn!("{condition} replica {replica} failed: {e}");
    }
    let header = TranscriptLine::Header {
        schema_version: SCHEMA_VERSION,
        run_id: run_id.to_string(),
        study: config.study,
        architecture: config.architecture,
        condition,
        replica,
        seed: replica_seed,
    };
    let last = match &result {
        Ok(rec) => TranscriptLine::Outcome(rec.clone()),
        Err(error) => TranscriptLine::Failure { error: error.clone() },
    };
    let lines = std::iter::once(header).chain(run.events.into_iter().map(TranscriptLine::Event)).chain([last]);
    write_transcript(&transcript_path(run_dir, condition, replica), lines)?;
    Ok(result)
}

fn write_transcript(path: &Path, lines: impl Iterator<Item = TranscriptLine>) -> Result<(), HarnessError> {
    let dir = path.parent().expect("transcript path has a parent");
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let tmp = path.with_extension("jsonl.tmp");
    let file = File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        serde_json::to_writer(&mut w, &line).map_err(|e| HarnessError::io(&tmp, e.into()))?;
        w.write_all(b"\n").map_err(|e| HarnessError::io(&tmp, e))?;
    }
    w.into_inner().map_err(|e| HarnessError::io(&tmp, e.into_error()))?.sync_all().map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// The final record of a finished transcript, if the transcript exists.
fn read_finished(path: &Path) -> Result<Option<Result<OutcomeRecord, String>>, HarnessError> {
    if !path.exists() {
        return Ok(None);
    }
    let lines = read_transcript(path)?;
    match lines.last() {
        Some(TranscriptLine::Outcome(rec)) => Ok(Some(Ok(rec.clone()))),
        Some(TranscriptLine::Failure { error }) => Ok(Some(Err(error.clone()))),
        _ => Ok(None),
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptLine>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = TranscriptLine::from_line(&line).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn write_outcomes(path: &Path, outcomes: &[&OutcomeRecord]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for rec in outcomes {
        text.push_str(&serde_json::to_string(rec).expect("serializable"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_outcomes(path: &Path) -> Result<Vec<OutcomeRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Transcript scan over a finished run: Private-condition choosers seeing a
/// punishment disclosure, and delivered gossip naming its author.
pub fn scan_run(run_dir: &Path) -> Result<Vec<String>, HarnessError> {
    let manifest = Manifest::load(run_dir)?;
    let mut violations = Vec::new();
    for condition in manifest.config.parsed_conditions()? {
        for replica in 0..manifest.config.n {
            let path = transcript_path(run_dir, condition, replica);
            if !path.exists() {
                continue;
            }
            let lines = read_transcript(&path)?;
            let events: Vec<Event> = lines
                .iter()
                .filter_map(|l| match l {
                    TranscriptLine::Event(e) => Some(e.clone()),
                    _ => None,
                })
                .collect();
            let found = match lines.last() {
                Some(TranscriptLine::Outcome(OutcomeRecord { outcome: Outcome::Tpp(o), .. })) => {
                    tpp::isolation_violations(o, &events)
                }
                Some(TranscriptLine::Outcome(OutcomeRecord { outcome: Outcome::Pgg(o), .. })) => {
                    pgg::anonymity_violations(o, &events)
                }
                _ => Vec::new(),
            };
            violations.extend(found.into_iter().map(|v| format!("{}: {v}", path.display())));
        }
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(study: Study, dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(study, 3, 7);
        cfg.output_dir = dir.to_path_buf();
        if study == Study::Pgg {
            cfg.n = 1;
            cfg.conditions = vec!["gossip_ostracism".into()];
        }
        cfg
    }

    #[test]
    fn transcript_lines_round_trip() {
        let line = TranscriptLine::Event(Event::Observation { agent: "A".into(), t: 0, text: "hi".into() });
        let text = serde_json::to_string(&line).unwrap();
        assert_eq!(TranscriptLine::from_line(&text).unwrap(), line);
    }

    #[test]
    fn run_resume_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(Study::Tpp, &dir.path().join("a"));
        let full = run(&cfg).unwrap();
        assert!(full.complete);
        assert_eq!(full.succeeded, 6);

        let cfg_b = small(Study::Tpp, &dir.path().join("b"));
        let backend = cfg_b.backend.build().unwrap();
        let part = run_with(&cfg_b, backend.clone(), &RunOptions { stop_after: Some(2) }).unwrap();
        assert!(!part.complete);
        assert!(!part.run_dir.join(OUTCOMES).exists());
        let rest = run_with(&cfg_b, backend, &RunOptions::default()).unwrap();
        assert_eq!(rest.resumed, 2);
        assert!(rest.complete);
        let a = std::fs::read(full.run_dir.join(OUTCOMES)).unwrap();
        let b = std::fs::read(rest.run_dir.join(OUTCOMES)).unwrap();
        assert_eq!(a, b);
        assert!(scan_run(&full.run_dir).unwrap().is_empty());
    }

    #[test]
    fn pgg_run_scans_clean() {
        let dir = tempfile::tempdir().unwrap();
        let s = run(&small(Study::Pgg, dir.path())).unwrap();
        assert_eq!((s.succeeded, s.failed), (1, 0));
        assert!(scan_run(&s.run_dir).unwrap().is_empty());
        let outcomes = read_outcomes(&s.run_dir.join(OUTCOMES)).unwrap();
        assert!(matches!(outcomes[0].outcome, Outcome::Pgg(_)));
    }
}
