//! Re-executes a recorded run from its completion cache and diffs the outcomes.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{read_outcomes, Condition, ExperimentConfig, HarnessError, Manifest, RunContext, CACHE, OUTCOMES};
use crate::backends::cache::CachingBackend;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDiff {
    pub condition: Condition,
    pub replica: u64,
    /// JSON pointer to the first differing field, or "" for the whole record.
    pub path: String,
    pub recorded: Value,
    pub replayed: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub run_id: String,
    pub replayed: u64,
    pub diffs: Vec<ReplayDiff>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.diffs.is_empty()
    }
}

/// Replays the run in `run_dir`. With `config`, refuses if that config would
/// build a different architecture or run than the one recorded.
pub fn replay(run_dir: &Path, config: Option<&ExperimentConfig>) -> Result<ReplayReport, HarnessError> {
    let manifest = Manifest::load(run_dir)?;
    if !manifest.complete {
        return Err(HarnessError::Config(format!("run {} is incomplete", manifest.run_id)));
    }
    let cfg = config.unwrap_or(&manifest.config);
    if cfg.study != manifest.config.study {
        return Err(HarnessError::ConfigMismatch(format!("study {} vs recorded {}", cfg.study, manifest.config.study)));
    }
    let arch = cfg.architecture_config()?;
    if arch != manifest.architecture_config {
        return Err(HarnessError::ConfigMismatch(format!(
            "architecture {} differs from the recorded {} configuration",
            arch.name, manifest.architecture_config.name
        )));
    }
    let run_id = cfg.run_id()?;
    if run_id != manifest.run_id {
        return Err(HarnessError::ConfigMismatch(format!("config hashes to {run_id}, recorded run is {}", manifest.run_id)));
    }

    let backend = CachingBackend::replay(run_dir.join(CACHE), &manifest.backend_id, &manifest.model_id)?;
    let ctx = RunContext {
        study: cfg.study,
        architecture: Arc::new(arch),
        personas: cfg.personas()?,
        options: cfg.decide_options(),
        backend: Arc::new(backend),
    };
    let recorded = read_outcomes(&run_dir.join(OUTCOMES))?;
    let mut diffs: Vec<ReplayDiff> = recorded
        .par_iter()
        .filter_map(|rec| {
            let replica_seed = seed::replica(cfg.seed, rec.replica);
            let mut replayed = match ctx.run_replica(rec.condition, replica_seed).result {
                Ok(outcome) => {
                    let mut r = rec.clone();
                    r.seed = replica_seed;
                    r.outcome = outcome;
                    serde_json::to_value(&r).expect("serializes")
                }
                Err(e) => serde_json::json!({ "error": e }),
            };
            let mut original = serde_json::to_value(rec).expect("serializes");
            let path = first_difference(&original, &replayed)?;
            if !path.is_empty() {
                original = original.pointer(&path).cloned().unwrap_or(Value::Null);
                replayed = replayed.pointer(&path).cloned().unwrap_or(Value::Null);
            }
            Some(ReplayDiff { condition: rec.condition, replica: rec.replica, path, recorded: original, replayed })
        })
        .collect();
    diffs.sort_by_key(|a| (a.condition, a.replica));
    Ok(ReplayReport { run_id: manifest.run_id, replayed: recorded.len() as u64, diffs })
}

/// JSON pointer of the first difference between two values, `None` if equal.
pub fn first_difference(a: &Value, b: &Value) -> Option<String> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: BTreeMap<&String, ()> = x.keys().chain(y.keys()).map(|k| (k, ())).collect();
            for k in keys.keys() {
                match (x.get(*k), y.get(*k)) {
                    (Some(u), Some(v)) => {
                        if let Some(p) = first_difference(u, v) {
                            return Some(format!("/{}{p}", escape(k)));
                        }
                    }
                    _ => return Some(format!("/{}", escape(k))),
                }
            }
            None
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).enumerate().find_map(|(i, (u, v))| first_difference(u, v).map(|p| format!("/{i}{p}")))
        }
        _ if a == b => None,
        _ => Some(String::new()),
    }
}

fn escape(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}
