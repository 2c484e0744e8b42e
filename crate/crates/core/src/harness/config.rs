//! Experiment configuration files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::agent::graph::{ArchitectureConfig, ArchitectureFile, ArchitectureName};
use crate::agent::DecideOptions;
use crate::backends::cache::CachingBackend;
use crate::backends::remote::{RemoteBackend, RemoteConfig};
use crate::backends::scripted::{ScriptedBackend, DEFAULT_NOISE};
use crate::backends::DecisionBackend;
use crate::personas::{default_pool, load_personas, Persona};
use crate::pgg::PggCondition;
use crate::tpp::TppCondition;
use crate::Study;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Scripted {
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Remote(RemoteConfig),
    /// Strict replay from a recorded cache under the recording backend's identity.
    Replay { cache: PathBuf, backend_id: String, model_id: String },
}

fn default_noise() -> f64 {
    DEFAULT_NOISE
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Scripted { noise: DEFAULT_NOISE }
    }
}

impl BackendSpec {
    /// Instantiates the backend. Remote backends read their credential from
    /// the environment here.
    pub fn build(&self) -> Result<Arc<dyn DecisionBackend>, HarnessError> {
        Ok(match self {
            BackendSpec::Scripted { noise } => Arc::new(ScriptedBackend::new(*noise)),
            BackendSpec::Remote(cfg) => Arc::new(RemoteBackend::from_env(cfg.clone())?),
            BackendSpec::Replay { cache, backend_id, model_id } => {
                Arc::new(CachingBackend::replay(cache, backend_id, model_id)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: Study,
    /// Condition names; every condition runs `n` replicas.
    pub conditions: Vec<String>,
    pub architecture: ArchitectureName,
    /// Games (TPP) or 24-agent sessions (PGG) per condition.
    pub n: u64,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub backend: BackendSpec,
    /// Architecture file; the shipped one for the study when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture_file: Option<PathBuf>,
    /// Persona pool file; the shipped pool when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decide: Option<DecideOptions>,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Defaults for `study`: every tabled condition and the Social architecture.
    pub fn new(study: Study, n: u64, seed: u64) -> Self {
        let conditions = match study {
            Study::Tpp => vec!["public".into(), "private".into()],
            Study::Pgg => vec!["basic".into(), "gossip".into(), "gossip_ostracism".into()],
        };
        ExperimentConfig {
            study,
            conditions,
            architecture: ArchitectureName::Social,
            n,
            seed,
            output_dir: default_output(),
            backend: BackendSpec::default(),
            architecture_file: None,
            persona_file: None,
            workers: None,
            decide: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // Relative data paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.architecture_file, &mut cfg.persona_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that can be checked without calling a backend.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n == 0 {
            return Err(HarnessError::Config("n must be at least 1".into()));
        }
        if self.conditions.is_empty() {
            return Err(HarnessError::Config("at least one condition is required".into()));
        }
        self.parsed_conditions()?;
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.conditions {
            if !seen.insert(c) {
                return Err(HarnessError::Config(format!("condition {c} listed twice")));
            }
        }
        if self.workers == Some(0) {
            return Err(HarnessError::Config("workers must be positive".into()));
        }
        if let BackendSpec::Scripted { noise } = self.backend {
            if !(0.0..=1.0).contains(&noise) {
                return Err(HarnessError::Config(format!("scripted noise {noise} outside [0, 1]")));
            }
        }
        let arch = self.architecture_config()?;
        if arch.study != self.study {
            return Err(HarnessError::Config(format!("architecture file is for {}, config is for {}", arch.study, self.study)));
        }
        self.personas()?;
        Ok(())
    }

    pub fn parsed_conditions(&self) -> Result<Vec<Condition>, HarnessError> {
        self.conditions.iter().map(|c| Condition::parse(self.study, c)).collect()
    }

    pub fn architecture_config(&self) -> Result<ArchitectureConfig, HarnessError> {
        let file = match &self.architecture_file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                ArchitectureFile::parse(&text)?
            }
            None => ArchitectureFile::builtin(self.study),
        };
        let cfg = file.architecture(self.architecture)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn personas(&self) -> Result<Vec<Persona>, HarnessError> {
        Ok(match &self.persona_file {
            Some(p) => load_personas(p)?,
            None => default_pool(),
        })
    }

    pub fn decide_options(&self) -> DecideOptions {
        self.decide.clone().unwrap_or_else(|| DecideOptions {
            // PGG sessions make thousands of decisions; keep their transcripts small.
            record_context: self.study == Study::Tpp,
            ..DecideOptions::default()
        })
    }

    /// Hash of everything that affects outcomes. Output location and worker
    /// count are excluded.
    pub fn run_id(&self) -> Result<String, HarnessError> {
        let arch = self.architecture_config()?;
        let personas = self.personas()?;
        let snapshot = serde_json::json!({
            "schema": crate::transcript::SCHEMA_VERSION,
            "study": self.study,
            "conditions": self.conditions,
            "architecture": arch,
            "personas": personas,
            "n": self.n,
            "seed": self.seed,
            "backend": self.backend_identity(),
            "decide": self.decide_options(),
        });
        let digest = Sha256::digest(snapshot.to_string().as_bytes());
        Ok(format!("{}-{}-{}", self.study, self.architecture, &hex::encode(digest)[..12]))
    }

    /// Backend fields that affect completions (not credentials or endpoints'
    /// retry tuning).
    fn backend_identity(&self) -> serde_json::Value {
        match &self.backend {
            BackendSpec::Scripted { noise } => serde_json::json!({"kind": "scripted", "noise": noise}),
            BackendSpec::Remote(c) => serde_json::json!({"kind": "remote", "model": c.model, "endpoint": c.endpoint, "system": c.system_prompt}),
            BackendSpec::Replay { backend_id, model_id, .. } => {
                serde_json::json!({"kind": "replay", "backend": backend_id, "model": model_id})
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Condition {
    Tpp(TppCondition),
    Pgg(PggCondition),
}

impl Condition {
    pub fn parse(study: Study, name: &str) -> Result<Self, HarnessError> {
        match study {
            Study::Tpp => name.parse().map(Condition::Tpp),
            Study::Pgg => name.parse().map(Condition::Pgg),
        }
        .map_err(HarnessError::Config)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Tpp(c) => c.as_str(),
            Condition::Pgg(c) => c.as_str(),
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_remote_configs() {
        let cfg = ExperimentConfig::parse(
            r#"
            study = "tpp"
            conditions = ["public"]
            architecture = "social"
            n = 10
            seed = 1
            "#,
        )
        .unwrap();
        assert_eq!(cfg.backend, BackendSpec::Scripted { noise: DEFAULT_NOISE });
        cfg.validate().unwrap();

        let cfg = ExperimentConfig::parse(
            r#"
            study = "pgg"
            conditions = ["basic", "discussion"]
            architecture = "social_strategic"
            n = 5
            seed = 1
            [backend]
            kind = "remote"
            endpoint = "https://example.invalid/v1/chat/completions"
            model = "some-model"
            requests_per_second = 2.0
            "#,
        )
        .unwrap();
        let BackendSpec::Remote(r) = &cfg.backend else { panic!("remote expected") };
        assert_eq!(r.api_key_env, crate::backends::remote::DEFAULT_KEY_ENV);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ExperimentConfig::new(Study::Tpp, 10, 1);
        cfg.conditions = vec!["gossip".into()];
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        cfg = ExperimentConfig::new(Study::Pgg, 0, 1);
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::parse("study = \"tpp\"\nbogus = 1").is_err());
    }

    #[test]
    fn run_id_ignores_output_location() {
        let a = ExperimentConfig::new(Study::Tpp, 10, 1);
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.workers = Some(3);
        assert_eq!(a.run_id().unwrap(), b.run_id().unwrap());
        b.seed = 2;
        assert_ne!(a.run_id().unwrap(), b.run_id().unwrap());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut a = ExperimentConfig::new(Study::Pgg, 5, 9);
        a.workers = Some(2);
        assert_eq!(ExperimentConfig::parse(&a.to_toml()).unwrap(), a);
    }
}
