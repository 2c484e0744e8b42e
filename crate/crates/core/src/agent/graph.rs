//! Cognitive component graphs and architecture configurations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Study;

pub const OBSERVATION_SUMMARY: &str = "ObservationSummary";
pub const SITUATION_ASSESSMENT: &str = "SituationAssessment";
pub const PERSONA: &str = "Persona";
pub const THEORY_OF_MIND: &str = "TheoryOfMind";
pub const THEORY_OF_MIND_2: &str = "TheoryOfMind2";
pub const STRATEGIC_REFLECTION: &str = "StrategicReflection";
pub const EMOTION_REFLECTION: &str = "EmotionReflection";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(pub String);

impl ComponentId {
    pub fn new(id: impl Into<String>) -> Self {
        ComponentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ComponentId {
    fn from(s: &str) -> Self {
        ComponentId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub id: ComponentId,
    pub prompt_template: String,
    #[serde(default)]
    pub deps: Vec<ComponentId>,
    /// Prefix the component's output with the full observation list.
    #[serde(default)]
    pub include_observations: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureName {
    Base,
    Social,
    SocialStrategic,
    SocialEmotion,
    /// Persona without theory of mind.
    PersonaOnly,
    NoTomNoPersona,
}

impl ArchitectureName {
    pub const ALL: [ArchitectureName; 6] = [
        ArchitectureName::Base,
        ArchitectureName::Social,
        ArchitectureName::SocialStrategic,
        ArchitectureName::SocialEmotion,
        ArchitectureName::PersonaOnly,
        ArchitectureName::NoTomNoPersona,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchitectureName::Base => "base",
            ArchitectureName::Social => "social",
            ArchitectureName::SocialStrategic => "social_strategic",
            ArchitectureName::SocialEmotion => "social_emotion",
            ArchitectureName::PersonaOnly => "persona_only",
            ArchitectureName::NoTomNoPersona => "no_tom_no_persona",
        }
    }
}

impl fmt::Display for ArchitectureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ArchitectureName {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArchitectureName::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| GraphError::UnknownArchitecture(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("dependency cycle: {}", join_ids(.0))]
    CycleDetected(Vec<ComponentId>),
    #[error("component {component} depends on unknown component {missing}")]
    UnknownDependency { component: ComponentId, missing: ComponentId },
    #[error("duplicate component id {0}")]
    DuplicateComponent(ComponentId),
    #[error("action dependency {0} is not a component of the architecture")]
    UnknownActionDependency(ComponentId),
    #[error("architecture {0} must contain ObservationSummary")]
    MissingObservationSummary(ArchitectureName),
    #[error("base architecture must consist of exactly ObservationSummary and SituationAssessment")]
    BaseShape,
    #[error("architecture {0} has no action dependencies")]
    EmptyActionDeps(ArchitectureName),
    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),
    #[error("architecture file: {0}")]
    Parse(String),
    #[error("architecture file does not define {0}")]
    NotDefined(ArchitectureName),
    #[error("reading architecture file: {0}")]
    Io(String),
}

fn join_ids(ids: &[ComponentId]) -> String {
    ids.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(" -> ")
}

/// Components, their templates and dependency edges, plus the edges into the
/// decision step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub name: ArchitectureName,
    pub study: Study,
    pub components: Vec<ComponentSpec>,
    pub action_deps: Vec<ComponentId>,
    pub decision_template: String,
}

impl ArchitectureConfig {
    pub fn component(&self, id: &ComponentId) -> Option<&ComponentSpec> {
        self.components.iter().find(|c| &c.id == id)
    }

    pub fn has_component(&self, id: &str) -> bool {
        self.components.iter().any(|c| c.id.as_str() == id)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let mut seen = HashSet::new();
        for c in &self.components {
            if !seen.insert(&c.id) {
                return Err(GraphError::DuplicateComponent(c.id.clone()));
            }
        }
        topo_order(self)?;
        if self.action_deps.is_empty() {
            return Err(GraphError::EmptyActionDeps(self.name));
        }
        for dep in &self.action_deps {
            if !seen.contains(dep) {
                return Err(GraphError::UnknownActionDependency(dep.clone()));
            }
        }
        if !self.has_component(OBSERVATION_SUMMARY) {
            return Err(GraphError::MissingObservationSummary(self.name));
        }
        if self.name == ArchitectureName::Base {
            let mut ids: Vec<&str> = self.components.iter().map(|c| c.id.as_str()).collect();
            ids.sort_unstable();
            if ids != [OBSERVATION_SUMMARY, SITUATION_ASSESSMENT] {
                return Err(GraphError::BaseShape);
            }
        }
        Ok(())
    }

    /// Loads the named architecture from an architecture file.
    pub fn load(path: &Path, name: ArchitectureName) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
        ArchitectureFile::parse(&text)?.architecture(name)
    }

    /// The shipped configuration for `study`.
    pub fn builtin(study: Study, name: ArchitectureName) -> Result<Self, GraphError> {
        ArchitectureFile::builtin(study).architecture(name)
    }
}

/// Evaluation order: every component after its dependencies, ties broken by
/// declaration order.
pub fn topo_order(config: &ArchitectureConfig) -> Result<Vec<ComponentId>, GraphError> {
    let index: HashMap<&ComponentId, usize> =
        config.components.iter().enumerate().map(|(i, c)| (&c.id, i)).collect();
    for c in &config.components {
        for d in &c.deps {
            if !index.contains_key(d) {
                return Err(GraphError::UnknownDependency { component: c.id.clone(), missing: d.clone() });
            }
        }
    }
    let n = config.components.len();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let next = (0..n).find(|&i| !done[i] && config.components[i].deps.iter().all(|d| done[index[d]]));
        match next {
            Some(i) => {
                done[i] = true;
                order.push(config.components[i].id.clone());
            }
            None => return Err(GraphError::CycleDetected(find_cycle(config, &index, &done))),
        }
    }
    Ok(order)
}

/// Walks dependency edges from the first unfinished node until a node repeats.
fn find_cycle(config: &ArchitectureConfig, index: &HashMap<&ComponentId, usize>, done: &[bool]) -> Vec<ComponentId> {
    let start = done.iter().position(|d| !d).expect("a node remains");
    let mut path = vec![start];
    let mut cur = start;
    loop {
        let next = config.components[cur]
            .deps
            .iter()
            .map(|d| index[d])
            .find(|&j| !done[j])
            .expect("an unfinished node in a stuck graph has an unfinished dependency");
        if let Some(pos) = path.iter().position(|&p| p == next) {
            let mut cycle: Vec<usize> = path[pos..].to_vec();
            // Report the cycle in dependency direction, starting at its earliest-declared node.
            cycle.reverse();
            let min = cycle.iter().enumerate().min_by_key(|(_, &v)| v).map(|(i, _)| i).unwrap_or(0);
            cycle.rotate_left(min);
            return cycle.into_iter().map(|i| config.components[i].id.clone()).collect();
        }
        path.push(next);
        cur = next;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComponentEntry {
    template: String,
    #[serde(default)]
    deps: Vec<ComponentId>,
    #[serde(default)]
    include_observations: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArchitectureEntry {
    components: Vec<ComponentId>,
    action_deps: Vec<ComponentId>,
}

/// A study's component templates together with the architectures built from them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchitectureFile {
    pub study: Study,
    decision_template: String,
    components: BTreeMap<ComponentId, ComponentEntry>,
    architectures: BTreeMap<ArchitectureName, ArchitectureEntry>,
}

impl ArchitectureFile {
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let file: ArchitectureFile = toml::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
        for name in file.architectures.keys() {
            file.architecture(*name)?;
        }
        Ok(file)
    }

    pub fn builtin(study: Study) -> Self {
        let text = match study {
            Study::Tpp => include_str!("../../data/architectures/tpp.toml"),
            Study::Pgg => include_str!("../../data/architectures/pgg.toml"),
        };
        Self::parse(text).expect("bundled architecture file is valid")
    }

    pub fn names(&self) -> Vec<ArchitectureName> {
        self.architectures.keys().copied().collect()
    }

    pub fn architecture(&self, name: ArchitectureName) -> Result<ArchitectureConfig, GraphError> {
        let entry = self.architectures.get(&name).ok_or(GraphError::NotDefined(name))?;
        let components = entry
            .components
            .iter()
            .map(|id| {
                let c = self.components.get(id).ok_or_else(|| GraphError::UnknownDependency {
                    component: ComponentId::new(name.as_str()),
                    missing: id.clone(),
                })?;
                Ok(ComponentSpec {
                    id: id.clone(),
                    prompt_template: c.template.clone(),
                    deps: c.deps.clone(),
                    include_observations: c.include_observations,
                })
            })
            .collect::<Result<Vec<_>, GraphError>>()?;
        let config = ArchitectureConfig {
            name,
            study: self.study,
            components,
            action_deps: entry.action_deps.clone(),
            decision_template: self.decision_template.clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(id: &str, deps: &[&str]) -> ComponentSpec {
        ComponentSpec {
            id: id.into(),
            prompt_template: format!("{id}?"),
            deps: deps.iter().map(|d| ComponentId::from(*d)).collect(),
            include_observations: false,
        }
    }

    fn config(components: Vec<ComponentSpec>) -> ArchitectureConfig {
        ArchitectureConfig {
            name: ArchitectureName::Social,
            study: Study::Tpp,
            action_deps: vec![components[0].id.clone()],
            components,
            decision_template: "{question}".into(),
        }
    }

    fn ids(v: &[ComponentId]) -> Vec<&str> {
        v.iter().map(|c| c.as_str()).collect()
    }

    #[test]
    fn base_order() {
        let base = ArchitectureConfig::builtin(Study::Tpp, ArchitectureName::Base).unwrap();
        assert_eq!(ids(&topo_order(&base).unwrap()), [OBSERVATION_SUMMARY, SITUATION_ASSESSMENT]);
    }

    #[test]
    fn social_order_follows_declaration_after_summary() {
        let social = ArchitectureConfig::builtin(Study::Tpp, ArchitectureName::Social).unwrap();
        let order = topo_order(&social).unwrap();
        assert_eq!(order[0].as_str(), OBSERVATION_SUMMARY);
        let declared: Vec<_> = social.components.iter().map(|c| c.id.clone()).collect();
        assert_eq!(order, declared);
    }

    #[test]
    fn tie_break_uses_declaration_order() {
        let c = config(vec![spec("C", &["A"]), spec("B", &[]), spec("A", &[])]);
        assert_eq!(ids(&topo_order(&c).unwrap()), ["B", "A", "C"]);
    }

    #[test]
    fn two_cycle_is_reported() {
        let c = config(vec![spec("A", &["B"]), spec("B", &["A"])]);
        assert_eq!(topo_order(&c), Err(GraphError::CycleDetected(vec!["A".into(), "B".into()])));
    }

    #[test]
    fn unknown_dependency_is_named() {
        let c = config(vec![spec("A", &["Ghost"])]);
        assert_eq!(
            topo_order(&c),
            Err(GraphError::UnknownDependency { component: "A".into(), missing: "Ghost".into() })
        );
    }

    #[test]
    fn builtin_files_define_all_architectures() {
        for study in [Study::Tpp, Study::Pgg] {
            let file = ArchitectureFile::builtin(study);
            assert_eq!(file.names(), ArchitectureName::ALL.to_vec());
            for name in ArchitectureName::ALL {
                let cfg = file.architecture(name).unwrap();
                assert!(cfg.has_component(OBSERVATION_SUMMARY));
            }
        }
        let pgg = ArchitectureConfig::builtin(Study::Pgg, ArchitectureName::Social).unwrap();
        assert!(pgg.has_component(THEORY_OF_MIND_2));
        let tpp = ArchitectureConfig::builtin(Study::Tpp, ArchitectureName::Social).unwrap();
        assert!(!tpp.has_component(THEORY_OF_MIND_2));
        let ablation = ArchitectureConfig::builtin(Study::Tpp, ArchitectureName::PersonaOnly).unwrap();
        assert!(!ablation.has_component(THEORY_OF_MIND));
    }

    #[test]
    fn base_must_have_exact_shape() {
        let mut base = ArchitectureConfig::builtin(Study::Tpp, ArchitectureName::Base).unwrap();
        base.components.push(spec(PERSONA, &[OBSERVATION_SUMMARY]));
        assert_eq!(base.validate(), Err(GraphError::BaseShape));
    }

    #[test]
    fn action_deps_must_be_components() {
        let mut c = ArchitectureConfig::builtin(Study::Tpp, ArchitectureName::Base).unwrap();
        c.action_deps.push(THEORY_OF_MIND.into());
        assert_eq!(c.validate(), Err(GraphError::UnknownActionDependency(THEORY_OF_MIND.into())));
    }

    /// Brute-force reachability: a cycle exists iff some node reaches itself.
    fn has_cycle_by_reachability(n: usize, edges: &[(usize, usize)]) -> bool {
        let mut reach = vec![vec![false; n]; n];
        for &(a, b) in edges {
            reach[a][b] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        (0..n).any(|i| reach[i][i])
    }

    proptest! {
        #[test]
        fn topo_succeeds_iff_acyclic(n in 1usize..=8, raw in prop::collection::vec((0usize..8, 0usize..8), 0..20)) {
            let edges: Vec<(usize, usize)> = raw.into_iter().filter(|(a, b)| *a < n && *b < n).collect();
            let names: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
            let comps: Vec<ComponentSpec> = (0..n)
                .map(|i| {
                    let mut deps: Vec<&str> = edges.iter().filter(|(a, _)| *a == i).map(|(_, b)| names[*b].as_str()).collect();
                    deps.dedup();
                    spec(&names[i], &deps)
                })
                .collect();
            let cfg = config(comps);
            let result = topo_order(&cfg);
            prop_assert_eq!(result.is_ok(), !has_cycle_by_reachability(n, &edges));
            match result {
                Ok(order) => {
                    let pos: HashMap<&ComponentId, usize> = order.iter().enumerate().map(|(i, c)| (c, i)).collect();
                    for c in &cfg.components {
                        for d in &c.deps {
                            prop_assert!(pos[d] < pos[&c.id]);
                        }
                    }
                }
                Err(GraphError::CycleDetected(cycle)) => {
                    // Each consecutive pair is a dependency edge, closing back to the start.
                    for w in 0..cycle.len() {
                        let from = &cycle[w];
                        let to = &cycle[(w + 1) % cycle.len()];
                        let c = cfg.component(to).unwrap();
                        prop_assert!(c.deps.contains(from));
                    }
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
