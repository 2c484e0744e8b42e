//! Published reference values that reports compare against.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::stats::{Direction, TrendClass};

/// Table and section keys an entry may cite.
pub const CITATIONS: [&str; 5] = ["tpp-regressions", "pgg-conditions", "pgg-trends", "tpp-text", "pgg-text"];

pub const POPULATIONS: [&str; 6] =
    ["human", "social", "social_strategic", "social_emotion", "persona_only", "no_tom_no_persona"];

/// Analysis ids the report can produce.
pub const ANALYSES: [&str; 21] = [
    "tpp.sent.coefficient",
    "tpp.sent.t_test",
    "tpp.sent.punishers",
    "tpp.sent.non_punishers",
    "tpp.returned.coefficient",
    "tpp.returned.t_test",
    "tpp.returned.punishers",
    "tpp.returned.non_punishers",
    "tpp.punish_rate.chi2",
    "tpp.punish_rate.public",
    "tpp.punish_rate.private",
    "pgg.overall.anova",
    "pgg.pairwise.gossip_vs_basic",
    "pgg.pairwise.ostracism_vs_basic",
    "pgg.pairwise.ostracism_vs_gossip",
    "pgg.mean.basic",
    "pgg.mean.gossip",
    "pgg.mean.gossip_ostracism",
    "pgg.trend.basic",
    "pgg.trend.gossip",
    "pgg.trend.gossip_ostracism",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefKind {
    Slope,
    T,
    F,
    Chi2,
    Mean,
    /// A percentage of games.
    Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceEntry {
    pub id: String,
    pub analysis: String,
    pub population: String,
    pub citation: String,
    pub kind: RefKind,
    pub statistic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    /// Reported as `p < p_bound`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significant: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<TrendClass>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceTable {
    #[serde(default, rename = "entry")]
    pub entries: Vec<ReferenceEntry>,
}

const BUILTIN: &str = include_str!("../../data/reference.toml");

impl ReferenceTable {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let table: ReferenceTable =
            toml::from_str(text).map_err(|e| HarnessError::Reference(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            HarnessError::Reference(m) => HarnessError::Reference(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The shipped table.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("shipped reference table is valid")
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            let bad = |what: &str| Err(HarnessError::Reference(format!("entry {:?}: {what}", e.id)));
            if e.id.is_empty() {
                return bad("empty id");
            }
            if !ids.insert(e.id.as_str()) {
                return bad("duplicate id");
            }
            if !CITATIONS.contains(&e.citation.as_str()) {
                return bad(&format!("unknown citation {:?}", e.citation));
            }
            if !POPULATIONS.contains(&e.population.as_str()) {
                return bad(&format!("unknown population {:?}", e.population));
            }
            if !ANALYSES.contains(&e.analysis.as_str()) {
                return bad(&format!("unknown analysis {:?}", e.analysis));
            }
            if !e.statistic.is_finite() {
                return bad("statistic is not finite");
            }
            let probs = [e.p_value, e.p_bound].into_iter().flatten();
            if probs.into_iter().any(|p| !(0.0..=1.0).contains(&p)) {
                return bad("p outside [0, 1]");
            }
        }
        Ok(())
    }

    /// Entries for `analysis` from any of `populations`, in table order.
    pub fn matching(&self, analysis: &str, populations: &[&str]) -> Vec<&ReferenceEntry> {
        self.entries
            .iter()
            .filter(|e| e.analysis == analysis && populations.contains(&e.population.as_str()))
            .collect()
    }
}
