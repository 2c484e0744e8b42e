//! Transcript events: one JSON object per line, schema-versioned.

use serde::{Deserialize, Serialize};

use crate::agent::decision::Decision;
use crate::agent::graph::ComponentId;
use crate::backends::Task;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Observation {
        agent: String,
        t: u64,
        text: String,
    },
    ComponentUpdate {
        agent: String,
        component: ComponentId,
        step: u64,
        text: String,
    },
    Decision {
        agent: String,
        task: Task,
        question: String,
        /// Assembled action context, when context recording is on.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        context: Option<String>,
        /// Raw backend replies, one per attempt.
        attempts: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decision: Option<Decision>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Payoff {
        agent: String,
        amount: f64,
        label: String,
    },
    /// Something that deviated from the happy path, e.g. an unparseable vote
    /// treated as an abstention.
    Flag {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<String>,
        kind: String,
        detail: String,
    },
}

/// In-memory event log for one game or session.
pub type EventLog = Vec<Event>;

pub fn flag(log: &mut EventLog, agent: Option<&str>, kind: &str, detail: impl Into<String>) {
    log.push(Event::Flag { agent: agent.map(str::to_string), kind: kind.to_string(), detail: detail.into() });
}

impl Event {
    pub fn agent(&self) -> Option<&str> {
        match self {
            Event::Observation { agent, .. }
            | Event::ComponentUpdate { agent, .. }
            | Event::Decision { agent, .. }
            | Event::Payoff { agent, .. } => Some(agent),
            Event::Flag { agent, .. } => agent.as_deref(),
        }
    }

    /// Text the event's agent could see: observations, its own component
    /// outputs, decision contexts and questions.
    pub fn visible_text(&self) -> Vec<&str> {
        match self {
            Event::Observation { text, .. } | Event::ComponentUpdate { text, .. } => vec![text],
            Event::Decision { question, context, .. } => {
                let mut v = vec![question.as_str()];
                if let Some(c) = context {
                    v.push(c);
                }
                v
            }
            _ => Vec::new(),
        }
    }
}
