//! Deterministic persona-parameterized policy standing in for a language model.
//!
//! Decision rules, with `t` the persona's cooperation tendency and `u` uniform
//! noise in `[-noise_scale, noise_scale]` drawn from the request seed:
//!
//! * punish iff `t + r + u > 0.5`, with reputational bonus `r` = 0.10 when the
//!   decision is public and 0 otherwise
//! * send `0.3 + 0.25 t + 0.15 [partner punished]` of the endowment
//! * return `0.3 + 0.3 t` of the tripled transfer
//! * contribute `round(10 · clamp(t + bonus + u, 0, 1))`, bonus 0 / 0.15 / 0.25
//!   for basic / gossip / gossip with ostracism (0.30 with discussion)
//! * vote to exclude the lowest known contributor iff they gave less than 3
//!
//! Amounts round half-up to whole units. Component updates return canned text
//! derived from the observation block in the prompt.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BackendError, CompletionRequest, DecisionBackend, Features, RequestKind, Task};
use crate::agent::decision::{ActionSpace, ABSTAIN};
use crate::agent::graph;
use crate::agent::memory::parse_observation_block;
use crate::seed::rng_from;

pub const DEFAULT_NOISE: f64 = 0.15;
pub const VOTE_THRESHOLD: u32 = 3;
pub const NO_NOTE: &str = "no note";
pub const MODEL_ID: &str = "scripted-v1";

/// Per-request policy state.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub tendency: f64,
    pub noise_scale: f64,
    rng: ChaCha8Rng,
}

impl ScriptedPolicy {
    pub fn new(tendency: f64, noise_scale: f64, seed: u64) -> Self {
        ScriptedPolicy { tendency, noise_scale, rng: rng_from(seed) }
    }

    fn noise(&mut self) -> f64 {
        if self.noise_scale > 0.0 {
            self.rng.random_range(-self.noise_scale..=self.noise_scale)
        } else {
            0.0
        }
    }
}

pub fn round_half_up(x: f64) -> u32 {
    (x + 0.5 + 1e-9).floor().max(0.0) as u32
}

pub const PUBLIC_PUNISH_BONUS: f64 = 0.10;

/// Additive cooperation bonus for a public goods condition name.
pub fn condition_bonus(condition: Option<&str>) -> f64 {
    match condition {
        Some("gossip") => 0.15,
        Some("gossip_ostracism") => 0.25,
        Some("discussion") => 0.30,
        _ => 0.0,
    }
}

fn unsupported(task: Task, space: &ActionSpace) -> BackendError {
    BackendError::UnsupportedQuestionKind(format!("{task:?} with {space:?}"))
}

/// Scripted answer text for a decision request.
pub fn scripted_decide(policy: &mut ScriptedPolicy, space: &ActionSpace, features: &Features) -> Result<String, BackendError> {
    let t = policy.tendency;
    match (features.task, space) {
        (Task::Punish, ActionSpace::Binary { yes, no }) => {
            let r = if features.condition.as_deref() == Some("public") { PUBLIC_PUNISH_BONUS } else { 0.0 };
            let punish = t + r + policy.noise() > 0.5;
            Ok(if punish { yes.clone() } else { no.clone() })
        }
        (Task::Send, ActionSpace::Amount { max, .. }) => {
            let bonus = if features.partner_punished == Some(true) { 0.15 } else { 0.0 };
            let frac = 0.3 + 0.25 * t + bonus;
            Ok(format!("I send ${}", round_half_up(frac * f64::from(*max)).min(*max)))
        }
        (Task::Return, ActionSpace::Amount { max, .. }) => {
            let frac = 0.3 + 0.3 * t;
            Ok(format!("I return ${}", round_half_up(frac * f64::from(*max)).min(*max)))
        }
        (Task::Contribute, ActionSpace::Amount { max, .. }) => {
            let share = (t + condition_bonus(features.condition.as_deref()) + policy.noise()).clamp(0.0, 1.0);
            Ok(format!("I contribute {} points", round_half_up(share * f64::from(*max)).min(*max)))
        }
        (Task::Vote, ActionSpace::Vote { candidates }) => {
            let lowest = features
                .peer_contributions
                .iter()
                .filter(|(name, _)| candidates.contains(name))
                .min_by_key(|(_, c)| *c);
            Ok(match lowest {
                Some((name, c)) if *c < VOTE_THRESHOLD => format!("I vote to exclude {name}"),
                _ => ABSTAIN.to_string(),
            })
        }
        (Task::Gossip, ActionSpace::FreeText) => {
            let lowest = features.peer_contributions.iter().min_by_key(|(_, c)| *c);
            Ok(match lowest {
                Some((name, c)) => format!("{name} contributed {c} points this round."),
                None => NO_NOTE.to_string(),
            })
        }
        (Task::Discuss, ActionSpace::FreeText) => {
            Ok(format!("I propose we all contribute {}", round_half_up(10.0 * t)))
        }
        (task, space) => Err(unsupported(task, space)),
    }
}

/// Canned component output, a pure function of the component, the agent and
/// the observation block in the prompt.
pub fn scripted_component(component: &str, agent: &str, tendency: f64, prompt: &str) -> String {
    let observations = parse_observation_block(prompt).unwrap_or_default();
    match component {
        graph::OBSERVATION_SUMMARY | graph::SITUATION_ASSESSMENT if observations.is_empty() => {
            "first round, no history".to_string()
        }
        graph::OBSERVATION_SUMMARY => {
            let tail = observations.len().saturating_sub(3);
            observations[tail..].join("\n")
        }
        graph::SITUATION_ASSESSMENT => format!(
            "{agent} faces a decision after {} observations; most recently: {}",
            observations.len(),
            observations.last().expect("non-empty")
        ),
        graph::PERSONA => format!("{agent} weighs fairness against payoff with a cooperation tendency of {tendency:.2}."),
        graph::THEORY_OF_MIND => format!("{agent} expects others to act in line with what they have done so far."),
        graph::THEORY_OF_MIND_2 => format!("{agent} expects the group to answer cooperation with cooperation."),
        graph::STRATEGIC_REFLECTION => format!("{agent} aims for the highest long-run earnings."),
        graph::EMOTION_REFLECTION => format!("{agent} feels calm about the situation."),
        other => format!("{agent} has nothing to add for {other}."),
    }
}

/// Scripted stand-in for a language-model backend.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    pub noise_scale: f64,
}

impl Default for ScriptedBackend {
    fn default() -> Self {
        ScriptedBackend { noise_scale: DEFAULT_NOISE }
    }
}

impl ScriptedBackend {
    pub fn new(noise_scale: f64) -> Self {
        ScriptedBackend { noise_scale }
    }
}

impl DecisionBackend for ScriptedBackend {
    fn backend_id(&self) -> &str {
        "scripted"
    }

    fn model_id(&self) -> &str {
        MODEL_ID
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        request.validate()?;
        let script = request
            .script
            .as_ref()
            .ok_or_else(|| BackendError::UnsupportedQuestionKind("request without script context".into()))?;
        match &script.kind {
            RequestKind::Component(id) => Ok(scripted_component(id.as_str(), &script.agent, script.tendency, &request.prompt)),
            RequestKind::Decision { space, features } => {
                let mut policy = ScriptedPolicy::new(script.tendency, self.noise_scale, request.seed.unwrap_or(0));
                scripted_decide(&mut policy, space, features)
            }
        }
    }
}
