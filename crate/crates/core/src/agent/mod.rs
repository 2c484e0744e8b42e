//! Generative agents built from a dependency graph of cognitive components.
//!
//! Each component renders its prompt from the observation list and the latest
//! outputs of its dependencies, then asks the backend for fresh text. The
//! decision step concatenates the outputs of the components wired into it,
//! appends the decision-reflection template and an answer-format line, and
//! parses the reply into an action.

pub mod decision;
pub mod graph;
pub mod memory;
pub mod template;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, CompletionRequest, DecisionBackend, Features, RequestKind, ScriptContext};
use crate::personas::Persona;
use crate::seed;
use crate::transcript::{Event, EventLog};
use decision::{parse_decision, ActionSpace, Decision, ParseError};
use graph::{topo_order, ArchitectureConfig, ComponentId, ComponentSpec, GraphError};
use memory::Memory;
use template::TemplateError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("component {component}: {source}")]
    Template { component: String, source: TemplateError },
    #[error("component {component}: {source}")]
    Backend { component: String, source: BackendError },
    #[error("missing state for component {0}")]
    MissingState(ComponentId),
    #[error("no parseable decision after {} attempts", .attempts.len())]
    UnparseableDecision { attempts: Vec<String> },
    #[error("amount {value} exceeds [0, {max}]")]
    BoundsViolation { value: i64, max: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecideOptions {
    /// Extra attempts after the first unparseable reply.
    pub max_retries: u32,
    pub clamp_amounts: bool,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Store assembled action contexts in the transcript.
    pub record_context: bool,
}

impl Default for DecideOptions {
    fn default() -> Self {
        DecideOptions { max_retries: 2, clamp_amounts: false, temperature: 1.0, max_tokens: 512, record_context: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentState {
    pub component_id: ComponentId,
    pub text: String,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionContext {
    pub agent_name: String,
    pub question: String,
    pub assembled: String,
}

/// Values for template placeholders.
#[derive(Debug, Clone, Copy)]
pub struct PromptVars<'a> {
    pub agent_name: &'a str,
    pub persona: &'a Persona,
    pub question: Option<&'a str>,
}

impl PromptVars<'_> {
    pub fn lookup(&self, key: &str) -> Option<String> {
        match key {
            "agent_name" => Some(self.agent_name.to_string()),
            "question" => self.question.map(str::to_string),
            _ => self.persona.field(key.strip_prefix("persona.")?),
        }
    }
}

/// Tagged block for one component output inside a prompt.
pub fn component_block(id: &ComponentId, text: &str) -> String {
    format!("[{id}]\n{text}")
}

/// The prompt for one component: observation list, dependency outputs in
/// declared order, then the rendered template.
pub fn component_prompt(
    spec: &ComponentSpec,
    dep_outputs: &BTreeMap<ComponentId, String>,
    memory: &Memory,
    vars: &PromptVars<'_>,
) -> Result<String, AgentError> {
    let mut parts = vec![memory.render()];
    for dep in &spec.deps {
        let text = dep_outputs.get(dep).ok_or_else(|| AgentError::MissingState(dep.clone()))?;
        parts.push(component_block(dep, text));
    }
    let body = template::render(&spec.prompt_template, |k| vars.lookup(k))
        .map_err(|source| AgentError::Template { component: spec.id.to_string(), source })?;
    parts.push(body);
    Ok(parts.join("\n\n"))
}

/// Runs one component update and returns its new text.
#[allow(clippy::too_many_arguments)]
pub fn update_component(
    spec: &ComponentSpec,
    dep_outputs: &BTreeMap<ComponentId, String>,
    memory: &Memory,
    vars: &PromptVars<'_>,
    backend: &dyn DecisionBackend,
    seed: u64,
    options: &DecideOptions,
    script: Option<ScriptContext>,
) -> Result<String, AgentError> {
    let prompt = component_prompt(spec, dep_outputs, memory, vars)?;
    let request = CompletionRequest {
        prompt,
        temperature: options.temperature,
        max_tokens: options.max_tokens,
        seed: Some(seed),
        script,
    };
    let reply = backend
        .complete(&request)
        .map_err(|source| AgentError::Backend { component: spec.id.to_string(), source })?;
    if spec.include_observations {
        Ok(format!("{}\n{}", memory.render(), reply.trim()))
    } else {
        Ok(reply.trim().to_string())
    }
}

/// Concatenates the action-dependency outputs in config order and appends the
/// decision template with `question` substituted.
pub fn assemble_action_context(
    config: &ArchitectureConfig,
    states: &BTreeMap<ComponentId, ComponentState>,
    vars: &PromptVars<'_>,
) -> Result<ActionContext, AgentError> {
    let question = vars.question.unwrap_or_default();
    let mut parts = Vec::with_capacity(config.action_deps.len() + 1);
    for dep in &config.action_deps {
        let state = states.get(dep).ok_or_else(|| AgentError::MissingState(dep.clone()))?;
        parts.push(component_block(dep, &state.text));
    }
    let reflection = template::render(&config.decision_template, |k| vars.lookup(k))
        .map_err(|source| AgentError::Template { component: "Decision".into(), source })?;
    parts.push(reflection);
    Ok(ActionContext {
        agent_name: vars.agent_name.to_string(),
        question: question.to_string(),
        assembled: parts.join("\n\n"),
    })
}

pub const ANSWER_PREFIX: &str = "Answer with exactly: ";

pub fn decision_prompt(context: &ActionContext, space: &ActionSpace) -> String {
    format!("{}\n{}{}", context.assembled, ANSWER_PREFIX, space.format_hint())
}

fn retry_prompt(context: &ActionContext, space: &ActionSpace, previous: &str) -> String {
    format!(
        "{}\n\nYour previous answer could not be used: \"{}\". Reformat it.\n{}{}",
        context.assembled,
        previous.trim(),
        ANSWER_PREFIX,
        space.format_hint()
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionOutcome {
    pub decision: Decision,
    pub attempts: Vec<String>,
}

/// Samples and grounds a decision, re-asking with a reformatting instruction
/// up to `options.max_retries` times.
pub fn decide(
    context: &ActionContext,
    space: &ActionSpace,
    backend: &dyn DecisionBackend,
    seed: u64,
    options: &DecideOptions,
    script: Option<ScriptContext>,
) -> Result<DecisionOutcome, (AgentError, Vec<String>)> {
    if *space == ActionSpace::None {
        return Ok(DecisionOutcome { decision: Decision::None, attempts: Vec::new() });
    }
    let mut attempts: Vec<String> = Vec::new();
    let mut last_err = ParseError::NoAnswer;
    for attempt in 0..=options.max_retries {
        let prompt = match attempts.last() {
            None => decision_prompt(context, space),
            Some(prev) => retry_prompt(context, space, prev),
        };
        let request = CompletionRequest {
            prompt,
            temperature: options.temperature,
            max_tokens: options.max_tokens,
            seed: Some(seed::derive_index(seed, "decision", u64::from(attempt))),
            script: script.clone(),
        };
        let reply = match backend.complete(&request) {
            Ok(r) => r,
            Err(source) => {
                return Err((AgentError::Backend { component: "Decision".into(), source }, attempts));
            }
        };
        let parsed = parse_decision(&reply, space, options.clamp_amounts);
        attempts.push(reply);
        match parsed {
            Ok(decision) => return Ok(DecisionOutcome { decision, attempts }),
            Err(e) => last_err = e,
        }
    }
    let err = match last_err {
        ParseError::OutOfBounds { value, max } => AgentError::BoundsViolation { value, max },
        ParseError::NoAnswer => AgentError::UnparseableDecision { attempts: attempts.clone() },
    };
    Err((err, attempts))
}

/// One generative agent: persona, architecture, memory and component states.
#[derive(Debug, Clone)]
pub struct Agent {
    pub name: String,
    pub persona: Persona,
    config: Arc<ArchitectureConfig>,
    order: Vec<ComponentId>,
    memory: Memory,
    states: BTreeMap<ComponentId, ComponentState>,
    clock: u64,
    options: DecideOptions,
}

impl Agent {
    pub fn new(persona: Persona, config: Arc<ArchitectureConfig>, options: DecideOptions) -> Result<Self, AgentError> {
        config.validate()?;
        let order = topo_order(&config)?;
        Ok(Agent {
            name: persona.name.clone(),
            persona,
            config,
            order,
            memory: Memory::new(),
            states: BTreeMap::new(),
            clock: 0,
            options,
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn memory(&self) -> &Memory {
        &self.memory
    }

    pub fn states(&self) -> &BTreeMap<ComponentId, ComponentState> {
        &self.states
    }

    pub fn observe(&mut self, text: &str, log: &mut EventLog) {
        let t = self.clock;
        self.clock += 1;
        self.memory.push(t, text);
        let stored = self.memory.entries().last().expect("just pushed").text.clone();
        log.push(Event::Observation { agent: self.name.clone(), t, text: stored });
    }

    fn vars<'a>(&'a self, question: Option<&'a str>) -> PromptVars<'a> {
        PromptVars { agent_name: &self.name, persona: &self.persona, question }
    }

    fn script(&self, kind: RequestKind) -> ScriptContext {
        ScriptContext { agent: self.name.clone(), tendency: self.persona.cooperation_tendency, kind }
    }

    /// Recomputes every component once, in dependency order.
    pub fn refresh(&mut self, backend: &dyn DecisionBackend, seed: u64, log: &mut EventLog) -> Result<(), AgentError> {
        for id in self.order.clone() {
            let spec = self.config.component(&id).expect("order comes from config").clone();
            let deps: BTreeMap<ComponentId, String> = spec
                .deps
                .iter()
                .map(|d| {
                    self.states
                        .get(d)
                        .map(|s| (d.clone(), s.text.clone()))
                        .ok_or_else(|| AgentError::MissingState(d.clone()))
                })
                .collect::<Result<_, _>>()?;
            let text = update_component(
                &spec,
                &deps,
                &self.memory,
                &self.vars(None),
                backend,
                seed::derive(seed, &format!("component:{id}")),
                &self.options,
                Some(self.script(RequestKind::Component(id.clone()))),
            )?;
            let step = self.states.get(&id).map_or(1, |s| s.step + 1);
            log.push(Event::ComponentUpdate { agent: self.name.clone(), component: id.clone(), step, text: text.clone() });
            self.states.insert(id.clone(), ComponentState { component_id: id, text, step });
        }
        Ok(())
    }

    /// A full decision point: refresh components, assemble the context, decide.
    pub fn act(
        &mut self,
        question: &str,
        space: &ActionSpace,
        features: Features,
        backend: &dyn DecisionBackend,
        seed: u64,
        log: &mut EventLog,
    ) -> Result<Decision, AgentError> {
        let task = features.task;
        if *space == ActionSpace::None {
            return Ok(Decision::None);
        }
        self.refresh(backend, seed::derive(seed, "refresh"), log)?;
        let context = assemble_action_context(&self.config, &self.states, &self.vars(Some(question)))?;
        let script = self.script(RequestKind::Decision { space: space.clone(), features });
        let recorded_context = self.options.record_context.then(|| context.assembled.clone());
        match decide(&context, space, backend, seed::derive(seed, "decide"), &self.options, Some(script)) {
            Ok(out) => {
                log.push(Event::Decision {
                    agent: self.name.clone(),
                    task,
                    question: question.to_string(),
                    context: recorded_context,
                    attempts: out.attempts,
                    decision: Some(out.decision.clone()),
                    error: None,
                });
                Ok(out.decision)
            }
            Err((err, attempts)) => {
                log.push(Event::Decision {
                    agent: self.name.clone(),
                    task,
                    question: question.to_string(),
                    context: recorded_context,
                    attempts,
                    decision: None,
                    error: Some(err.to_string()),
                });
                Err(err)
            }
        }
    }
}
