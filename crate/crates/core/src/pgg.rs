//! Repeated public goods game with gossip, ostracism and discussion.
//!
//! Each round agents are regrouped, receive last round's gossip about their
//! new partners, optionally talk and vote to exclude a groupmate, contribute,
//! see the results, and optionally write gossip for the next round.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::decision::{last_number, parse_decision, ActionSpace, Decision};
use crate::agent::graph::ArchitectureConfig;
use crate::agent::{Agent, AgentError, DecideOptions};
use crate::backends::{DecisionBackend, Features, Task};
use crate::personas::{assign_personas, Persona, PersonaError};
use crate::seed;
use crate::transcript::{flag, Event, EventLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PggCondition {
    Basic,
    Gossip,
    GossipOstracism,
    Discussion,
}

impl PggCondition {
    pub const ALL: [PggCondition; 4] =
        [PggCondition::Basic, PggCondition::Gossip, PggCondition::GossipOstracism, PggCondition::Discussion];

    pub fn as_str(self) -> &'static str {
        match self {
            PggCondition::Basic => "basic",
            PggCondition::Gossip => "gossip",
            PggCondition::GossipOstracism => "gossip_ostracism",
            PggCondition::Discussion => "discussion",
        }
    }

    pub fn has_gossip(self) -> bool {
        self != PggCondition::Basic
    }

    pub fn has_ostracism(self) -> bool {
        matches!(self, PggCondition::GossipOstracism | PggCondition::Discussion)
    }

    pub fn has_discussion(self) -> bool {
        self == PggCondition::Discussion
    }
}

impl std::str::FromStr for PggCondition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        PggCondition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown PGG condition {s:?} (expected basic, gossip, gossip_ostracism or discussion)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PggParams {
    pub n_agents: usize,
    pub group_size: usize,
    pub rounds: usize,
    pub allotment: u32,
    pub multiplier_full: f64,
    pub multiplier_ostracism: f64,
    pub condition: PggCondition,
    pub ostracism_threshold: usize,
}

impl PggParams {
    pub fn new(condition: PggCondition) -> Self {
        PggParams {
            n_agents: 24,
            group_size: 4,
            rounds: 6,
            allotment: 10,
            multiplier_full: 2.0,
            multiplier_ostracism: 1.5,
            condition,
            ostracism_threshold: 2,
        }
    }

    pub fn validate(&self) -> Result<(), PggError> {
        let bad = |m: String| Err(PggError::Params(m));
        if self.group_size < 2 || self.n_agents == 0 || !self.n_agents.is_multiple_of(self.group_size) {
            return bad(format!("{} agents cannot be split into groups of {}", self.n_agents, self.group_size));
        }
        if self.rounds == 0 || self.allotment == 0 || self.ostracism_threshold == 0 {
            return bad("rounds, allotment and ostracism threshold must be positive".into());
        }
        if !(self.multiplier_full > 0.0 && self.multiplier_ostracism > 0.0) {
            return bad("multipliers must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PggError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("contribution {value} outside [0, {max}]")]
    BoundsViolation { value: u32, max: u32 },
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error("round {round}, {agent}: {source}")]
    Agent { round: usize, agent: String, source: AgentError },
    #[error("round {round}, {agent}: expected a {expected} decision")]
    WrongDecision { round: usize, agent: String, expected: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipNote {
    pub author: String,
    pub subject: String,
    pub text: String,
    pub target_round: usize,
}

/// A note as it reached its recipients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipDelivery {
    pub author: String,
    pub subject: String,
    /// The observation text recipients saw, author redacted.
    pub text: String,
    pub recipients: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscussionMessage {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub groups: Vec<Vec<String>>,
    pub gossip_delivered: Vec<GossipDelivery>,
    pub discussion_log: Vec<DiscussionMessage>,
    /// Voter to chosen groupmate; `None` is an abstention.
    pub votes: BTreeMap<String, Option<String>>,
    pub ostracized: BTreeSet<String>,
    pub contributions: BTreeMap<String, u32>,
    pub earnings: BTreeMap<String, f64>,
    pub gossip_sent: Vec<GossipNote>,
}

/// A finished session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PggOutcome {
    pub condition: PggCondition,
    pub agents: Vec<AgentSummary>,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub name: String,
    pub tendency: f64,
    /// Contributions summed over all rounds; excluded rounds count as 0.
    pub contribution_sum: u32,
    pub earnings_sum: f64,
}

impl PggOutcome {
    /// Mean contribution per round over the agents who contributed.
    pub fn round_means(&self) -> Vec<f64> {
        self.rounds
            .iter()
            .map(|r| {
                let n = r.contributions.len().max(1) as f64;
                r.contributions.values().map(|c| f64::from(*c)).sum::<f64>() / n
            })
            .collect()
    }
}

/// Earnings of each member: `(allotment - c_i) + multiplier * sum(c) / n`.
pub fn compute_payoffs(contributions: &[u32], multiplier: f64, allotment: u32) -> Result<Vec<f64>, PggError> {
    if let Some(&value) = contributions.iter().find(|c| **c > allotment) {
        return Err(PggError::BoundsViolation { value, max: allotment });
    }
    if contributions.is_empty() {
        return Ok(Vec::new());
    }
    let pot: u32 = contributions.iter().sum();
    let share = multiplier * f64::from(pot) / contributions.len() as f64;
    Ok(contributions.iter().map(|c| f64::from(allotment - c) + share).collect())
}

/// Partition of agent indices for `round`, greedily avoiding pairs that
/// already met in `history`. Seeded restarts plus pairwise swap repair.
pub fn assign_groups(
    round: usize,
    history: &[Vec<Vec<usize>>],
    n_agents: usize,
    group_size: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    assert!(group_size > 0 && n_agents.is_multiple_of(group_size), "agents must split evenly into groups");
    let mut met = vec![vec![0u32; n_agents]; n_agents];
    for partition in history {
        for g in partition {
            for (i, &a) in g.iter().enumerate() {
                for &b in &g[i + 1..] {
                    met[a][b] += 1;
                    met[b][a] += 1;
                }
            }
        }
    }
    let with = |g: &[usize], a: usize| -> u32 { g.iter().filter(|&&m| m != a).map(|&m| met[a][m]).sum() };
    let cost = |p: &[Vec<usize>]| -> u32 { p.iter().flat_map(|g| g.iter().map(|&a| with(g, a))).sum::<u32>() / 2 };

    let mut rng = seed::rng_from(seed::derive_index(seed, "groups", round as u64));
    let mut best: Option<(u32, Vec<Vec<usize>>)> = None;
    for _ in 0..32 {
        let mut order: Vec<usize> = (0..n_agents).collect();
        order.shuffle(&mut rng);
        let mut groups: Vec<Vec<usize>> = Vec::new();
        while !order.is_empty() {
            let mut g = vec![order.remove(0)];
            while g.len() < group_size {
                let (pos, _) = order
                    .iter()
                    .enumerate()
                    .min_by_key(|(pos, &a)| (with(&g, a), *pos))
                    .expect("enough agents remain");
                g.push(order.remove(pos));
            }
            groups.push(g);
        }
        // Swap repair: exchange members across groups while it lowers the cost.
        let mut improved = true;
        while improved {
            improved = false;
            for gi in 0..groups.len() {
                for gj in gi + 1..groups.len() {
                    for i in 0..group_size {
                        for j in 0..group_size {
                            let (a, b) = (groups[gi][i], groups[gj][j]);
                            let before = with(&groups[gi], a) + with(&groups[gj], b);
                            groups[gi][i] = b;
                            groups[gj][j] = a;
                            let after = with(&groups[gi], b) + with(&groups[gj], a);
                            if after < before {
                                improved = true;
                            } else {
                                groups[gi][i] = a;
                                groups[gj][j] = b;
                            }
                        }
                    }
                }
            }
        }
        let c = cost(&groups);
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, groups));
        }
        if best.as_ref().is_some_and(|(bc, _)| *bc == 0) {
            break;
        }
    }
    let mut groups = best.expect("at least one restart").1;
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_unstable();
    groups
}

/// Recipients of `note`: the subject's groupmates in the next partition.
pub fn route(note: &GossipNote, next_groups: &[Vec<String>]) -> Vec<String> {
    next_groups
        .iter()
        .find(|g| g.contains(&note.subject))
        .map(|g| g.iter().filter(|m| **m != note.subject).cloned().collect())
        .unwrap_or_default()
}

pub const GOSSIP_PREFIX: &str = "anonymous gossip:";
const REDACTED: &str = "[someone]";

/// Recipient-facing text of a note, with the author's name removed. Names
/// that contain the author's name (e.g. "X (2)" for author "X") survive.
pub fn redact(note: &GossipNote, protected: &[String]) -> String {
    let mut text = note.text.clone();
    let mut keep: Vec<&String> = protected.iter().filter(|n| **n != note.author && n.contains(&note.author)).collect();
    keep.sort_by_key(|n| std::cmp::Reverse(n.len()));
    for (i, name) in keep.iter().enumerate() {
        text = text.replace(name.as_str(), &format!("\u{0}{i}\u{0}"));
    }
    text = text.replace(&note.author, REDACTED);
    for (i, name) in keep.iter().enumerate() {
        text = text.replace(&format!("\u{0}{i}\u{0}"), name);
    }
    format!("{GOSSIP_PREFIX} {text}")
}

/// Exclusions implied by a set of votes.
pub fn tally_votes(votes: &BTreeMap<String, Option<String>>, threshold: usize) -> BTreeSet<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for target in votes.values().flatten() {
        *counts.entry(target).or_default() += 1;
    }
    counts.into_iter().filter(|(_, n)| *n >= threshold).map(|(t, _)| t.to_string()).collect()
}

/// Settles one group: multiplier, per-member earnings (0 for the excluded),
/// and whether the group was skipped for having fewer than two players.
pub fn settle_group(
    members: &[String],
    contributions: &BTreeMap<String, u32>,
    ostracized: &BTreeSet<String>,
    params: &PggParams,
) -> Result<(f64, BTreeMap<String, f64>, bool), PggError> {
    let players: Vec<&String> = members.iter().filter(|m| !ostracized.contains(*m)).collect();
    let any_out = players.len() < members.len();
    let multiplier = if any_out { params.multiplier_ostracism } else { params.multiplier_full };
    let mut earnings: BTreeMap<String, f64> = members.iter().map(|m| (m.clone(), 0.0)).collect();
    if players.len() < 2 {
        return Ok((multiplier, earnings, true));
    }
    let cs: Vec<u32> = players.iter().map(|p| contributions.get(*p).copied().unwrap_or(0)).collect();
    for (p, e) in players.iter().zip(compute_payoffs(&cs, multiplier, params.allotment)?) {
        earnings.insert((*p).clone(), e);
    }
    Ok((multiplier, earnings, false))
}

struct Ask {
    agent: usize,
    question: String,
    space: ActionSpace,
    features: Features,
    seed: u64,
}

/// Runs independent decisions concurrently and returns them in `asks` order
/// with each agent's events, so logs merge deterministically.
fn ask_all(
    agents: &mut [Agent],
    asks: Vec<Ask>,
    backend: &dyn DecisionBackend,
) -> Vec<(usize, Result<Decision, AgentError>, EventLog)> {
    let order: Vec<usize> = asks.iter().map(|a| a.agent).collect();
    let mut slots: Vec<Option<Ask>> = (0..agents.len()).map(|_| None).collect();
    for a in asks {
        let i = a.agent;
        slots[i] = Some(a);
    }
    let mut done: Vec<Option<(Result<Decision, AgentError>, EventLog)>> = agents
        .par_iter_mut()
        .zip(slots.into_par_iter())
        .map(|(agent, slot)| {
            slot.map(|a| {
                let mut log = Vec::new();
                let r = agent.act(&a.question, &a.space, a.features, backend, a.seed, &mut log);
                (r, log)
            })
        })
        .collect();
    order
        .into_iter()
        .map(|i| {
            let (r, log) = done[i].take().expect("asked agent answered");
            (i, r, log)
        })
        .collect()
}

fn names(agents: &[Agent], idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| agents[i].name.clone()).collect()
}

fn list(names: &[String]) -> String {
    match names.len() {
        0 => "nobody".into(),
        1 => names[0].clone(),
        n => format!("{} and {}", names[..n - 1].join(", "), names[n - 1]),
    }
}

/// Runs a full session. Events go to `log`, which keeps the partial
/// transcript when a round fails.
pub fn pgg_session(
    params: &PggParams,
    agents: &mut [Agent],
    backend: &dyn DecisionBackend,
    seed: u64,
    log: &mut EventLog,
) -> Result<PggOutcome, PggError> {
    params.validate()?;
    if agents.len() != params.n_agents {
        return Err(PggError::Params(format!("expected {} agents, got {}", params.n_agents, agents.len())));
    }
    let cond = params.condition;
    let n = agents.len();
    let index: BTreeMap<String, usize> = agents.iter().enumerate().map(|(i, a)| (a.name.clone(), i)).collect();
    if index.len() != n {
        return Err(PggError::Params("agent names must be unique".into()));
    }
    let all_names: Vec<String> = agents.iter().map(|a| a.name.clone()).collect();
    // known[i][j]: last contribution of j that i saw or heard about.
    let mut known: Vec<BTreeMap<usize, u32>> = vec![BTreeMap::new(); n];
    let mut history: Vec<Vec<Vec<usize>>> = Vec::new();
    let mut pending_notes: Vec<GossipNote> = Vec::new();
    let mut rounds = Vec::with_capacity(params.rounds);
    let condition_tag = Some(cond.as_str().to_string());
    let rseed = |r: usize, phase: &str, i: usize| seed::derive(seed, &format!("r{r}:{phase}:{i}"));

    for r in 0..params.rounds {
        let groups_idx = assign_groups(r, &history, n, params.group_size, seed);
        let groups: Vec<Vec<String>> = groups_idx.iter().map(|g| names(agents, g)).collect();
        let mut group_of = vec![0usize; n];
        for (gi, g) in groups_idx.iter().enumerate() {
            for &m in g {
                group_of[m] = gi;
            }
        }
        let agent_err = |i: usize, source: AgentError, agents: &[Agent]| PggError::Agent {
            round: r,
            agent: agents[i].name.clone(),
            source,
        };

        // Regroup.
        for g in &groups_idx {
            for &m in g {
                let others: Vec<String> = g.iter().filter(|&&o| o != m).map(|&o| agents[o].name.clone()).collect();
                agents[m].observe(
                    &format!(
                        "Round {} of {}: {} is in a group with {}. Everyone starts with {} points.",
                        r + 1,
                        params.rounds,
                        agents[m].name,
                        list(&others),
                        params.allotment
                    ),
                    log,
                );
            }
        }

        // Gossip delivery.
        let mut gossip_delivered = Vec::new();
        for note in pending_notes.drain(..) {
            let recipients = route(&note, &groups);
            let text = redact(&note, &all_names);
            for who in &recipients {
                let i = index[who];
                agents[i].observe(&text, log);
                if let Some(c) = last_number(&note.text).filter(|c| (0..=i64::from(params.allotment)).contains(c)) {
                    known[i].insert(index[&note.subject], c as u32);
                }
            }
            gossip_delivered.push(GossipDelivery { author: note.author, subject: note.subject, text, recipients });
        }

        // Discussion: one message per member in seat order, heard by the group.
        let mut discussion_log = Vec::new();
        if cond.has_discussion() {
            for g in &groups_idx {
                for &m in g {
                    let mut features = Features::new(Task::Discuss);
                    features.condition = condition_tag.clone();
                    features.round = Some(r as u32);
                    let q = format!("What will {} say to the group before this round's decisions?", agents[m].name);
                    let d = agents[m]
                        .act(&q, &ActionSpace::FreeText, features, backend, rseed(r, "discuss", m), log)
                        .map_err(|e| agent_err(m, e, agents))?;
                    let Decision::Text(text) = d else {
                        return Err(PggError::WrongDecision { round: r, agent: agents[m].name.clone(), expected: "text" });
                    };
                    let line = format!("{} said to the group: \"{}\"", agents[m].name, text);
                    for &o in g {
                        agents[o].observe(&line, log);
                    }
                    discussion_log.push(DiscussionMessage { speaker: agents[m].name.clone(), text });
                }
            }
        }

        // Ostracism vote, before anyone contributes this round.
        let mut votes = BTreeMap::new();
        let mut ostracized = BTreeSet::new();
        if cond.has_ostracism() {
            let mut asks = Vec::new();
            for g in &groups_idx {
                for &m in g {
                    let mates: Vec<usize> = g.iter().copied().filter(|&o| o != m).collect();
                    let mut features = Features::new(Task::Vote);
                    features.condition = condition_tag.clone();
                    features.round = Some(r as u32);
                    features.peer_contributions =
                        mates.iter().filter_map(|o| known[m].get(o).map(|c| (agents[*o].name.clone(), *c))).collect();
                    let question = format!(
                        "Will {} vote to exclude one groupmate from this round? A player with {} or more votes is excluded and earns nothing this round.",
                        agents[m].name, params.ostracism_threshold
                    );
                    asks.push(Ask {
                        agent: m,
                        question,
                        space: ActionSpace::Vote { candidates: names(agents, &mates) },
                        features,
                        seed: rseed(r, "vote", m),
                    });
                }
            }
            for (i, result, events) in ask_all(agents, asks, backend) {
                log.extend(events);
                let choice = match result {
                    Ok(Decision::Vote(v)) => v,
                    Ok(_) => return Err(PggError::WrongDecision { round: r, agent: agents[i].name.clone(), expected: "vote" }),
                    Err(e @ (AgentError::UnparseableDecision { .. } | AgentError::BoundsViolation { .. })) => {
                        flag(log, Some(&agents[i].name), "vote_abstain", format!("treated as abstention: {e}"));
                        None
                    }
                    Err(e) => return Err(agent_err(i, e, agents)),
                };
                votes.insert(agents[i].name.clone(), choice);
            }
            for g in &groups {
                let group_votes: BTreeMap<String, Option<String>> =
                    g.iter().map(|m| (m.clone(), votes.get(m).cloned().flatten())).collect();
                let out = tally_votes(&group_votes, params.ostracism_threshold);
                if !out.is_empty() {
                    let excluded: Vec<String> = out.iter().cloned().collect();
                    for m in g {
                        let text = if out.contains(m) {
                            format!("{} was excluded from round {} by a group vote and earns nothing this round.", m, r + 1)
                        } else {
                            format!("{} excluded from round {} by a group vote.", list(&excluded), r + 1)
                        };
                        agents[index[m]].observe(&text, log);
                    }
                }
                ostracized.extend(out);
            }
        }

        // Contributions.
        let mut asks = Vec::new();
        for g in &groups_idx {
            let players: Vec<usize> = g.iter().copied().filter(|m| !ostracized.contains(&agents[*m].name)).collect();
            if players.len() < 2 {
                continue;
            }
            for &m in &players {
                let mut features = Features::new(Task::Contribute);
                features.condition = condition_tag.clone();
                features.round = Some(r as u32);
                features.available = Some(params.allotment);
                let question = format!(
                    "How many of {}'s {} points will {} contribute to the group fund? The fund is multiplied and shared equally.",
                    agents[m].name, params.allotment, agents[m].name
                );
                asks.push(Ask {
                    agent: m,
                    question,
                    space: ActionSpace::Amount { max: params.allotment, unit: "points".into() },
                    features,
                    seed: rseed(r, "contribute", m),
                });
            }
        }
        let mut contributions = BTreeMap::new();
        for (i, result, events) in ask_all(agents, asks, backend) {
            log.extend(events);
            match result.map_err(|e| agent_err(i, e, agents))? {
                Decision::Amount(c) => {
                    contributions.insert(agents[i].name.clone(), c);
                }
                _ => return Err(PggError::WrongDecision { round: r, agent: agents[i].name.clone(), expected: "amount" }),
            }
        }

        // Settle and reveal.
        let mut earnings = BTreeMap::new();
        for (gi, g) in groups.iter().enumerate() {
            let (multiplier, e, skipped) = settle_group(g, &contributions, &ostracized, params)?;
            if skipped {
                flag(log, None, "group_skipped", format!("round {} group {}: fewer than 2 players", r + 1, gi));
            }
            let lines: Vec<String> = g
                .iter()
                .map(|m| match contributions.get(m) {
                    Some(c) => format!("{m} contributed {c} and earned {}", e[m]),
                    None => format!("{m} was excluded and earned 0"),
                })
                .collect();
            let reveal = format!("Round {} results (fund multiplier {multiplier}): {}.", r + 1, lines.join("; "));
            for m in g {
                let i = index[m];
                agents[i].observe(&reveal, log);
                for o in g {
                    if let Some(c) = contributions.get(o) {
                        known[i].insert(index[o], *c);
                    }
                }
                log.push(Event::Payoff { agent: m.clone(), amount: e[m], label: format!("round{}", r + 1) });
            }
            earnings.extend(e);
        }

        // Gossip for the next round's partners. Nothing to send after the last round.
        let mut gossip_sent = Vec::new();
        if cond.has_gossip() && r + 1 < params.rounds {
            let mut asks = Vec::new();
            for g in &groups_idx {
                for &m in g {
                    let mates: Vec<usize> = g.iter().copied().filter(|&o| o != m).collect();
                    let mut features = Features::new(Task::Gossip);
                    features.condition = condition_tag.clone();
                    features.round = Some(r as u32);
                    features.peer_contributions = mates
                        .iter()
                        .filter_map(|o| contributions.get(&agents[*o].name).map(|c| (agents[*o].name.clone(), *c)))
                        .collect();
                    let question = format!(
                        "Will {} send an anonymous note about one current groupmate to that person's next partners? \
                         Name the groupmate in the note, or reply \"no note\".",
                        agents[m].name
                    );
                    asks.push(Ask { agent: m, question, space: ActionSpace::FreeText, features, seed: rseed(r, "gossip", m) });
                }
            }
            for (i, result, events) in ask_all(agents, asks, backend) {
                log.extend(events);
                let author = agents[i].name.clone();
                let text = match result {
                    Ok(Decision::Text(t)) => t,
                    Ok(_) => return Err(PggError::WrongDecision { round: r, agent: author, expected: "text" }),
                    Err(e @ (AgentError::UnparseableDecision { .. } | AgentError::BoundsViolation { .. })) => {
                        flag(log, Some(&author), "gossip_none", format!("treated as no note: {e}"));
                        continue;
                    }
                    Err(e) => return Err(agent_err(i, e, agents)),
                };
                let mates: Vec<String> = groups[group_of[i]].iter().filter(|m| **m != author).cloned().collect();
                if text.trim().to_lowercase().starts_with("no note") {
                    continue;
                }
                let subject = match parse_decision(&text, &ActionSpace::Vote { candidates: mates }, false) {
                    Ok(Decision::Vote(Some(s))) => s,
                    _ => {
                        flag(log, Some(&author), "gossip_none", "note names no current groupmate");
                        continue;
                    }
                };
                if ostracized.contains(&subject) || ostracized.contains(&author) {
                    flag(log, Some(&author), "open_question", "gossip involving an excluded player");
                }
                gossip_sent.push(GossipNote { author, subject, text, target_round: r + 1 });
            }
            pending_notes = gossip_sent.clone();
        }

        history.push(groups_idx);
        rounds.push(RoundRecord {
            round: r,
            groups,
            gossip_delivered,
            discussion_log,
            votes,
            ostracized,
            contributions,
            earnings,
            gossip_sent,
        });
    }

    let agents_out = agents
        .iter()
        .map(|a| AgentSummary {
            name: a.name.clone(),
            tendency: a.persona.cooperation_tendency,
            contribution_sum: rounds.iter().map(|r| r.contributions.get(&a.name).copied().unwrap_or(0)).sum(),
            earnings_sum: rounds.iter().map(|r| r.earnings.get(&a.name).copied().unwrap_or(0.0)).sum(),
        })
        .collect();
    Ok(PggOutcome { condition: cond, agents: agents_out, rounds })
}

/// Builds the session's agents from `pool` and runs it.
pub fn run_session(
    params: &PggParams,
    config: &Arc<ArchitectureConfig>,
    pool: &[Persona],
    backend: &dyn DecisionBackend,
    options: &DecideOptions,
    seed: u64,
) -> (Result<PggOutcome, PggError>, EventLog) {
    let mut log = Vec::new();
    let result = (|| {
        let people = assign_personas(pool, params.n_agents, seed::derive(seed, "personas"))?;
        let mut agents = people
            .into_iter()
            .map(|p| {
                let name = p.name.clone();
                Agent::new(p, config.clone(), options.clone())
                    .map_err(|source| PggError::Agent { round: 0, agent: name, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        pgg_session(params, &mut agents, backend, seed::derive(seed, "session"), &mut log)
    })();
    (result, log)
}

/// Anonymity leaks: delivered gossip that names its author.
pub fn anonymity_violations(outcome: &PggOutcome, log: &EventLog) -> Vec<String> {
    let mut out = Vec::new();
    let names: Vec<String> = outcome.agents.iter().map(|a| a.name.clone()).collect();
    for round in &outcome.rounds {
        for d in &round.gossip_delivered {
            let mut scrubbed = d.text.clone();
            let mut others: Vec<&String> = names.iter().filter(|n| **n != d.author && n.contains(&d.author)).collect();
            others.sort_by_key(|n| std::cmp::Reverse(n.len()));
            for n in others {
                scrubbed = scrubbed.replace(n.as_str(), "");
            }
            if scrubbed.contains(&d.author) {
                out.push(format!("round {}: delivered note names its author {}", round.round + 1, d.author));
            }
        }
    }
    let delivered: BTreeSet<&str> =
        outcome.rounds.iter().flat_map(|r| r.gossip_delivered.iter().map(|d| d.text.as_str())).collect();
    for e in log {
        if let Event::Observation { agent, text, .. } = e {
            if text.starts_with(GOSSIP_PREFIX) && !delivered.contains(text.as_str()) {
                out.push(format!("{agent} saw undelivered gossip text: {text}"));
            }
        }
    }
    out
}
