//! Two-stage third-party punishment trust game.
//!
//! Stage 1: a scripted Helper keeps its whole endowment and the Signaller may
//! pay to punish it. Stage 2: a fresh Chooser decides how much to send to the
//! Signaller, the amount is tripled, and the Signaller decides how much to
//! return. In the public condition the Chooser is told the Stage-1 decision.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::decision::{ActionSpace, Decision};
use crate::agent::graph::ArchitectureConfig;
use crate::agent::{Agent, AgentError, DecideOptions};
use crate::backends::{DecisionBackend, Features, Task};
use crate::personas::{assign_personas, Persona, PersonaError};
use crate::seed;
use crate::transcript::{flag, Event, EventLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TppCondition {
    Public,
    Private,
}

impl TppCondition {
    pub const ALL: [TppCondition; 2] = [TppCondition::Public, TppCondition::Private];

    pub fn as_str(self) -> &'static str {
        match self {
            TppCondition::Public => "public",
            TppCondition::Private => "private",
        }
    }
}

impl std::str::FromStr for TppCondition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        TppCondition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown TPP condition {s:?} (expected public or private)"))
    }
}

/// Dollar amounts for one game. All amounts are whole dollars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TppParams {
    pub helper_endowment_s1: u32,
    pub signaller_endowment_s1: u32,
    pub punish_cost: u32,
    pub punish_damage: u32,
    pub chooser_endowment_s2: u32,
    pub multiplier: u32,
    pub condition: TppCondition,
}

#[derive(Debug, Error)]
pub enum TppError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error("{role}: {source}")]
    Agent { role: &'static str, source: AgentError },
    #[error("{role} produced a non-{expected} decision")]
    WrongDecision { role: &'static str, expected: &'static str },
}

impl TppParams {
    pub fn new(condition: TppCondition) -> Self {
        TppParams {
            helper_endowment_s1: 10,
            signaller_endowment_s1: 10,
            punish_cost: 2,
            punish_damage: 6,
            chooser_endowment_s2: 10,
            multiplier: 3,
            condition,
        }
    }

    pub fn validate(&self) -> Result<(), TppError> {
        let amounts = [
            ("helper_endowment_s1", self.helper_endowment_s1),
            ("signaller_endowment_s1", self.signaller_endowment_s1),
            ("punish_cost", self.punish_cost),
            ("punish_damage", self.punish_damage),
            ("chooser_endowment_s2", self.chooser_endowment_s2),
        ];
        if let Some((name, _)) = amounts.iter().find(|(_, v)| *v == 0) {
            return Err(TppError::Params(format!("{name} must be positive")));
        }
        if self.multiplier != 3 {
            return Err(TppError::Params(format!("multiplier must be 3, got {}", self.multiplier)));
        }
        if self.punish_cost > self.signaller_endowment_s1 || self.punish_damage > self.helper_endowment_s1 {
            return Err(TppError::Params("punishment exceeds an endowment".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage1Record {
    pub helper_sent: u32,
    pub punished: bool,
    pub signaller_payoff: u32,
    pub helper_payoff: u32,
}

impl Stage1Record {
    pub fn settle(params: &TppParams, punished: bool) -> Self {
        let helper_sent = 0;
        let (cost, damage) = if punished { (params.punish_cost, params.punish_damage) } else { (0, 0) };
        Stage1Record {
            helper_sent,
            punished,
            signaller_payoff: params.signaller_endowment_s1 - cost,
            helper_payoff: params.helper_endowment_s1 - helper_sent - damage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Record {
    pub sent: u32,
    pub tripled: u32,
    pub returned: u32,
    pub sent_pct: f64,
    pub returned_pct: f64,
    pub chooser_payoff: u32,
    pub signaller_payoff: u32,
    /// Whether the Chooser was told the Stage-1 decision.
    pub chooser_informed: bool,
}

impl Stage2Record {
    /// Payoff arithmetic for one trust exchange. Panics if `sent` or
    /// `returned` is out of range.
    pub fn settle(params: &TppParams, sent: u32, returned: u32, chooser_informed: bool) -> Self {
        let endowment = params.chooser_endowment_s2;
        assert!(sent <= endowment, "sent {sent} exceeds endowment {endowment}");
        let tripled = params.multiplier * sent;
        assert!(returned <= tripled, "returned {returned} exceeds tripled {tripled}");
        Stage2Record {
            sent,
            tripled,
            returned,
            sent_pct: 100.0 * f64::from(sent) / f64::from(endowment),
            returned_pct: if tripled == 0 { 0.0 } else { 100.0 * f64::from(returned) / f64::from(tripled) },
            chooser_payoff: endowment - sent + returned,
            signaller_payoff: tripled - returned,
            chooser_informed,
        }
    }
}

/// One finished game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TppOutcome {
    pub condition: TppCondition,
    pub signaller: String,
    pub chooser: String,
    pub signaller_tendency: f64,
    pub chooser_tendency: f64,
    pub stage1: Stage1Record,
    pub stage2: Stage2Record,
}

pub const PUNISH: &str = "Punish";
pub const DO_NOT_PUNISH: &str = "Do not punish";

pub fn punish_space() -> ActionSpace {
    ActionSpace::Binary { yes: PUNISH.into(), no: DO_NOT_PUNISH.into() }
}

/// The sentence that tells a Chooser what the Signaller did in Stage 1.
pub fn punishment_disclosure(signaller: &str, punished: bool, params: &TppParams) -> String {
    if punished {
        format!(
            "Earlier, {signaller} watched a Helper keep everything and chose to pay ${} to punish the Helper.",
            params.punish_cost
        )
    } else {
        format!("Earlier, {signaller} watched a Helper keep everything and chose not to punish the Helper.")
    }
}

/// Fragments that only a disclosure contains. A Chooser in the private
/// condition must never see any of them.
pub const DISCLOSURE_MARKERS: [&str; 2] = ["chose to pay", "chose not to punish"];

fn agent_err(role: &'static str) -> impl Fn(AgentError) -> TppError {
    move |source| TppError::Agent { role, source }
}

/// Stage 1 for `signaller`.
pub fn run_stage1(
    signaller: &mut Agent,
    params: &TppParams,
    backend: &dyn DecisionBackend,
    seed: u64,
    log: &mut EventLog,
) -> Result<Stage1Record, TppError> {
    params.validate()?;
    let h = params.helper_endowment_s1;
    signaller.observe(
        &format!(
            "Stage 1: {} has ${} in a trust game as an observer. A Helper received ${h} and could share it with a Recipient. \
             The Helper gave $0 to the Recipient and kept all ${h}.",
            signaller.name, params.signaller_endowment_s1
        ),
        log,
    );
    let visibility = match params.condition {
        TppCondition::Public => "Your decision would be public: the person you play with in Stage 2 will be told what you decided.",
        TppCondition::Private => "Your decision would remain private: nobody you play with later will learn it.",
    };
    signaller.observe(visibility, log);
    let question = format!(
        "Will {} pay ${} to reduce the Helper's earnings by ${}? {visibility}",
        signaller.name, params.punish_cost, params.punish_damage
    );
    let mut features = Features::new(Task::Punish);
    features.condition = Some(params.condition.as_str().to_string());
    let decision = signaller
        .act(&question, &punish_space(), features, backend, seed, log)
        .map_err(agent_err("signaller"))?;
    let Decision::Binary(punished) = decision else {
        return Err(TppError::WrongDecision { role: "signaller", expected: "binary" });
    };
    let rec = Stage1Record::settle(params, punished);
    let outcome = if punished {
        format!("You paid ${} and the Helper lost ${}.", params.punish_cost, params.punish_damage)
    } else {
        "You decided not to punish the Helper.".to_string()
    };
    signaller.observe(&outcome, log);
    log.push(Event::Payoff { agent: signaller.name.clone(), amount: f64::from(rec.signaller_payoff), label: "stage1".into() });
    Ok(rec)
}

/// Stage 2: `chooser` sends, `signaller` (memory kept from Stage 1) returns.
pub fn run_stage2(
    chooser: &mut Agent,
    signaller: &mut Agent,
    s1: &Stage1Record,
    params: &TppParams,
    backend: &dyn DecisionBackend,
    seed: u64,
    log: &mut EventLog,
) -> Result<Stage2Record, TppError> {
    params.validate()?;
    let e = params.chooser_endowment_s2;
    let informed = params.condition == TppCondition::Public;
    chooser.observe(
        &format!(
            "Stage 2: {} has ${e} and plays a trust game with {}. Any amount sent is tripled, and {} then decides how much \
             of the tripled amount to return.",
            chooser.name, signaller.name, signaller.name
        ),
        log,
    );
    if informed {
        chooser.observe(&punishment_disclosure(&signaller.name, s1.punished, params), log);
    }
    let send_q = format!("How many whole dollars of the ${e} will {} send to {}?", chooser.name, signaller.name);
    let mut features = Features::new(Task::Send);
    features.condition = Some(params.condition.as_str().to_string());
    features.available = Some(e);
    features.partner_punished = informed.then_some(s1.punished);
    let space = ActionSpace::Amount { max: e, unit: "dollars".into() };
    let sent = match chooser
        .act(&send_q, &space, features, backend, seed::derive(seed, "send"), log)
        .map_err(agent_err("chooser"))?
    {
        Decision::Amount(v) => v,
        _ => return Err(TppError::WrongDecision { role: "chooser", expected: "amount" }),
    };

    let tripled = params.multiplier * sent;
    let returned = if sent == 0 {
        signaller.observe(&format!("Stage 2: {} sent you nothing, so there is nothing to return.", chooser.name), log);
        0
    } else {
        signaller.observe(
            &format!("Stage 2: {} sent you ${sent}, which was tripled to ${tripled}.", chooser.name),
            log,
        );
        if informed {
            signaller.observe(&format!("{} was told your Stage 1 decision.", chooser.name), log);
            flag(log, Some(&signaller.name), "open_question", "signaller told that the chooser knew the stage 1 decision");
        }
        let return_q = format!(
            "How many whole dollars of the ${tripled} will {} return to {}?",
            signaller.name, chooser.name
        );
        let mut features = Features::new(Task::Return);
        features.condition = Some(params.condition.as_str().to_string());
        features.available = Some(tripled);
        let space = ActionSpace::Amount { max: tripled, unit: "dollars".into() };
        match signaller
            .act(&return_q, &space, features, backend, seed::derive(seed, "return"), log)
            .map_err(agent_err("signaller"))?
        {
            Decision::Amount(v) => v,
            _ => return Err(TppError::WrongDecision { role: "signaller", expected: "amount" }),
        }
    };
    let rec = Stage2Record::settle(params, sent, returned, informed);
    chooser.observe(&format!("{} returned ${returned} to you.", signaller.name), log);
    log.push(Event::Payoff { agent: chooser.name.clone(), amount: f64::from(rec.chooser_payoff), label: "stage2".into() });
    log.push(Event::Payoff { agent: signaller.name.clone(), amount: f64::from(rec.signaller_payoff), label: "stage2".into() });
    Ok(rec)
}

/// A finished or failed game with its event log.
#[derive(Debug)]
pub struct TppGame {
    pub index: u64,
    pub seed: u64,
    pub result: Result<TppOutcome, TppError>,
    pub log: EventLog,
}

/// One complete game with fresh agents drawn from `pool`.
pub fn tpp_game(
    config: &Arc<ArchitectureConfig>,
    params: &TppParams,
    pool: &[Persona],
    backend: &dyn DecisionBackend,
    options: &DecideOptions,
    seed: u64,
) -> (Result<TppOutcome, TppError>, EventLog) {
    let mut log = Vec::new();
    let result = (|| {
        let people = assign_personas(pool, 2, seed::derive(seed, "personas"))?;
        let make = |p: &Persona, role| Agent::new(p.clone(), config.clone(), options.clone()).map_err(agent_err(role));
        let mut signaller = make(&people[0], "signaller")?;
        let mut chooser = make(&people[1], "chooser")?;
        let s1 = run_stage1(&mut signaller, params, backend, seed::derive(seed, "stage1"), &mut log)?;
        let s2 = run_stage2(&mut chooser, &mut signaller, &s1, params, backend, seed::derive(seed, "stage2"), &mut log)?;
        Ok(TppOutcome {
            condition: params.condition,
            signaller: signaller.name.clone(),
            chooser: chooser.name.clone(),
            signaller_tendency: signaller.persona.cooperation_tendency,
            chooser_tendency: chooser.persona.cooperation_tendency,
            stage1: s1,
            stage2: s2,
        })
    })();
    (result, log)
}

/// Runs `n` independent games in parallel. Game `i` uses the replica seed
/// derived from `seed` and `i`; failed games are returned, not raised.
pub fn tpp_experiment(
    n: u64,
    config: Arc<ArchitectureConfig>,
    condition: TppCondition,
    pool: &[Persona],
    backend: &dyn DecisionBackend,
    options: &DecideOptions,
    seed: u64,
) -> Result<Vec<TppGame>, TppError> {
    if n < 2 {
        return Err(TppError::Params(format!("need at least 2 games, got {n}")));
    }
    let params = TppParams::new(condition);
    params.validate()?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let game_seed = seed::replica(seed, i);
            let (result, log) = tpp_game(&config, &params, pool, backend, options, game_seed);
            TppGame { index: i, seed: game_seed, result, log }
        })
        .collect())
}

/// Private-condition leaks: Chooser-visible text containing a disclosure.
pub fn isolation_violations(outcome: &TppOutcome, log: &EventLog) -> Vec<String> {
    if outcome.condition != TppCondition::Private {
        return Vec::new();
    }
    log.iter()
        .filter(|e| e.agent() == Some(outcome.chooser.as_str()))
        .flat_map(|e| e.visible_text())
        .filter(|text| DISCLOSURE_MARKERS.iter().any(|m| text.contains(m)))
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::graph::ArchitectureName;
    use crate::backends::scripted::ScriptedBackend;
    use crate::personas::default_pool;
    use crate::Study;
    use proptest::prelude::*;

    fn social() -> Arc<ArchitectureConfig> {
        Arc::new(ArchitectureConfig::builtin(Study::Tpp, ArchitectureName::Social).unwrap())
    }

    #[test]
    fn stage1_payoffs() {
        let p = TppParams::new(TppCondition::Public);
        let r = Stage1Record::settle(&p, true);
        assert_eq!((r.signaller_payoff, r.helper_payoff), (8, 4));
        let r = Stage1Record::settle(&p, false);
        assert_eq!((r.signaller_payoff, r.helper_payoff), (10, 10));
    }

    #[test]
    fn stage2_examples() {
        let p = TppParams::new(TppCondition::Public);
        let r = Stage2Record::settle(&p, 10, 15, true);
        assert_eq!((r.chooser_payoff, r.signaller_payoff), (15, 15));
        let r = Stage2Record::settle(&p, 0, 0, true);
        assert_eq!((r.tripled, r.returned_pct), (0, 0.0));
    }

    #[test]
    fn multiplier_is_fixed() {
        let mut p = TppParams::new(TppCondition::Private);
        p.multiplier = 2;
        assert!(matches!(p.validate(), Err(TppError::Params(_))));
    }

    #[test]
    fn games_are_deterministic_and_isolated() {
        let pool = default_pool();
        let backend = ScriptedBackend::default();
        let opts = DecideOptions::default();
        let run = || {
            tpp_experiment(6, social(), TppCondition::Private, &pool, &backend, &opts, 5)
                .unwrap()
                .into_iter()
                .map(|g| (g.result.unwrap(), g.log))
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        for (outcome, log) in &a {
            assert!(isolation_violations(outcome, log).is_empty());
            assert!(!outcome.stage2.chooser_informed);
        }
    }

    #[test]
    fn public_chooser_sees_disclosure() {
        let pool = default_pool();
        let games = tpp_experiment(4, social(), TppCondition::Public, &pool, &ScriptedBackend::default(), &DecideOptions::default(), 5)
            .unwrap();
        for g in games {
            let o = g.result.unwrap();
            let seen = g
                .log
                .iter()
                .filter(|e| e.agent() == Some(o.chooser.as_str()))
                .flat_map(|e| e.visible_text())
                .any(|t| DISCLOSURE_MARKERS.iter().any(|m| t.contains(m)));
            assert!(seen);
        }
    }

    proptest! {
        #[test]
        fn stage2_conservation(sent in 0u32..=10, frac in 0.0..=1.0f64) {
            let p = TppParams::new(TppCondition::Public);
            let returned = (frac * f64::from(3 * sent)).floor() as u32;
            let r = Stage2Record::settle(&p, sent, returned, true);
            prop_assert_eq!(r.chooser_payoff + r.signaller_payoff, 10 + 2 * sent);
            prop_assert!(r.returned <= r.tripled);
        }
    }
}
