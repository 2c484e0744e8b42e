//! Action spaces and the tolerant free-text decision extractor.
//!
//! Extraction takes the *last* match in the reply: the last number for amounts,
//! the last option keyword for binary choices and votes. Models tend to reason
//! first and answer last.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSpace {
    Binary { yes: String, no: String },
    Amount { max: u32, unit: String },
    FreeText,
    Vote { candidates: Vec<String> },
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Decision {
    Binary(bool),
    Amount(u32),
    Text(String),
    /// `None` is an abstention.
    Vote(Option<String>),
    None,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no recognizable answer")]
    NoAnswer,
    #[error("amount {value} outside [0, {max}]")]
    OutOfBounds { value: i64, max: u32 },
}

pub const ABSTAIN: &str = "abstain";
const ABSTAIN_WORDS: [&str; 4] = ["abstain", "no one", "nobody", "no vote"];

impl ActionSpace {
    /// The text following "Answer with exactly: ".
    pub fn format_hint(&self) -> String {
        match self {
            ActionSpace::Binary { yes, no } => format!("\"{yes}\" or \"{no}\""),
            ActionSpace::Amount { max, unit } => format!("a whole number of {unit} from 0 to {max}"),
            ActionSpace::FreeText => "your message".to_string(),
            ActionSpace::Vote { candidates } => {
                let mut opts: Vec<String> = candidates.iter().map(|c| format!("\"{c}\"")).collect();
                opts.push(format!("\"{ABSTAIN}\""));
                format!("one of {}", opts.join(", "))
            }
            ActionSpace::None => "nothing".to_string(),
        }
    }

    pub fn contains(&self, d: &Decision) -> bool {
        match (self, d) {
            (ActionSpace::Binary { .. }, Decision::Binary(_)) => true,
            (ActionSpace::Amount { max, .. }, Decision::Amount(v)) => v <= max,
            (ActionSpace::FreeText, Decision::Text(_)) => true,
            (ActionSpace::Vote { candidates }, Decision::Vote(v)) => {
                v.as_ref().is_none_or(|name| candidates.contains(name))
            }
            (ActionSpace::None, Decision::None) => true,
            _ => false,
        }
    }
}

/// Parses `text` into a decision in `space`.
///
/// With `clamp` set, amounts outside the range are clamped instead of rejected.
pub fn parse_decision(text: &str, space: &ActionSpace, clamp: bool) -> Result<Decision, ParseError> {
    match space {
        ActionSpace::Binary { yes, no } => parse_binary(text, yes, no),
        ActionSpace::Amount { max, .. } => {
            let value = last_number(text).ok_or(ParseError::NoAnswer)?;
            if (0..=i64::from(*max)).contains(&value) {
                Ok(Decision::Amount(value as u32))
            } else if clamp {
                Ok(Decision::Amount(value.clamp(0, i64::from(*max)) as u32))
            } else {
                Err(ParseError::OutOfBounds { value, max: *max })
            }
        }
        ActionSpace::FreeText => Ok(Decision::Text(text.trim().to_string())),
        ActionSpace::Vote { candidates } => parse_vote(text, candidates),
        ActionSpace::None => Ok(Decision::None),
    }
}

/// Last (possibly decimal) number in `text`, rounded half-up to an integer.
pub fn last_number(text: &str) -> Option<i64> {
    let bytes = text.as_bytes();
    let mut i = bytes.len();
    while i > 0 {
        i -= 1;
        if !bytes[i].is_ascii_digit() {
            continue;
        }
        let end = i + 1;
        let mut start = i;
        while start > 0 && (bytes[start - 1].is_ascii_digit() || bytes[start - 1] == b',') {
            start -= 1;
        }
        // Decimal part: if a '.' precedes this digit run and digits precede the '.', widen.
        if start >= 2 && bytes[start - 1] == b'.' && bytes[start - 2].is_ascii_digit() {
            let mut int_start = start - 1;
            while int_start > 0 && (bytes[int_start - 1].is_ascii_digit() || bytes[int_start - 1] == b',') {
                int_start -= 1;
            }
            start = int_start;
        }
        let literal: String = text[start..end].chars().filter(|c| *c != ',').collect();
        let value: f64 = literal.parse().ok()?;
        let negative = start > 0 && bytes[start - 1] == b'-' && (start < 2 || !bytes[start - 2].is_ascii_alphanumeric());
        let rounded = (value + 0.5).floor();
        if !rounded.is_finite() || rounded > i64::MAX as f64 / 2.0 {
            return None;
        }
        let v = rounded as i64;
        return Some(if negative { -v } else { v });
    }
    None
}

/// All match end positions (byte offsets into the lowercased text) of `needle`.
fn match_ends(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    if needle.is_empty() {
        return Vec::new();
    }
    haystack.match_indices(needle).map(|(s, m)| (s, s + m.len())).collect()
}

fn is_negated(lower: &str, start: usize) -> bool {
    let before = lower[..start].trim_end();
    before.ends_with(" not") || before == "not" || before.ends_with("n't") || before.ends_with("never")
}

fn parse_binary(text: &str, yes: &str, no: &str) -> Result<Decision, ParseError> {
    let lower = text.to_lowercase();
    let (yes_l, no_l) = (yes.to_lowercase(), no.to_lowercase());
    // (end, length, answer): latest end wins; on equal ends the longer label wins.
    let mut best: Option<(usize, usize, bool)> = None;
    for (label, answer) in [(&yes_l, true), (&no_l, false)] {
        for (s, e) in match_ends(&lower, label) {
            let answer = if answer && is_negated(&lower, s) { false } else { answer };
            let cand = (e, e - s, answer);
            if best.is_none_or(|b| (cand.0, cand.1) > (b.0, b.1)) {
                best = Some(cand);
            }
        }
    }
    best.map(|(_, _, a)| Decision::Binary(a)).ok_or(ParseError::NoAnswer)
}

fn parse_vote(text: &str, candidates: &[String]) -> Result<Decision, ParseError> {
    let lower = text.to_lowercase();
    // (end, length, candidate index or None for abstain)
    let mut best: Option<(usize, usize, Option<usize>)> = None;
    let mut consider = |e: usize, len: usize, who: Option<usize>| {
        if best.is_none_or(|b| (e, len) > (b.0, b.1)) {
            best = Some((e, len, who));
        }
    };
    for (i, c) in candidates.iter().enumerate() {
        for (s, e) in match_ends(&lower, &c.to_lowercase()) {
            consider(e, e - s, Some(i));
        }
    }
    for w in ABSTAIN_WORDS {
        for (s, e) in match_ends(&lower, w) {
            consider(e, e - s, None);
        }
    }
    best.map(|(_, _, who)| Decision::Vote(who.map(|i| candidates[i].clone()))).ok_or(ParseError::NoAnswer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn punish() -> ActionSpace {
        ActionSpace::Binary { yes: "Punish".into(), no: "Do not punish".into() }
    }

    fn dollars(max: u32) -> ActionSpace {
        ActionSpace::Amount { max, unit: "dollars".into() }
    }

    #[test]
    fn amount_takes_last_number() {
        assert_eq!(parse_decision("I'll send $7", &dollars(10), false), Ok(Decision::Amount(7)));
        assert_eq!(parse_decision("Out of $10 I keep 3 and send 4.75", &dollars(10), false), Ok(Decision::Amount(5)));
        assert_eq!(parse_decision("1,000 dollars", &dollars(2000), false), Ok(Decision::Amount(1000)));
        assert_eq!(parse_decision("send -3", &dollars(10), false), Err(ParseError::OutOfBounds { value: -3, max: 10 }));
        assert_eq!(parse_decision("send 12", &dollars(10), true), Ok(Decision::Amount(10)));
        assert_eq!(parse_decision("send 12", &dollars(10), false), Err(ParseError::OutOfBounds { value: 12, max: 10 }));
        assert_eq!(parse_decision("nothing at all", &dollars(10), false), Err(ParseError::NoAnswer));
    }

    #[test]
    fn binary_prefers_last_and_longest() {
        assert_eq!(parse_decision("Punish", &punish(), false), Ok(Decision::Binary(true)));
        assert_eq!(parse_decision("Do not punish", &punish(), false), Ok(Decision::Binary(false)));
        assert_eq!(
            parse_decision("I considered not to punish, but final answer: Punish", &punish(), false),
            Ok(Decision::Binary(true))
        );
        assert_eq!(parse_decision("I will not punish.", &punish(), false), Ok(Decision::Binary(false)));
        assert_eq!(parse_decision("maybe", &punish(), false), Err(ParseError::NoAnswer));
    }

    #[test]
    fn vote_handles_abstain_and_overlapping_names() {
        let space = ActionSpace::Vote { candidates: vec!["Mei Lin".into(), "Mei Lin (2)".into()] };
        assert_eq!(parse_decision("I vote for Mei Lin (2)", &space, false), Ok(Decision::Vote(Some("Mei Lin (2)".into()))));
        assert_eq!(parse_decision("Mei Lin", &space, false), Ok(Decision::Vote(Some("Mei Lin".into()))));
        assert_eq!(parse_decision("Mei Lin was low but I abstain", &space, false), Ok(Decision::Vote(None)));
        assert_eq!(parse_decision("hmm", &space, false), Err(ParseError::NoAnswer));
    }

    #[test]
    fn none_space_needs_no_text() {
        assert_eq!(parse_decision("", &ActionSpace::None, false), Ok(Decision::None));
        assert_eq!(parse_decision("  hi \n", &ActionSpace::FreeText, false), Ok(Decision::Text("hi".into())));
    }

    proptest! {
        #[test]
        fn parsed_amounts_respect_bounds(text in ".{0,80}", max in 0u32..100, clamp: bool) {
            if let Ok(d) = parse_decision(&text, &dollars(max), clamp) {
                prop_assert!(dollars(max).contains(&d));
            }
        }

        #[test]
        fn parsed_votes_are_candidates(text in "(Ann|Bo|abstain| |x){0,12}") {
            let space = ActionSpace::Vote { candidates: vec!["Ann".into(), "Bo".into()] };
            if let Ok(d) = parse_decision(&text, &space, false) {
                prop_assert!(space.contains(&d));
            }
        }
    }
}
