use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub timestamp: u64,
    pub text: String,
}

/// Append-only record of everything an agent has observed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Memory {
    entries: Vec<MemoryEntry>,
}

/// Header of the rendered observation block; the scripted backend keys on it.
pub const OBSERVATIONS_HEADER: &str = "Observations:";
pub const NO_OBSERVATIONS: &str = "(none yet)";

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `text` as a single line; interior whitespace runs collapse to one space.
    pub fn push(&mut self, timestamp: u64, text: &str) {
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        self.entries.push(MemoryEntry { timestamp, text });
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Full observation list, one `- [t] text` line per entry.
    pub fn render(&self) -> String {
        let mut out = String::from(OBSERVATIONS_HEADER);
        if self.entries.is_empty() {
            out.push('\n');
            out.push_str(NO_OBSERVATIONS);
        }
        for e in &self.entries {
            out.push_str(&format!("\n- [{}] {}", e.timestamp, e.text));
        }
        out
    }
}

/// Recovers observation texts from a prompt containing a rendered [`Memory`] block.
pub fn parse_observation_block(prompt: &str) -> Option<Vec<String>> {
    let start = prompt.find(OBSERVATIONS_HEADER)?;
    let mut out = Vec::new();
    for line in prompt[start + OBSERVATIONS_HEADER.len()..].lines().skip(1) {
        let Some(rest) = line.strip_prefix("- [") else { break };
        let Some(close) = rest.find("] ") else { break };
        out.push(rest[close + 2..].to_string());
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_insertion_order() {
        let mut m = Memory::new();
        m.push(0, "first");
        m.push(1, "second\nline");
        let texts: Vec<_> = m.entries().iter().map(|e| e.text.as_str()).collect();
        assert_eq!(texts, ["first", "second line"]);
        assert_eq!(m.render(), "Observations:\n- [0] first\n- [1] second line");
    }

    #[test]
    fn block_parses_back() {
        let mut m = Memory::new();
        assert_eq!(parse_observation_block(&m.render()), Some(vec![]));
        m.push(3, "a [bracket] b");
        m.push(4, "c");
        let prompt = format!("{}\n\n[SituationAssessment]\nx", m.render());
        assert_eq!(parse_observation_block(&prompt).unwrap(), ["a [bracket] b", "c"]);
    }
}
