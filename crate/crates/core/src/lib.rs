//! Generative agent-based modeling of two economic games: third-party
//! punishment with a trust stage, and a repeated public goods game with
//! gossip and ostracism.

pub mod agent;
pub mod backends;
pub mod harness;
pub mod personas;
pub mod pgg;
pub mod seed;
pub mod stats;
pub mod tpp;
pub mod transcript;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Tpp,
    Pgg,
}

impl Study {
    pub fn as_str(self) -> &'static str {
        match self {
            Study::Tpp => "tpp",
            Study::Pgg => "pgg",
        }
    }
}

impl std::fmt::Display for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Study {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tpp" => Ok(Study::Tpp),
            "pgg" => Ok(Study::Pgg),
            other => Err(format!("unknown study {other:?} (expected tpp or pgg)")),
        }
    }
}
