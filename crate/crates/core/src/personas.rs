//! Persona pool: loading, validation, seeded assignment and the pool generator.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_from;

/// Stable individual-difference profile for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub age: u32,
    pub gender: String,
    pub occupation: String,
    pub background: String,
    pub traits: String,
    pub cooperation_tendency: f64,
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("persona {persona:?}: invalid field `{field}`: {reason}")]
    Validation { persona: String, field: &'static str, reason: String },
    #[error("persona file: {0}")]
    Parse(String),
    #[error("persona pool has {got} personas, need at least {needed}")]
    PoolTooSmall { needed: usize, got: usize },
    #[error("persona pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Persona {
    pub fn validate(&self) -> Result<(), PersonaError> {
        let fail = |field, reason: &str| PersonaError::Validation {
            persona: self.name.clone(),
            field,
            reason: reason.to_string(),
        };
        let text_fields = [
            ("name", &self.name),
            ("gender", &self.gender),
            ("occupation", &self.occupation),
            ("background", &self.background),
            ("traits", &self.traits),
        ];
        for (field, value) in text_fields {
            if value.trim().is_empty() {
                return Err(fail(field, "must be non-empty"));
            }
        }
        if !(0.0..=1.0).contains(&self.cooperation_tendency) {
            return Err(fail("cooperation_tendency", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Value for a `{persona.<field>}` template placeholder.
    pub fn field(&self, key: &str) -> Option<String> {
        Some(match key {
            "name" => self.name.clone(),
            "age" => self.age.to_string(),
            "gender" => self.gender.clone(),
            "occupation" => self.occupation.clone(),
            "background" => self.background.clone(),
            "traits" => self.traits.clone(),
            "cooperation_tendency" => self.cooperation_tendency.to_string(),
            _ => return None,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PersonaFile {
    persona: Vec<Persona>,
}

/// Minimum pool size for forming a public goods group.
pub const MIN_POOL: usize = 4;

pub fn parse_personas(text: &str) -> Result<Vec<Persona>, PersonaError> {
    let file: PersonaFile = toml::from_str(text).map_err(|e| PersonaError::Parse(e.to_string()))?;
    for p in &file.persona {
        p.validate()?;
    }
    if file.persona.len() < MIN_POOL {
        return Err(PersonaError::PoolTooSmall { needed: MIN_POOL, got: file.persona.len() });
    }
    Ok(file.persona)
}

pub fn load_personas(path: &Path) -> Result<Vec<Persona>, PersonaError> {
    parse_personas(&std::fs::read_to_string(path)?)
}

pub fn write_personas(personas: &[Persona]) -> String {
    toml::to_string(&PersonaFile { persona: personas.to_vec() }).expect("persona serialization")
}

/// The shipped 24-persona pool.
pub fn default_pool() -> Vec<Persona> {
    parse_personas(include_str!("../data/personas.toml")).expect("bundled persona file is valid")
}

/// Draws `n_agents` personas.
///
/// Without replacement (a seeded permutation prefix) when `n_agents` fits in
/// the pool, otherwise with replacement; every copy of a repeated persona gets
/// a ` (k)` suffix so rendered names stay unique.
pub fn assign_personas(pool: &[Persona], n_agents: usize, seed: u64) -> Result<Vec<Persona>, PersonaError> {
    if pool.is_empty() {
        return Err(PersonaError::EmptyPool);
    }
    let mut rng = rng_from(seed);
    let mut picked: Vec<Persona> = if n_agents <= pool.len() {
        let mut all = pool.to_vec();
        all.shuffle(&mut rng);
        all.truncate(n_agents);
        all
    } else {
        (0..n_agents).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect()
    };
    let mut totals: HashMap<String, usize> = HashMap::new();
    for p in &picked {
        *totals.entry(p.name.clone()).or_default() += 1;
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    for p in &mut picked {
        if totals[&p.name] > 1 {
            let k = seen.entry(p.name.clone()).or_default();
            *k += 1;
            p.name = format!("{} ({})", p.name, k);
        }
    }
    Ok(picked)
}

/// The four sample personas, with their assigned cooperation tendencies.
pub fn named_personas() -> Vec<Persona> {
    let p = |name: &str, age, gender: &str, occupation: &str, background: &str, traits: &str, t| Persona {
        name: name.into(),
        age,
        gender: gender.into(),
        occupation: occupation.into(),
        background: background.into(),
        traits: traits.into(),
        cooperation_tendency: t,
    };
    vec![
        p(
            "Grace Okonjo",
            36,
            "Female",
            "Non-profit Director",
            "Dedicated life to charitable causes and helping others",
            "Altruistic, optimistic about human nature, believes in karma",
            0.9,
        ),
        p(
            "James Miller",
            52,
            "Male",
            "Corporate Executive",
            "Ruthless businessman who believes in survival of the fittest",
            "Calculating, manipulative, and focused solely on personal gain",
            0.1,
        ),
        p(
            "Mei Lin",
            36,
            "Female",
            "Game Theory Researcher",
            "Studies strategic decision-making and cooperation",
            "Analytical, experimental, fascinated by human choices",
            0.5,
        ),
        p(
            "Leo Virtanen",
            52,
            "Male",
            "Professional Mediator",
            "Specializes in resolving complex disputes",
            "Balanced, insightful, seeks win-win solutions",
            0.7,
        ),
    ]
}

const GIVEN_NAMES: [&str; 20] = [
    "Amara", "Bruno", "Chiara", "Dmitri", "Elena", "Farid", "Greta", "Hiroshi", "Ines", "Jonas",
    "Kavya", "Lucas", "Marisol", "Nikolai", "Olusegun", "Priya", "Quentin", "Rosa", "Soren", "Tamsin",
];
const FAMILY_NAMES: [&str; 20] = [
    "Adeyemi", "Bergstrom", "Castillo", "Dubois", "Eriksen", "Fontaine", "Gallagher", "Haddad", "Ivanova",
    "Jaramillo", "Kowalski", "Lindqvist", "Moreau", "Nakamura", "Oyelaran", "Petrov", "Quiroga", "Rahman",
    "Sandoval", "Tanaka",
];
const OCCUPATIONS: [(&str, &str); 10] = [
    ("Nurse", "Works long shifts caring for patients in a city hospital"),
    ("Software Engineer", "Builds payment systems at a mid-sized startup"),
    ("High School Teacher", "Teaches civics and coaches the debate team"),
    ("Small Business Owner", "Runs a family bakery on thin margins"),
    ("Investment Banker", "Structures deals where every basis point matters"),
    ("Social Worker", "Supports families navigating the welfare system"),
    ("Sales Manager", "Leads a commission-driven regional sales team"),
    ("Farmer", "Manages a cooperative orchard with neighbouring growers"),
    ("Lawyer", "Litigates contract disputes for corporate clients"),
    ("Graduate Student", "Researches behavioural economics on a tight stipend"),
];
/// Trait phrases by tendency band, lowest band first.
const TRAIT_BANDS: [&str; 5] = [
    "Competitive, distrustful, and quick to exploit an advantage",
    "Pragmatic, guarded, and mostly self-interested",
    "Even-handed, cautious, and reciprocal",
    "Considerate, fair-minded, and willing to trust first",
    "Generous, community-minded, and deeply trusting",
];
const TENDENCY_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Generates `extra` personas beyond the four named ones.
///
/// Recipe: persona `i` takes given name `i`, family name `(7i + 3) mod 20`,
/// occupation `i mod 10`, tendency grid cell `(3i + 1) mod 5` with the trait
/// phrase of that band, gender alternating, and age `24 + (11i mod 40)`.
pub fn generate_personas(extra: usize) -> Vec<Persona> {
    (0..extra)
        .map(|i| {
            let band = (3 * i + 1) % TENDENCY_GRID.len();
            let (occupation, background) = OCCUPATIONS[i % OCCUPATIONS.len()];
            Persona {
                name: format!(
                    "{} {}",
                    GIVEN_NAMES[i % GIVEN_NAMES.len()],
                    FAMILY_NAMES[(7 * i + 3) % FAMILY_NAMES.len()]
                ),
                age: 24 + (11 * i as u32) % 40,
                gender: if i % 2 == 0 { "Female" } else { "Male" }.into(),
                occupation: occupation.into(),
                background: background.into(),
                traits: TRAIT_BANDS[band].into(),
                cooperation_tendency: TENDENCY_GRID[band],
            }
        })
        .collect()
}

/// Named personas followed by generated ones, `size` in total.
pub fn build_pool(size: usize) -> Vec<Persona> {
    let mut pool = named_personas();
    pool.extend(generate_personas(size.saturating_sub(pool.len())));
    pool.truncate(size);
    pool
}
