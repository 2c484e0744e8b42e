#![no_main]

use gabm_core::agent::decision::{parse_decision, ActionSpace, Decision};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&selector, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let max = u32::from(selector >> 3);
    let space = match selector % 5 {
        0 => ActionSpace::Binary { yes: "Punish".into(), no: "Do not punish".into() },
        1 => ActionSpace::Amount { max, unit: "dollars".into() },
        2 => ActionSpace::Vote { candidates: vec!["Ana Silva".into(), "Ana".into(), "Tom Ng".into()] },
        3 => ActionSpace::FreeText,
        _ => ActionSpace::None,
    };
    for clamp in [false, true] {
        if let Ok(d) = parse_decision(text, &space, clamp) {
            match (&space, d) {
                (ActionSpace::Amount { max, .. }, Decision::Amount(v)) => assert!(v <= *max),
                (ActionSpace::Vote { candidates }, Decision::Vote(Some(c))) => assert!(candidates.contains(&c)),
                _ => {}
            }
        }
    }
    let _ = gabm_core::agent::decision::last_number(text);
});
