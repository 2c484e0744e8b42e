#![no_main]

use gabm_core::agent::template::{placeholders, render};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let names = placeholders(text);
    let _ = render(text, |k| (k.len() % 2 == 0).then(|| format!("<{k}>")));
    if render(text, |_| Some(String::new())).is_ok() && !names.is_empty() {
        assert!(render(text, |_| None).is_err());
    }
});
