#![no_main]

use gabm_core::personas::{assign_personas, parse_personas, write_personas};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pool) = parse_personas(text) {
        let again = parse_personas(&write_personas(&pool)).expect("written pool parses");
        assert_eq!(again, pool);
        let _ = assign_personas(&pool, 4, 7);
    }
});
