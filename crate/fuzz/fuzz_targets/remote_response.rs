#![no_main]

use gabm_core::backends::remote::extract_content;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(content) = extract_content(text) {
        assert!(!content.trim().is_empty());
    }
});
