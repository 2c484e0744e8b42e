#![no_main]

use gabm_core::harness::TranscriptLine;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(line) = TranscriptLine::from_line(text) {
        let back = serde_json::to_string(&line).expect("serializes");
        let _ = TranscriptLine::from_line(&back);
    }
});
