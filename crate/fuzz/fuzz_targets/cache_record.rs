#![no_main]

use gabm_core::backends::cache::{CacheRecord, CacheStore};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = CacheRecord::from_line(text);
    }
    // Whole-file loading, including torn tails and conflicts.
    let dir = std::env::temp_dir().join(format!("gabm-fuzz-cache-{}", std::process::id()));
    let _ = std::fs::create_dir_all(&dir);
    let path = dir.join("cache.jsonl");
    if std::fs::write(&path, data).is_ok() {
        let _ = CacheStore::open(&path);
    }
});
