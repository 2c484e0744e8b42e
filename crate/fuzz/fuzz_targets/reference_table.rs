#![no_main]

use gabm_core::harness::reference::ReferenceTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = ReferenceTable::parse(text) {
        table.validate().expect("parsed tables are valid");
    }
});
