#![no_main]

use gabm_core::agent::graph::{topo_order, ArchitectureFile};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = ArchitectureFile::parse(text) {
        for name in file.names() {
            let cfg = file.architecture(name).expect("parse validated every architecture");
            let _ = topo_order(&cfg);
        }
    }
});
