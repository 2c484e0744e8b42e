#![no_main]

use gabm_core::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        let _ = cfg.parsed_conditions();
        let _ = ExperimentConfig::parse(&cfg.to_toml());
    }
});
