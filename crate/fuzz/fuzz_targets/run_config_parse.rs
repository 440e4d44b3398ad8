#![no_main]

use coral_core::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json_str(text) {
        // The flat form written next to checkpoints parses back to the same run.
        let again = RunConfig::from_json_str(&cfg.to_json().to_string()).expect("round trip");
        assert_eq!(again, cfg);
    }
});
