#![no_main]

use libfuzzer_sys::fuzz_target;
use pnpmpc::io::parse_run_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_run_config(text) {
            let _ = cfg.scenario();
        }
    }
});
