#![no_main]

use libfuzzer_sys::fuzz_target;
use pnpmpc::io::parse_design_bundle;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(bundle) = parse_design_bundle(text) {
            let _ = bundle.controllers();
        }
    }
});
