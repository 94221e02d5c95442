#![no_main]

use libfuzzer_sys::fuzz_target;
use pnpmpc::geometry::parse_set_spec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = parse_set_spec(text) {
            let _ = p.abs_bounds();
            let _ = p.to_spec().build();
        }
    }
});
