#![no_main]

use libfuzzer_sys::fuzz_target;
use pnpmpc::cli::analyze_trace;
use pnpmpc::io::{read_trace_csv, write_trace_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = read_trace_csv(data) {
        if trace.iter().all(|r| r.step < 100_000) {
            let _ = analyze_trace(&trace, 0.5);
        }
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace).expect("re-encoding a parsed trace");
    }
});
