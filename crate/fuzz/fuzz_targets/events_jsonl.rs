#![no_main]

use libfuzzer_sys::fuzz_target;
use pnpmpc::io::{read_events_jsonl, write_events_jsonl};

fuzz_target!(|data: &[u8]| {
    if let Ok(events) = read_events_jsonl(data) {
        let mut buf = Vec::new();
        write_events_jsonl(&mut buf, &events).expect("re-encoding parsed events");
        let again = read_events_jsonl(buf.as_slice()).expect("round trip");
        assert_eq!(again.len(), events.len());
    }
});
