#![no_main]

use imo3_service::{parse_answer_request, parse_create_request};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Err(e) = parse_create_request(data) {
        assert!((400..500).contains(&e.status()));
    }
    if let Ok(a) = parse_answer_request(data) {
        assert!(a.round >= 1);
    }
});
