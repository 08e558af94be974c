#![no_main]

use imo3_service::parse_event_log;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(log) = parse_event_log(text) {
            assert!(log.answers.len() <= log.config.budget_t);
        }
    }
});
