#![no_main]

use imo3::dataset::LogDataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(log) = LogDataset::read_ndjson(data) {
        let mut out = Vec::new();
        log.write_ndjson(&mut out).expect("write parsed log");
        let back = LogDataset::read_ndjson(out.as_slice()).expect("re-read written log");
        assert_eq!(back, log);
    }
});
