#![no_main]

use imo3::harness::{emit_plot_data, read_results_csv, METRICS};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_results_csv(data) {
        for metric in METRICS {
            let _ = emit_plot_data(&rows, metric);
        }
    }
});
