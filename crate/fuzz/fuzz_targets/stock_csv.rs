#![no_main]

use imo3::problems::{build_stock_problem_from_prices, StockPrices};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(prices) = StockPrices::parse(data) {
        let _ = build_stock_problem_from_prices(&prices);
    }
});
