#![no_main]

use libfuzzer_sys::fuzz_target;
use ssc_core::sysfile::parse_eps_grid;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(grid) = parse_eps_grid(text) {
        assert!(grid.len() >= 2);
        assert!(grid.iter().all(|e| e.is_finite() && *e > 0.0));
        assert!(grid.windows(2).all(|w| w[0] <= w[1]));
    }
});
