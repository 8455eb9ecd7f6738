#![no_main]

use libfuzzer_sys::fuzz_target;
use ssc_core::sysfile::{parse_method, resolve_method, Method};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let (method, fix) = match text.split_once('\n') {
        Some((m, f)) => (m, Some(f)),
        None => (text, None),
    };
    if let Ok(m) = parse_method(method) {
        let name = match m {
            Method::Stab(p) => p.to_string(),
            Method::Est(p) => p.to_string(),
        };
        assert_eq!(parse_method(&name).unwrap(), m);
    }
    let _ = resolve_method(method, fix);
});
