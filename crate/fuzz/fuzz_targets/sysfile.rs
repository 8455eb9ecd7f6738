#![no_main]

use libfuzzer_sys::fuzz_target;
use ssc_core::sysfile::SystemFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = SystemFile::from_json(text) {
        // anything accepted must survive a write/read cycle unchanged
        let again = SystemFile::from_json(&file.to_json()).expect("re-parse of written file");
        assert_eq!(again, file);
    }
});
