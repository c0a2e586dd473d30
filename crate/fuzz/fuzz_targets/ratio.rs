#![no_main]

use hillspec_cli::config::parse_ratio;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((_, q)) = parse_ratio(text) {
            assert!(q > 0);
        }
    }
});
