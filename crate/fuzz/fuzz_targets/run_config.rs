#![no_main]

use hillspec_cli::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = RunConfig::from_json(text) {
        // Validation may reject the values but must not panic.
        if config.validate().is_ok() {
            let _ = config.test_function();
        }
    }
});
