#![no_main]

use hillspec::PeriodicPotential;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = std::str::from_utf8(data) {
        if let Ok(q) = PeriodicPotential::parse_builtin(spec) {
            assert!(q.declared_period() > 0.0);
        }
    }
});
