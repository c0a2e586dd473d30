#![no_main]

use hillspec::PeriodicPotential;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(q) = PeriodicPotential::from_json(text) {
        let again = PeriodicPotential::from_json(&q.to_json()).expect("serialized potential parses");
        assert_eq!(q, again);
    }
});
