#![no_main]

use hillspec::expansion::TestFunction;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = std::str::from_utf8(data) else { return };
    if let Ok(f) = TestFunction::parse(spec) {
        let (lo, hi) = f.support();
        assert!(lo.is_finite() && hi.is_finite() && lo <= hi);
        let _ = f.evaluate(0.5 * (lo + hi));
    }
});
