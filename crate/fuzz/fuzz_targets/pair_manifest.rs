#![no_main]

use libfuzzer_sys::fuzz_target;
use viewmatch::pairs::{manifest_to_string, parse_manifest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pairs) = parse_manifest(text) {
        let again = parse_manifest(&manifest_to_string(&pairs)).expect("written manifest parses");
        assert_eq!(again, pairs);
    }
});
