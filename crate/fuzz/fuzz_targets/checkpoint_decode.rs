#![no_main]

use libfuzzer_sys::fuzz_target;
use viewmatch::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        assert_eq!(ck.to_bytes(), data);
    }
});
