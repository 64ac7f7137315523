#![no_main]

use libfuzzer_sys::fuzz_target;
use viewmatch::pgm;

fuzz_target!(|data: &[u8]| {
    if let Ok(frame) = pgm::decode(data) {
        assert!(frame.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        let again = pgm::decode(&pgm::encode(&frame)).expect("re-encoded frame decodes");
        assert_eq!((again.width(), again.height()), (frame.width(), frame.height()));
    }
});
