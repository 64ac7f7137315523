#![no_main]

use libfuzzer_sys::fuzz_target;
use viewmatch::metrics::{prf1, roc_auc};
use viewmatch::pipeline::parse_raw_scores;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(raw) = parse_raw_scores(text) {
        let items: Vec<_> = raw.iter().map(|r| r.scored_label()).collect();
        if let Ok(auc) = roc_auc(&items) {
            assert!((0.0..=1.0).contains(&auc));
        }
        let _ = prf1(&items, 0.5);
    }
});
