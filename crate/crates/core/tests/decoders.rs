//! Replays the fuzz corpus seeds and throws mutated bytes at every decoder.

use std::path::PathBuf;

use proptest::prelude::*;
use viewmatch::pairs::{manifest_to_string, parse_manifest};
use viewmatch::pipeline::{parse_raw_scores, RunConfig};
use viewmatch::{pgm, Checkpoint};

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| std::fs::read(e.unwrap().path()).unwrap())
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn pgm_ok(bytes: &[u8]) {
    if let Ok(f) = pgm::decode(bytes) {
        assert!(f.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        let again = pgm::decode(&pgm::encode(&f)).unwrap();
        assert_eq!((again.width(), again.height()), (f.width(), f.height()));
    }
}

fn checkpoint_ok(bytes: &[u8]) {
    if let Ok(ck) = Checkpoint::from_bytes(bytes) {
        assert_eq!(ck.to_bytes(), bytes);
    }
}

fn manifest_ok(bytes: &[u8]) {
    if let Ok(pairs) = parse_manifest(&String::from_utf8_lossy(bytes)) {
        assert_eq!(parse_manifest(&manifest_to_string(&pairs)).unwrap(), pairs);
    }
}

fn text_ok(bytes: &[u8]) {
    let text = String::from_utf8_lossy(bytes);
    let _ = parse_raw_scores(&text);
    if let Ok(c) = RunConfig::from_json(&text) {
        let _ = c.validate();
    }
}

#[test]
fn corpus_seeds_decode() {
    for s in seeds("pgm_decode") {
        pgm_ok(&s);
    }
    let good = seeds("pgm_decode").iter().filter(|s| pgm::decode(s).is_ok()).count();
    assert!(good >= 3);
    for s in seeds("checkpoint_decode") {
        checkpoint_ok(&s);
    }
    for s in seeds("pair_manifest") {
        assert!(parse_manifest(std::str::from_utf8(&s).unwrap()).is_ok());
        manifest_ok(&s);
    }
    for s in seeds("raw_scores") {
        assert!(parse_raw_scores(std::str::from_utf8(&s).unwrap()).is_ok());
    }
    for s in seeds("run_config") {
        let c = RunConfig::from_json(std::str::from_utf8(&s).unwrap()).unwrap();
        c.validate().unwrap();
    }
}

fn mutate(mut base: Vec<u8>, edits: &[(usize, u8, u8)]) -> Vec<u8> {
    for &(pos, byte, op) in edits {
        let i = if base.is_empty() { 0 } else { pos % base.len() };
        match op % 3 {
            0 if !base.is_empty() => base[i] = byte,
            1 => base.insert(i.min(base.len()), byte),
            _ if !base.is_empty() => {
                base.truncate(i);
            }
            _ => {}
        }
    }
    base
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn mutated_inputs_never_panic(
        which in 0usize..16,
        edits in prop::collection::vec((any::<usize>(), any::<u8>(), any::<u8>()), 0..6),
    ) {
        let all: Vec<(&str, Vec<u8>)> = ["pgm_decode", "checkpoint_decode", "pair_manifest", "raw_scores", "run_config"]
            .iter()
            .flat_map(|t| seeds(t).into_iter().map(move |s| (*t, s)))
            .collect();
        let (target, base) = &all[which % all.len()];
        let bytes = mutate(base.clone(), &edits);
        match *target {
            "pgm_decode" => pgm_ok(&bytes),
            "checkpoint_decode" => checkpoint_ok(&bytes),
            "pair_manifest" => manifest_ok(&bytes),
            _ => text_ok(&bytes),
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        pgm_ok(&bytes);
        checkpoint_ok(&bytes);
        manifest_ok(&bytes);
        text_ok(&bytes);
    }
}
