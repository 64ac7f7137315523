#![no_main]

//! Input is `meta.json`, `annotations.json` and `ground_truth.json` separated
//! by NUL bytes; frames are three fixed 64x64 images.

use libfuzzer_sys::fuzz_target;
use viewmatch::dataset::ExamSequence;
use viewmatch::{pgm, Frame, FRAME_SIZE};

fuzz_target!(|data: &[u8]| {
    let mut parts = data.splitn(3, |&b| b == 0);
    let (Some(meta), Some(ann)) = (parts.next(), parts.next()) else { return };
    let gt = parts.next();
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    let img = pgm::encode(&Frame::filled(FRAME_SIZE, FRAME_SIZE, 0.5));
    for i in 0..3 {
        std::fs::write(frames.join(format!("frame_{i:04}.pgm")), &img).unwrap();
    }
    std::fs::write(dir.path().join("meta.json"), meta).unwrap();
    std::fs::write(dir.path().join("annotations.json"), ann).unwrap();
    if let Some(gt) = gt {
        std::fs::write(dir.path().join("ground_truth.json"), gt).unwrap();
    }
    if let Ok(exam) = ExamSequence::read(dir.path()) {
        assert!(exam.annotated_view_indices.iter().all(|&i| i < exam.frames.len()));
    }
});
