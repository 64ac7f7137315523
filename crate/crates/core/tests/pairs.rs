use std::collections::BTreeSet;

use viewmatch::dataset::{Dataset, ExamId, ExamSequence, ExamTime, Leg};
use viewmatch::pairs::*;
use viewmatch::synth::{generate_in_memory, pose_bucket, PhantomConfig};
use viewmatch::{Error, Frame, Rng};

fn exam(time: ExamTime, frames: usize, views: &[usize]) -> ExamSequence {
    ExamSequence {
        id: ExamId {
            patient: 1,
            leg: Leg::Right,
            time,
        },
        frames: vec![Frame::filled(64, 64, 0.5); frames],
        masks: Vec::new(),
        annotated_view_indices: views.to_vec(),
        pixel_spacing_cm: [0.1, 0.1],
        gain: 1.0,
        ground_truth: None,
    }
}

fn positives(p: &[PairExample]) -> Vec<&PairExample> {
    p.iter().filter(|p| p.label == PairLabel::Positive).collect()
}

#[test]
fn three_consecutive_views_give_three_positives() {
    let e = exam(ExamTime::T1, 10, &[3, 4, 5]);
    let pairs = build_pairs(&[&e], &PairConfig::default(), &mut Rng::new(0)).unwrap();
    let pos: BTreeSet<(usize, usize)> = positives(&pairs).iter().map(|p| (p.a.index, p.b.index)).collect();
    assert_eq!(pos, BTreeSet::from([(3, 4), (3, 5), (4, 5)]));
    assert_eq!(pairs.len(), 6, "1:1 negatives");
}

#[test]
fn one_view_per_exam_gives_one_cross_positive() {
    let a = exam(ExamTime::T1, 8, &[2]);
    let b = exam(ExamTime::T2, 8, &[5]);
    let pairs = build_pairs(&[&a, &b], &PairConfig::default(), &mut Rng::new(0)).unwrap();
    let pos = positives(&pairs);
    assert_eq!(pos.len(), 1);
    assert_eq!(pos[0].provenance, Provenance::CrossExam);
    assert_ne!(pos[0].a.exam.time, pos[0].b.exam.time);
}

#[test]
fn negative_ratio_and_distinct_frames() {
    let a = exam(ExamTime::T1, 30, &[10, 11, 12]);
    let b = exam(ExamTime::T2, 30, &[4, 5, 6]);
    let cfg = PairConfig {
        negatives_per_positive: 2.0,
    };
    let pairs = build_pairs(&[&a, &b], &cfg, &mut Rng::new(3)).unwrap();
    let n_pos = positives(&pairs).len();
    assert_eq!(n_pos, 3 + 3 + 9);
    assert_eq!(pairs.len() - n_pos, 30);
    let views = |r: &viewmatch::dataset::FrameRef| {
        let e = if r.exam.time == ExamTime::T1 { &a } else { &b };
        e.annotated_view_indices.contains(&r.index)
    };
    for p in &pairs {
        assert_ne!(p.a, p.b);
        if p.label == PairLabel::Negative {
            assert!(!(views(&p.a) && views(&p.b)));
        }
    }
}

#[test]
fn unannotated_exam_is_skipped() {
    let a = exam(ExamTime::T1, 8, &[2, 3, 4]);
    let b = exam(ExamTime::T2, 8, &[]);
    let pairs = build_pairs(&[&a, &b], &PairConfig::default(), &mut Rng::new(0)).unwrap();
    assert!(pairs.iter().all(|p| p.a.exam.time == ExamTime::T1 && p.b.exam.time == ExamTime::T1));
}

#[test]
fn mixed_legs_rejected() {
    let a = exam(ExamTime::T1, 8, &[2]);
    let mut b = exam(ExamTime::T2, 8, &[2]);
    b.id.leg = Leg::Left;
    assert!(matches!(
        build_pairs(&[&a, &b], &PairConfig::default(), &mut Rng::new(0)),
        Err(Error::Input(_))
    ));
}

fn small_dataset(patients: usize) -> Dataset {
    generate_in_memory(&PhantomConfig {
        patients,
        frames_per_exam: 60,
        ..PhantomConfig::default()
    })
    .unwrap()
}

#[test]
fn positives_share_pose_bucket_and_leg() {
    let data = small_dataset(3);
    let pairs = build_dataset_pairs(&data, &data.patients(), &PairConfig::default(), 0).unwrap();
    assert!(!pairs.is_empty());
    for p in positives(&pairs) {
        assert_eq!(p.a.exam.patient, p.b.exam.patient);
        assert_eq!(p.a.exam.leg, p.b.exam.leg);
        let pose = |r: &viewmatch::dataset::FrameRef| {
            let gt = data.exam(&r.exam).unwrap().ground_truth.as_ref().unwrap();
            pose_bucket(&gt.poses[r.index], gt.pose_bucket_width_px)
        };
        assert_eq!(pose(&p.a), pose(&p.b), "{p:?}");
        if p.provenance == Provenance::CrossExam {
            assert_ne!(p.a.exam.time, p.b.exam.time);
        }
    }
}

#[test]
fn patient_split_partitions() {
    let ids: Vec<u32> = (0..10).collect();
    let s = split_patients(&ids, 9).unwrap();
    assert_eq!((s.ssl.len(), s.clf.len()), (8, 2));
    assert_eq!(s, split_patients(&ids, 9).unwrap());
    let mut all: Vec<u32> = s.ssl.iter().chain(&s.clf).copied().collect();
    all.sort_unstable();
    assert_eq!(all, ids);
    assert!(matches!(split_patients(&ids[..9], 0), Err(Error::Config(_))));
}

#[test]
fn pair_split_is_80_10_10_by_label() {
    let data = small_dataset(10);
    let split = split_dataset(&data, &PairConfig::default(), 1).unwrap();
    let p = &split.pairs;
    let total = p.train.len() + p.val.len() + p.test.len();
    assert!(p.train.len() as f64 / total as f64 > 0.75);
    for slice in [&p.train, &p.val, &p.test] {
        assert!(slice.iter().any(|x| x.label == PairLabel::Positive));
        assert!(slice.iter().any(|x| x.label == PairLabel::Negative));
        for x in slice.iter() {
            assert!(split.patients.clf.contains(&x.a.exam.patient));
        }
    }
    let again = split_dataset(&data, &PairConfig::default(), 1).unwrap();
    assert_eq!(split, again);
}

#[test]
fn manifest_round_trip() {
    let data = small_dataset(1);
    let pairs = build_dataset_pairs(&data, &[0], &PairConfig::default(), 0).unwrap();
    let text = manifest_to_string(&pairs);
    assert_eq!(text.lines().count(), pairs.len());
    assert_eq!(parse_manifest(&text).unwrap(), pairs);
    assert!(text.lines().next().unwrap().contains("\"label\":"));
    assert!(matches!(parse_manifest("{\"patient\":1}"), Err(Error::Input(_))));
}
