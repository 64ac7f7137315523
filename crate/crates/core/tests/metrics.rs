use proptest::prelude::*;
use viewmatch::dataset::{ExamTime, Leg};
use viewmatch::metrics::*;
use viewmatch::ncc::ncc;
use viewmatch::{Frame, Rng};

/// Counts correctly ordered (positive, negative) pairs directly.
fn pairwise_auc(items: &[ScoredLabel]) -> f64 {
    let (mut good, mut total) = (0.0, 0.0);
    for p in items.iter().filter(|x| x.label == 1) {
        for n in items.iter().filter(|x| x.label == 0) {
            total += 1.0;
            if p.score > n.score {
                good += 1.0;
            } else if p.score == n.score {
                good += 0.5;
            }
        }
    }
    good / total
}

fn random_set(rng: &mut Rng, n: usize, levels: usize) -> Vec<ScoredLabel> {
    loop {
        let v: Vec<ScoredLabel> = (0..n)
            .map(|_| ScoredLabel {
                score: rng.below(levels) as f64 / levels as f64,
                label: rng.bernoulli(0.4) as u8,
            })
            .collect();
        let pos = v.iter().filter(|x| x.label == 1).count();
        if pos > 0 && pos < n {
            return v;
        }
    }
}

#[test]
fn auc_matches_pairwise_counting() {
    let mut rng = Rng::new(21);
    for _ in 0..300 {
        let n = 2 + rng.below(60);
        let levels = 1 + rng.below(20);
        let set = random_set(&mut rng, n, levels);
        assert!((roc_auc(&set).unwrap() - pairwise_auc(&set)).abs() < 1e-9);
    }
}

#[test]
fn auc_of_unrelated_scores_is_half() {
    let mut rng = Rng::new(22);
    let set: Vec<ScoredLabel> = (0..20_000)
        .map(|_| ScoredLabel {
            score: rng.uniform() as f64,
            label: rng.bernoulli(0.5) as u8,
        })
        .collect();
    assert!((roc_auc(&set).unwrap() - 0.5).abs() < 0.03);
}

proptest! {
    #[test]
    fn auc_monotone_invariant_and_complementary(seed in any::<u64>(), n in 2usize..80) {
        let set = random_set(&mut Rng::new(seed), n, 10);
        let a = roc_auc(&set).unwrap();
        let warped: Vec<ScoredLabel> = set
            .iter()
            .map(|x| ScoredLabel { score: (3.0 * x.score).exp() - 7.0, label: x.label })
            .collect();
        prop_assert!((roc_auc(&warped).unwrap() - a).abs() < 1e-12);
        let flipped: Vec<ScoredLabel> = set
            .iter()
            .map(|x| ScoredLabel { score: x.score, label: 1 - x.label })
            .collect();
        prop_assert!((roc_auc(&flipped).unwrap() + a - 1.0).abs() < 1e-9);
    }

    #[test]
    fn area_error_is_nonnegative_and_spacing_free(gt in 1u32..4000, pred in 1u32..4000, s in 0.01f64..1.0) {
        let m = |count: u32, source| AreaMeasurement {
            area_cm2: count as f64 * s * s,
            source,
            pixel_spacing_cm: [s, s],
        };
        let d = area_error(&m(gt, AreaSource::GroundTruth), &m(pred, AreaSource::Predicted)).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d == 0.0, gt == pred);
        let expected = (gt as f64 - pred as f64).abs() / gt as f64;
        prop_assert!((d - expected).abs() < 1e-12);
    }

    #[test]
    fn ncc_symmetric_bounded_affine_invariant(
        a in prop::collection::vec(0.0f32..1.0, 16),
        b in prop::collection::vec(0.0f32..1.0, 16),
        gain in 0.1f32..5.0,
        offset in -2.0f32..2.0,
    ) {
        let fa = Frame::new(4, 4, a.clone()).unwrap();
        let fb = Frame::new(4, 4, b).unwrap();
        let s = ncc(&fa, &fb).unwrap();
        prop_assert!(s.abs() <= 1.0 + 1e-6);
        prop_assert!((s - ncc(&fb, &fa).unwrap()).abs() < 1e-6);
        let ta = Frame::new(4, 4, a.iter().map(|v| gain * v + offset).collect()).unwrap();
        prop_assert!((ncc(&ta, &fb).unwrap() - s).abs() < 1e-5);
    }
}

#[test]
fn report_buckets_and_aggregation() {
    let scores = vec![
        ScoredLabel { score: 0.9, label: 1 },
        ScoredLabel { score: 0.2, label: 0 },
        ScoredLabel { score: 0.6, label: 0 },
    ];
    let outcome = |time, d, hit| RetrievalOutcome {
        patient: 0,
        leg: Leg::Left,
        time,
        truth_index: 5,
        top: vec![5, 4, 6],
        top1_hit: hit,
        top3_hit: true,
        d,
    };
    let outcomes = vec![
        outcome(ExamTime::T1, 0.0, true),
        outcome(ExamTime::T2, 0.1, false),
        outcome(ExamTime::T3, 0.2, true),
    ];
    let r = evaluate_retrieval("test", &scores, &outcomes).unwrap();
    assert_eq!(r.auc, 1.0);
    assert_eq!((r.precision, r.recall), (0.5, 1.0));
    let keys: Vec<&str> = r.d_buckets.keys().map(String::as_str).collect();
    assert_eq!(keys, vec!["T1T1", "T1T2", "T1T3", "overall"]);
    assert!((r.mean_d - 0.1).abs() < 1e-12);
    assert!((r.top1_hit_rate - 2.0 / 3.0).abs() < 1e-12);
    assert!(evaluate_retrieval("test", &[], &outcomes).is_err());

    let json = serde_json::to_value(&r).unwrap();
    for key in ["auc", "precision", "recall", "f1", "mean_d"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}

#[test]
fn perfect_retrieval_has_zero_error() {
    let outcomes: Vec<RetrievalOutcome> = ExamTime::ALL
        .iter()
        .map(|&time| RetrievalOutcome {
            patient: 1,
            leg: Leg::Right,
            time,
            truth_index: 3,
            top: vec![3],
            top1_hit: true,
            top3_hit: true,
            d: 0.0,
        })
        .collect();
    let scores = [ScoredLabel { score: 0.7, label: 1 }, ScoredLabel { score: 0.4, label: 0 }];
    let r = evaluate_retrieval("x", &scores, &outcomes).unwrap();
    assert!(r.d_buckets.values().all(|s| s.mean == 0.0));
}
