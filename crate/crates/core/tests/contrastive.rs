mod common;

use common::nt_xent_oracle;
use proptest::prelude::*;
use viewmatch::contrastive::*;
use viewmatch::model::{Classifier, Encoder, SslModel};
use viewmatch::nn::Tensor;
use viewmatch::synth::{generate_in_memory, PhantomConfig};
use viewmatch::{Error, Frame, Rng, FRAME_SIZE};

fn random_z(rng: &mut Rng, rows: usize, dim: usize) -> Vec<f32> {
    Tensor::randn(&[rows, dim], 1.0, rng).into_data()
}

#[test]
fn loss_matches_enumeration() {
    let mut rng = Rng::new(5);
    for n in [1, 2, 4, 8] {
        for _ in 0..25 {
            let z = random_z(&mut rng, 2 * n, 16);
            let tau = rng.uniform_range(0.1, 1.0);
            let (l, _) = nt_xent_loss(&z, 16, tau).unwrap();
            let o = nt_xent_oracle(&z, 16, tau as f64);
            assert!((l - o).abs() < 1e-5, "n={n}: {l} vs {o}");
        }
    }
}

#[test]
fn zero_row_is_tolerated() {
    let mut z = random_z(&mut Rng::new(1), 4, 3);
    z[..3].fill(0.0);
    let (l, g) = nt_xent_loss(&z, 3, 0.5).unwrap();
    assert!(l.is_finite());
    assert!(g[..3].iter().all(|&x| x == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_scale_invariant(seed in any::<u64>(), n in 1usize..6, c in 0.01f32..100.0) {
        let z = random_z(&mut Rng::new(seed), 2 * n, 8);
        let scaled: Vec<f32> = z.iter().map(|v| v * c).collect();
        let (a, _) = nt_xent_loss(&z, 8, 0.5).unwrap();
        let (b, _) = nt_xent_loss(&scaled, 8, 0.5).unwrap();
        prop_assert!((a - b).abs() < 1e-5);
    }

    #[test]
    fn loss_is_nonnegative_and_swap_symmetric(seed in any::<u64>(), n in 1usize..6, tau in 0.05f32..2.0) {
        let z = random_z(&mut Rng::new(seed), 2 * n, 8);
        let mut swapped = z.clone();
        for k in 0..n {
            let (a, b) = swapped.split_at_mut((2 * k + 1) * 8);
            a[2 * k * 8..].swap_with_slice(&mut b[..8]);
        }
        let (l, _) = nt_xent_loss(&z, 8, tau).unwrap();
        let (s, _) = nt_xent_loss(&swapped, 8, tau).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l - s).abs() < 1e-5);
    }

    #[test]
    fn cosine_is_bounded(u in prop::collection::vec(-10.0f32..10.0, 6), v in prop::collection::vec(-10.0f32..10.0, 6)) {
        let s = cosine_sim(&u, &v);
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}

fn textured() -> Frame {
    let px = (0..FRAME_SIZE * FRAME_SIZE)
        .map(|i| ((i * 37) % 101) as f32 / 100.0)
        .collect();
    Frame::new(FRAME_SIZE, FRAME_SIZE, px).unwrap()
}

#[test]
fn augmentation_statistics() {
    let cfg = AugmentConfig::default();
    let mut rng = Rng::new(77);
    let draws = 10_000;
    let side = cfg.crop_margin + 1;
    let mut flips = 0;
    let mut counts = vec![0usize; side * side];
    for _ in 0..draws {
        let d = AugmentDraw::sample(&cfg, &mut rng);
        flips += d.flip as usize;
        counts[d.y0 * side + d.x0] += 1;
    }
    let rate = flips as f64 / draws as f64;
    assert!((rate - 0.5).abs() < 0.02, "flip rate {rate}");
    let expected = draws as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 120 degrees of freedom
    assert!(chi2 < 158.95, "chi-square {chi2}");
}

#[test]
fn augment_pair_follows_draws() {
    let cfg = AugmentConfig::default();
    let img = textured();
    let mut a = Rng::new(3);
    let mut b = Rng::new(3);
    let (x, y) = augment_pair(&img, &cfg, &mut a).unwrap();
    let dx = AugmentDraw::sample(&cfg, &mut b);
    let dy = AugmentDraw::sample(&cfg, &mut b);
    assert_eq!(x, augment_view(&img, &cfg, dx).unwrap());
    assert_eq!(y, augment_view(&img, &cfg, dy).unwrap());
}

fn tiny_frames() -> Vec<Frame> {
    let mut rng = Rng::new(8);
    (0..6)
        .map(|_| {
            let px = (0..FRAME_SIZE * FRAME_SIZE).map(|_| rng.uniform()).collect();
            Frame::new(FRAME_SIZE, FRAME_SIZE, px).unwrap()
        })
        .collect()
}

fn tiny_ssl() -> SslTrainConfig {
    SslTrainConfig {
        batch_size: 2,
        epochs: 2,
        steps_per_epoch: Some(1),
        seed: 4,
        ..SslTrainConfig::default()
    }
}

fn ssl_bytes(m: &SslModel) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.vmck");
    m.save(&p).unwrap();
    std::fs::read(p).unwrap()
}

#[test]
fn ssl_training_is_deterministic() {
    let frames = tiny_frames();
    let refs: Vec<&Frame> = frames.iter().collect();
    let (a, la) = train_ssl(&refs, &tiny_ssl()).unwrap();
    let (b, lb) = train_ssl(&refs, &tiny_ssl()).unwrap();
    assert_eq!(la, lb);
    assert_eq!(ssl_bytes(&a), ssl_bytes(&b));
}

#[test]
fn zero_learning_rate_leaves_weights() {
    let frames = tiny_frames();
    let refs: Vec<&Frame> = frames.iter().collect();
    let cfg = SslTrainConfig { lr: 0.0, ..tiny_ssl() };
    let (trained, _) = train_ssl(&refs, &cfg).unwrap();
    // Same initialization stream as the trainer.
    let mut init = Rng::stream(cfg.seed, &[1]);
    let fresh_enc = Encoder::new(&mut init);
    let fresh = viewmatch::model::Projection::new(cfg.dropout, &mut init);
    for (b, f) in trained.encoder.blocks.iter().zip(&fresh_enc.blocks) {
        assert_eq!(b.weight.data(), f.weight.data());
        assert_eq!(b.bias.data(), f.bias.data());
        assert_eq!(b.bn.gamma.data(), f.bn.gamma.data());
        assert_eq!(b.bn.beta.data(), f.bn.beta.data());
    }
    assert_eq!(trained.projection.fc1.weight.data(), fresh.fc1.weight.data());
    assert_eq!(trained.projection.fc2.bias.data(), fresh.fc2.bias.data());
}

#[test]
fn ssl_rejects_bad_inputs() {
    assert!(matches!(train_ssl(&[], &tiny_ssl()), Err(Error::Config(_))));
    let frames = tiny_frames();
    let refs: Vec<&Frame> = frames.iter().collect();
    let cfg = SslTrainConfig {
        temperature: 0.0,
        ..tiny_ssl()
    };
    assert!(matches!(train_ssl(&refs, &cfg), Err(Error::Config(_))));
    let cfg = SslTrainConfig {
        batch_size: 1,
        ..tiny_ssl()
    };
    assert!(matches!(train_ssl(&refs, &cfg), Err(Error::Config(_))));
}

#[test]
fn classifier_rejects_single_class() {
    let cfg = PhantomConfig {
        patients: 1,
        frames_per_exam: 6,
        ..PhantomConfig::default()
    };
    let data = generate_in_memory(&cfg).unwrap();
    let exams = data.leg_exams(0, viewmatch::dataset::Leg::Left);
    let pairs = viewmatch::pairs::build_pairs(&exams, &Default::default(), &mut Rng::new(0)).unwrap();
    let positives: Vec<_> = pairs
        .into_iter()
        .filter(|p| p.label == viewmatch::pairs::PairLabel::Positive)
        .collect();
    let enc = Encoder::new(&mut Rng::new(0));
    let r = train_classifier(&enc, &data, &positives, &[], &ClfTrainConfig::default());
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn retrieval_ranking_rules() {
    let mut rng = Rng::new(12);
    let enc = Encoder::new(&mut rng);
    let clf = Classifier::new(0.2, &mut rng);
    let frames = tiny_frames();
    let reference = &frames[0];

    let only = retrieve(reference, std::slice::from_ref(reference), &enc, &clf).unwrap();
    assert_eq!(only[0].index, 0);

    let dup = vec![frames[1].clone(), frames[2].clone(), frames[1].clone(), frames[2].clone()];
    let r = retrieve(reference, &dup, &enc, &clf).unwrap();
    for w in r.windows(2) {
        assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].index < w[1].index));
    }
    assert!(r[0].score == r[1].score && r[0].index < r[1].index);

    let perm = [3usize, 0, 4, 2, 5, 1];
    let shuffled: Vec<Frame> = perm.iter().map(|&i| frames[i].clone()).collect();
    let a = retrieve(reference, &frames, &enc, &clf).unwrap();
    let b = retrieve(reference, &shuffled, &enc, &clf).unwrap();
    let a_order: Vec<usize> = a.iter().map(|r| r.index).collect();
    let b_order: Vec<usize> = b.iter().map(|r| perm[r.index]).collect();
    assert_eq!(a_order, b_order);

    assert!(matches!(retrieve(reference, &[], &enc, &clf), Err(Error::Input(_))));
}
