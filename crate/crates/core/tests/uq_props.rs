use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use uqih_core::manifest::{StackEntry, StackKind, StackManifest};
use uqih_core::uq::{
    align_stack, evaluate_stacks, pixelwise_std, psd, read_records, register_translation, write_evaluation,
    SampleStack, UqOptions, RECORDS_FILE,
};
use uqih_core::{io, Image, RangeHint};
use uqih_testkit::fixtures::texture;
use uqih_testkit::oracle::pixel_std;

fn random_stack(m: usize, w: usize, h: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            let data = (0..w * h).map(|_| rng.random_range(-3.0..3.0)).collect();
            Image::new(w, h, 1, data, RangeHint::Unspecified).unwrap()
        })
        .collect()
}

fn jitter(img: &Image, sigma: f64, rng: &mut ChaCha8Rng) -> Image {
    let data = img.data().iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    Image::new(img.width(), img.height(), 1, data, RangeHint::Unspecified).unwrap()
}

fn mc(samples: Vec<Image>) -> SampleStack {
    SampleStack::new("s", samples, StackKind::McDropout, vec![]).unwrap()
}

#[test]
fn std_matches_naive_loop() {
    let samples = random_stack(25, 31, 17, 9);
    let sigma = pixelwise_std(&mc(samples.clone())).unwrap();
    let naive = pixel_std(&samples.iter().map(|s| s.data().to_vec()).collect::<Vec<_>>());
    for (a, b) in sigma.data().iter().zip(&naive) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn closed_forms() {
    let same = vec![texture(16, 16, 2.0, 1); 5];
    assert!(pixelwise_std(&mc(same)).unwrap().data().iter().all(|&v| v == 0.0));
    let pair = vec![
        Image::filled(8, 8, 0.0, RangeHint::Unspecified).unwrap(),
        Image::filled(8, 8, 2.0, RangeHint::Unspecified).unwrap(),
    ];
    let sigma = pixelwise_std(&mc(pair)).unwrap();
    assert!(sigma.data().iter().all(|&v| v == 1.0));
    assert_eq!(psd(&sigma), 1.0);
}

#[test]
fn registration_recovers_every_small_shift() {
    let fixed = texture(64, 64, 2.0, 17);
    for dy in -5isize..=5 {
        for dx in -5isize..=5 {
            let moving = fixed.roll(dy, dx);
            let ((ry, rx), warn) = register_translation(&moving, &fixed, 10).unwrap();
            assert_eq!((ry, rx), (-dy, -dx));
            assert!(warn.is_none());
        }
    }
}

fn mad(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64
}

fn pairwise_mad(samples: &[Image]) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            total += mad(&samples[i], &samples[j]);
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn alignment_reduces_disagreement() {
    let source = texture(64, 64, 2.0, 23);
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let shifts = [(0isize, 0isize), (1, -2), (-3, 3), (2, 1), (-1, -3)];
    let samples: Vec<Image> = shifts
        .iter()
        .map(|&(dy, dx)| jitter(&source.roll(dy, dx), 0.01, &mut rng))
        .collect();
    let ids = (0..5).map(|m| format!("m{m}")).collect();
    let stack = SampleStack::new("s", samples.clone(), StackKind::Ensemble, ids).unwrap();
    let aligned = align_stack(&stack, &source, 5, 10).unwrap();
    assert!(aligned.samples().iter().all(|s| s.width() == 54 && s.height() == 54));
    let cropped: Vec<Image> = samples.iter().map(|s| s.crop(5, 5, 54, 54).unwrap()).collect();
    assert!(pairwise_mad(aligned.samples()) < pairwise_mad(&cropped));

    let copies = mc(vec![source.clone(); 3]);
    let out = align_stack(&copies, &source, 5, 10).unwrap();
    for s in out.samples() {
        assert_eq!(*s, source.crop(5, 5, 54, 54).unwrap());
    }
    let big = mc(vec![texture(256, 256, 2.0, 1); 2]);
    assert!(align_stack(&big, &big.samples()[0], 128, 10).is_err());
}

/// Expected population std of `m` standard normals: `c4(m)·√((m − 1)/m)`,
/// with `c4(5) = √(1/2)·Γ(5/2)/Γ(2) = 3√(2π)/8`.
fn expected_population_std_m5() -> f64 {
    let c4 = 3.0 * (2.0 * std::f64::consts::PI).sqrt() / 8.0;
    c4 * (4.0f64 / 5.0).sqrt()
}

/// Monte-Carlo estimate of the same quantity from the naive std oracle.
fn monte_carlo_population_std(m: usize, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Vec<f64>> =
        (0..m).map(|_| (0..draws).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    pixel_std(&samples).iter().sum::<f64>() / draws as f64
}

#[test]
fn ensemble_mpsd_matches_population_std_expectation() {
    let dir = tempfile::tempdir().unwrap();
    let sigma = 0.2;
    let m = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let stacks: Vec<StackEntry> = (0..20)
        .map(|i| {
            let base = texture(32, 32, 2.0, 500 + i);
            let source_path = dir.path().join(format!("src{i}.uqt"));
            io::save_raw_tensor(&source_path, &base).unwrap();
            let sample_paths = (0..m)
                .map(|k| {
                    let s = jitter(&base, sigma, &mut rng);
                    let p = dir.path().join(format!("s{i}_{k}.uqt"));
                    io::save_raw_tensor(&p, &s).unwrap();
                    p
                })
                .collect();
            StackEntry {
                source_id: format!("img{i:02}"),
                source_path,
                sample_paths,
                model_ids: Some((0..m).map(|k| format!("model{k}")).collect()),
            }
        })
        .collect();
    let manifest = dir.path().join("stacks.json");
    StackManifest { kind: StackKind::Ensemble, stacks }.save(&manifest).unwrap();

    let eval = evaluate_stacks(&manifest, &UqOptions::default()).unwrap();
    let oracle = sigma * monte_carlo_population_std(m, 200_000, 7);
    assert!((oracle - sigma * expected_population_std_m5()).abs() < 0.005 * sigma);
    assert!((eval.mpsd - oracle).abs() < 0.05 * oracle, "{} vs {oracle}", eval.mpsd);

    let out = dir.path().join("out");
    write_evaluation(&eval, &out).unwrap();
    let lines = read_records(&out.join(RECORDS_FILE)).unwrap();
    assert_eq!(lines.len(), 20);
    for (line, rec) in lines.iter().zip(&eval.records) {
        let map = io::load_image(&out.join(&line.sigma_map)).unwrap();
        assert!((psd(&map) - line.psd).abs() <= 1e-10);
        assert_eq!(line.psd, rec.psd);
    }
}

#[test]
fn evaluation_examples_and_skips() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, value: f64| {
        let p = dir.path().join(name);
        io::save_raw_tensor(&p, &Image::filled(8, 8, value, RangeHint::Unspecified).unwrap()).unwrap();
        p
    };
    let zero = write("zero.uqt", 0.0);
    let two = write("two.uqt", 2.0);
    let entry = |id: &str, paths: Vec<std::path::PathBuf>| StackEntry {
        source_id: id.into(),
        source_path: zero.clone(),
        sample_paths: paths,
        model_ids: None,
    };
    let manifest = dir.path().join("m.json");
    StackManifest {
        kind: StackKind::McDropout,
        stacks: vec![
            entry("b", vec![zero.clone(), two.clone()]),
            entry("a", vec![zero.clone(), zero.clone()]),
            entry("c", vec![zero.clone()]),
            entry("d", vec![zero.clone(), dir.path().join("missing.uqt")]),
        ],
    }
    .save(&manifest)
    .unwrap();
    let eval = evaluate_stacks(&manifest, &UqOptions::default()).unwrap();
    assert_eq!(eval.records.iter().map(|r| r.source_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    assert_eq!(eval.mpsd, 0.5);
    assert_eq!(eval.skipped.iter().map(|s| s.source_id.as_str()).collect::<Vec<_>>(), ["c", "d"]);

    StackManifest { kind: StackKind::McDropout, stacks: vec![entry("c", vec![zero.clone()])] }.save(&manifest).unwrap();
    assert!(evaluate_stacks(&manifest, &UqOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn std_ignores_sample_order(seed in any::<u64>(), m in 2usize..8) {
        let samples = random_stack(m, 6, 5, seed);
        let mut reversed = samples.clone();
        reversed.reverse();
        let mut rotated = samples.clone();
        rotated.rotate_left(1);
        let base = pixelwise_std(&mc(samples)).unwrap();
        for other in [reversed, rotated] {
            let sigma = pixelwise_std(&mc(other)).unwrap();
            for (a, b) in base.data().iter().zip(sigma.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn std_ignores_constant_offsets(seed in any::<u64>(), offset in -100.0f64..100.0) {
        let samples = random_stack(4, 5, 5, seed);
        let shifted: Vec<Image> = samples.iter().map(|s| s.map(RangeHint::Unspecified, |v| v + offset).unwrap()).collect();
        let a = pixelwise_std(&mc(samples)).unwrap();
        let b = pixelwise_std(&mc(shifted)).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + offset.abs()));
        }
    }

    #[test]
    fn psd_scales_linearly(seed in any::<u64>(), lambda in 0.01f64..100.0, exponent in -8i32..8) {
        let samples = random_stack(3, 7, 4, seed);
        let base = psd(&pixelwise_std(&mc(samples.clone())).unwrap());
        let scaled: Vec<Image> = samples.iter().map(|s| s.map(RangeHint::Unspecified, |v| lambda * v).unwrap()).collect();
        let got = psd(&pixelwise_std(&mc(scaled)).unwrap());
        prop_assert!((got - lambda * base).abs() <= 1e-12 * lambda * base.max(1.0));
        // powers of two scale every intermediate exactly
        let p = 2f64.powi(exponent);
        let exact: Vec<Image> = samples.iter().map(|s| s.map(RangeHint::Unspecified, |v| p * v).unwrap()).collect();
        prop_assert_eq!(psd(&pixelwise_std(&mc(exact)).unwrap()), p * base);
    }

    #[test]
    fn registration_is_exact_within_range(seed in 0u64..1000, dy in -10isize..=10, dx in -10isize..=10) {
        let fixed = texture(48, 48, 2.0, seed);
        let ((ry, rx), _) = register_translation(&fixed.roll(dy, dx), &fixed, 10).unwrap();
        prop_assert_eq!((ry, rx), (-dy, -dx));
    }
}
