use proptest::prelude::*;
use uqih_core::correlation::{pearson, spearman};
use uqih_core::fid::{EmbeddingProvider, ToyEmbedder};
use uqih_core::manifest::{ImageManifest, StackKind, StackManifest};
use uqih_core::protocol::{
    build_curve, calibrate, collect_level, embed_manifest, make_noisy_testsets, LevelResult, SweepConfig,
};
use uqih_core::uq::UqOptions;
use uqih_core::{io, Image};
use uqih_testkit::fixtures::{copy_stacks, mock_translate, texture, write_image_set, write_rig_inputs, RigConfig};
use uqih_testkit::oracle;

fn distinct(values: &[f64]) -> bool {
    values.iter().any(|v| *v != values[0])
}

proptest! {
    #[test]
    fn correlations_match_oracle(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..40)) {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(distinct(&xs) && distinct(&ys));
        let p = pearson(&xs, &ys).unwrap();
        prop_assert!((p - oracle::pearson(&xs, &ys)).abs() <= 1e-12);
        let s = spearman(&xs, &ys).unwrap();
        prop_assert!((s - oracle::spearman(&xs, &ys)).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&p) && (-1.0..=1.0).contains(&s));
    }

    #[test]
    fn spearman_ignores_monotone_maps(xs in prop::collection::vec(-50.0f64..50.0, 3..30), seed in any::<u64>()) {
        prop_assume!(distinct(&xs));
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * 0.5 + ((i as u64 ^ seed) % 7) as f64).collect();
        prop_assume!(distinct(&ys));
        let base = spearman(&xs, &ys).unwrap();
        let mapped: Vec<f64> = xs.iter().map(|x| x.exp().min(1e300) + x).collect();
        prop_assert!((spearman(&mapped, &ys).unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(
        xs in prop::collection::vec(-50.0f64..50.0, 3..30),
        ys in prop::collection::vec(-50.0f64..50.0, 3..30),
        a in 0.1f64..10.0,
        b in -100.0f64..100.0,
    ) {
        let n = xs.len().min(ys.len());
        let (xs, ys) = (&xs[..n], &ys[..n]);
        prop_assume!(distinct(xs) && distinct(ys));
        let base = pearson(xs, ys).unwrap();
        let moved: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        prop_assert!((pearson(&moved, ys).unwrap() - base).abs() <= 1e-9);
    }

    #[test]
    fn curve_statistics_follow_inputs(fids in prop::collection::vec(0.0f64..100.0, 2..8), scale in 0.5f64..4.0) {
        let levels: Vec<LevelResult> = fids
            .iter()
            .enumerate()
            .map(|(i, &f)| LevelResult { noise_percent: 5.0 * i as f64, fid: f, mpsd: scale * f + 1.0, n_images: 10 })
            .collect();
        let curve = build_curve(&levels).unwrap();
        if distinct(&fids) {
            prop_assert!((curve.pearson_fid_mpsd.unwrap() - 1.0).abs() <= 1e-9);
            prop_assert_eq!(curve.spearman_fid_mpsd, Some(1.0));
        } else {
            prop_assert!(curve.pearson_fid_mpsd.is_none());
            prop_assert!(curve.correlation_errors.contains_key("pearson_fid_mpsd"));
        }
        let flagged = fids.windows(2).filter(|w| w[1] <= w[0]).count();
        prop_assert_eq!(curve.non_monotone_fid.len(), flagged);
    }
}

#[test]
fn noisy_testsets_are_seeded_per_image_and_level() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<Image> = (0..3).map(|i| texture(16, 16, 2.0, i)).collect();
    let manifest = write_image_set(&dir.path().join("test"), "img", &images);
    let cfg = SweepConfig { noise_levels: vec![0.0, 5.0], seed: 3, ..SweepConfig::default() };
    let a = make_noisy_testsets(&manifest, &cfg, &dir.path().join("a")).unwrap();
    let b = make_noisy_testsets(&manifest, &cfg, &dir.path().join("b")).unwrap();
    assert_eq!(a.len(), 2);
    assert!(a.iter().all(|t| t.n_images == 3 && t.failures.is_empty()));
    assert!(a[0].manifest.ends_with("level_0/manifest.json"));
    assert!(a[1].manifest.ends_with("level_5/manifest.json"));

    let clean = ImageManifest::load(&a[0].manifest).unwrap();
    for (entry, img) in clean.entries.iter().zip(&images) {
        let loaded = io::load_image(&entry.path).unwrap();
        for (x, y) in loaded.data().iter().zip(img.data()) {
            assert!((x - y * 255.0).abs() < 1e-4);
        }
    }
    let noisy_a = ImageManifest::load(&a[1].manifest).unwrap();
    let noisy_b = ImageManifest::load(&b[1].manifest).unwrap();
    for (ea, eb) in noisy_a.entries.iter().zip(&noisy_b.entries) {
        assert_eq!(std::fs::read(&ea.path).unwrap(), std::fs::read(&eb.path).unwrap());
    }
    assert_ne!(
        io::load_image(&noisy_a.entries[0].path).unwrap(),
        io::load_image(&clean.entries[0].path).unwrap()
    );

    let bad = SweepConfig { noise_levels: vec![10.0, 5.0], ..SweepConfig::default() };
    assert!(make_noisy_testsets(&manifest, &bad, &dir.path().join("c")).is_err());
}

#[test]
fn perfect_model_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<Image> = (0..12).map(|i| texture(16, 16, 2.0, 100 + i)).collect();
    let target = write_image_set(&dir.path().join("target"), "t", &images);
    let provider = ToyEmbedder::default();
    let target_set = embed_manifest(&target, &provider).unwrap();
    let stacks = copy_stacks(&target, 3, StackKind::McDropout, &dir.path().join("stacks.json"));
    let outcome =
        collect_level(0.0, &StackManifest::load(&stacks).unwrap(), &target_set, &provider, &UqOptions::default())
            .unwrap();
    assert_eq!(outcome.result.fid, 0.0);
    assert_eq!(outcome.result.mpsd, 0.0);
    assert_eq!(outcome.result.n_images, 12);

    let other = ToyEmbedder { target_dim: Some(8), seed: 1 };
    assert!(collect_level(0.0, &StackManifest::load(&stacks).unwrap(), &target_set, &other, &UqOptions::default())
        .is_err());
}

#[test]
fn identical_ensemble_members_reduce_to_one_model() {
    let dir = tempfile::tempdir().unwrap();
    let outputs: Vec<Image> = (0..12).map(|i| texture(16, 16, 3.0, 300 + i)).collect();
    let targets: Vec<Image> = (0..12).map(|i| texture(16, 16, 1.0, 400 + i)).collect();
    let out_manifest = write_image_set(&dir.path().join("out"), "o", &outputs);
    let target = write_image_set(&dir.path().join("target"), "t", &targets);
    let provider = ToyEmbedder::default();
    let target_set = embed_manifest(&target, &provider).unwrap();
    let opts = UqOptions::default();

    let ensemble = copy_stacks(&out_manifest, 5, StackKind::Ensemble, &dir.path().join("ens.json"));
    let single = copy_stacks(&out_manifest, 2, StackKind::McDropout, &dir.path().join("mc.json"));
    let e = collect_level(0.0, &StackManifest::load(&ensemble).unwrap(), &target_set, &provider, &opts).unwrap();
    let s = collect_level(0.0, &StackManifest::load(&single).unwrap(), &target_set, &provider, &opts).unwrap();
    assert!(e.result.fid > 0.0);
    assert!((e.result.fid - s.result.fid).abs() <= 1e-12 * s.result.fid);
    assert_eq!(e.result.mpsd, 0.0);
}

#[test]
fn rig_fid_rises_between_two_levels() {
    let dir = tempfile::tempdir().unwrap();
    let rig = RigConfig { levels: vec![0.0, 20.0], ..RigConfig::default() };
    let inputs = write_rig_inputs(dir.path(), &rig);
    let cfg: SweepConfig = uqih_core::manifest::read_json(&inputs.sweep_config).unwrap();
    let sets = make_noisy_testsets(&inputs.test_manifest, &cfg, &dir.path().join("noisy")).unwrap();
    let stacks: Vec<std::path::PathBuf> = sets
        .iter()
        .map(|t| {
            let out = dir.path().join("translated").join(format!("{}", t.noise_percent));
            mock_translate(&t.manifest, t.noise_percent, rig.samples, StackKind::McDropout, rig.seed, &out)
        })
        .collect();
    let calibration = calibrate(&cfg, &stacks, &inputs.target_manifest).unwrap();
    let points = &calibration.curve.points;
    assert!(points[1].fid > points[0].fid, "{points:?}");
    assert!(points[1].mpsd > points[0].mpsd);
    assert_eq!(points[0].n_images, 200);
    assert_eq!(calibration.outcomes[0].evaluation.records.len(), 200);
    assert_eq!(ToyEmbedder::default().provider_id(), cfg.embedding_provider);
}

#[test]
fn constant_fid_is_reported_not_fatal() {
    let levels: Vec<LevelResult> = (0..3)
        .map(|i| LevelResult { noise_percent: i as f64, fid: 2.0, mpsd: i as f64, n_images: 4 })
        .collect();
    let curve = build_curve(&levels).unwrap();
    assert_eq!(curve.points.len(), 3);
    assert_eq!(curve.correlation_errors.len(), 4);
    assert_eq!(curve.non_monotone_fid, vec![[0.0, 1.0], [1.0, 2.0]]);
    assert!(build_curve(&levels[..1]).is_err());
    let mut uneven = levels.clone();
    uneven[2].n_images = 3;
    assert!(build_curve(&uneven).is_err());
}
