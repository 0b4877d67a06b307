use proptest::prelude::*;
use uqih_core::image::{self, channel_average, flip_horizontal, invert_contrast, normalize_minmax};
use uqih_core::{io, Image, ImageMeta, Laterality, Photometric, RangeHint};

fn meta(photometric: Photometric, laterality: Laterality) -> ImageMeta {
    ImageMeta { photometric, laterality, source_id: "x".into() }
}

fn image_strategy(max_side: usize, channels: usize) -> impl Strategy<Value = Image> {
    (1..=max_side, 1..=max_side).prop_flat_map(move |(w, h)| {
        prop::collection::vec(-1e3f64..1e3, w * h * channels)
            .prop_map(move |data| Image::new(w, h, channels, data, RangeHint::Unspecified).unwrap())
    })
}

fn f32_image_strategy() -> impl Strategy<Value = Image> {
    (1usize..12, 1usize..12, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
        prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), w * h * c).prop_map(
            move |vals| Image::new(w, h, c, vals.into_iter().map(f64::from).collect(), RangeHint::Unspecified).unwrap(),
        )
    })
}

proptest! {
    #[test]
    fn raw_tensor_round_trip_is_bit_exact(img in f32_image_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.uqt");
        io::save_raw_tensor(&path, &img).unwrap();
        let back = io::load_image(&path).unwrap();
        prop_assert_eq!(back.data().len(), img.data().len());
        for (a, b) in back.data().iter().zip(img.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        io::save_raw_tensor(&path, &back).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), io::encode_raw_tensor(&img));
    }

    #[test]
    fn normalize_lands_in_unit_range(img in image_strategy(10, 1)) {
        let (out, warn) = normalize_minmax(&img);
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let (lo, hi) = img.min_max();
        if hi > lo {
            prop_assert!(warn.is_none());
            prop_assert_eq!(out.min_max(), (0.0, 1.0));
        } else {
            prop_assert!(warn.is_some());
        }
    }

    #[test]
    fn inversion_is_an_involution(img in image_strategy(10, 1)) {
        let (unit, _) = normalize_minmax(&img);
        let m = meta(Photometric::Monochrome1, Laterality::Left);
        let twice = invert_contrast(&invert_contrast(&unit, &m), &m);
        for (a, b) in twice.data().iter().zip(unit.data()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn flip_is_an_involution(img in image_strategy(10, 3)) {
        let m = meta(Photometric::Monochrome2, Laterality::Right);
        prop_assert_eq!(flip_horizontal(&flip_horizontal(&img, &m), &m), img);
    }

    #[test]
    fn channel_average_keeps_grayscale(img in image_strategy(10, 1)) {
        prop_assert_eq!(channel_average(&img).unwrap(), img);
    }
}

#[test]
fn eight_bit_png_decodes_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.png");
    ::image::GrayImage::from_raw(2, 2, vec![0, 255, 128, 64]).unwrap().save(&path).unwrap();
    let img = io::load_image(&path).unwrap();
    assert_eq!(img.range_hint(), RangeHint::Byte);
    assert_eq!(img.data(), &[0.0, 255.0, 128.0, 64.0]);
}

#[test]
fn sixteen_bit_and_rgb_rasters() {
    let dir = tempfile::tempdir().unwrap();
    let p16 = dir.path().join("p16.png");
    ::image::ImageBuffer::<::image::Luma<u16>, _>::from_raw(2, 1, vec![0u16, 65535]).unwrap().save(&p16).unwrap();
    let img = io::load_image(&p16).unwrap();
    assert_eq!(img.range_hint(), RangeHint::Word);
    assert_eq!(img.data(), &[0.0, 65535.0]);

    let prgb = dir.path().join("rgb.png");
    ::image::RgbImage::from_raw(1, 1, vec![10, 20, 30]).unwrap().save(&prgb).unwrap();
    let img = io::load_image(&prgb).unwrap();
    assert_eq!((img.channels(), img.data()), (3, &[10.0, 20.0, 30.0][..]));

    let pgm = dir.path().join("p.pgm");
    std::fs::write(&pgm, b"P5\n2 1\n255\n\x07\xff").unwrap();
    assert_eq!(io::load_image(&pgm).unwrap().data(), &[7.0, 255.0]);
}

#[test]
fn unsupported_or_missing_files_fail() {
    let dir = tempfile::tempdir().unwrap();
    let rgba = dir.path().join("a.png");
    ::image::RgbaImage::from_raw(1, 1, vec![1, 2, 3, 4]).unwrap().save(&rgba).unwrap();
    assert!(io::load_image(&rgba).is_err());
    assert!(io::load_image(&dir.path().join("missing.png")).is_err());
    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    assert!(io::load_image(&junk).is_err());
}

#[test]
fn noise_variance_over_unclipped_pixels() {
    // mid-grey keeps clipping negligible at every level tested
    let base = Image::filled(500, 200, 128.0, RangeHint::Byte).unwrap();
    for (level, seed) in [(1.0, 11), (5.0, 12), (10.0, 13), (20.0, 14)] {
        let noisy = image::add_gaussian_noise(&base, level, seed).unwrap();
        let diffs: Vec<f64> = noisy
            .data()
            .iter()
            .filter(|v| **v > 0.0 && **v < 255.0)
            .map(|v| v - 128.0)
            .collect();
        assert!(diffs.len() >= 100_000);
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = level / 100.0 * 255.0;
        assert!((var - expected).abs() <= 0.05 * expected, "level {level}: variance {var} vs {expected}");
    }
}

#[test]
fn noise_output_is_clipped_and_seed_dependent() {
    let base = Image::from_fn(64, 64, RangeHint::Unit, |r, c| ((r + c) % 2) as f64).unwrap();
    let a = image::add_gaussian_noise(&base, 50.0, 1).unwrap();
    assert!(a.data().iter().all(|v| (0.0..=255.0).contains(v)));
    assert_eq!(a, image::add_gaussian_noise(&base, 50.0, 1).unwrap());
    assert_ne!(a, image::add_gaussian_noise(&base, 50.0, 2).unwrap());
}
