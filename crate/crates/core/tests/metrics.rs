use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semjpeg::metrics::{ms_ssim, psnr, psnr_s, ssim, MetricsError, MetricsReport, Psnr};
use semjpeg::msroi::SaliencyMap;
use semjpeg::RgbImage;

fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * 3).map(|_| rng.gen()).collect();
    RgbImage::new(w, h, data).unwrap()
}

fn gray(w: usize, h: usize, v: u8) -> RgbImage {
    RgbImage::filled(w, h, [v, v, v]).unwrap()
}

/// Direct double loop over pixels and channels.
fn brute_psnr(a: &RgbImage, b: &RgbImage) -> f64 {
    let mut sum = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.pixel(x, y), b.pixel(x, y));
            for c in 0..3 {
                let d = p[c] as f64 - q[c] as f64;
                sum += d * d;
            }
        }
    }
    let mse = sum / (a.width() * a.height() * 3) as f64;
    10.0 * (255.0 * 255.0 / mse).log10()
}

#[test]
fn unit_difference_is_48_13_db() {
    let a = gray(16, 9, 100);
    let b = gray(16, 9, 101);
    let expected = 10.0 * (255.0f64 * 255.0).log10();
    assert!((psnr(&a, &b).unwrap().db() - expected).abs() < 1e-12);
    assert!((expected - 48.13).abs() < 0.005);
}

#[test]
fn random_pairs_match_brute_force() {
    for seed in 0..10 {
        let a = random_image(23, 17, seed);
        let b = random_image(23, 17, seed + 100);
        let got = psnr(&a, &b).unwrap().db();
        assert!((got - brute_psnr(&a, &b)).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn identical_images_are_infinite() {
    let a = random_image(10, 10, 1);
    assert_eq!(psnr(&a, &a).unwrap(), Psnr::Infinite);
    assert_eq!(Psnr::Infinite.to_string(), "inf");
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
}

#[test]
fn dimension_mismatch_is_rejected() {
    let a = gray(8, 8, 0);
    let b = gray(8, 9, 0);
    assert!(psnr(&a, &b).is_err());
    assert!(ssim(&a, &b).is_err());
    let map = SaliencyMap::constant(9, 8, 1.0).unwrap();
    assert!(matches!(psnr_s(&a, &a, &map, 0.5), Err(MetricsError::MapDimensions(..))));
}

#[test]
fn half_plane_distortion_outside_salient_half() {
    let (w, h) = (32, 20);
    let a = random_image(w, h, 5);
    let mut b = a.clone();
    for y in 0..h {
        for x in w / 2..w {
            let p = b.pixel(x, y);
            b.set_pixel(x, y, [p[0] ^ 0x10, p[1], p[2]]);
        }
    }
    let map = SaliencyMap::new(w, h, (0..w * h).map(|i| if i % w < w / 2 { 1.0 } else { 0.0 }).collect()).unwrap();
    assert_eq!(psnr_s(&a, &b, &map, 0.5).unwrap(), Some(Psnr::Infinite));
    assert!(!psnr(&a, &b).unwrap().is_infinite());
}

#[test]
fn empty_salient_region_is_absent() {
    let a = random_image(12, 12, 2);
    let b = random_image(12, 12, 3);
    let map = SaliencyMap::constant(12, 12, 0.0).unwrap();
    assert_eq!(psnr_s(&a, &b, &map, 0.5).unwrap(), None);
}

#[test]
fn constant_images_match_closed_form_ssim() {
    let c1 = (0.01f64 * 255.0).powi(2);
    for (v, k) in [(100u8, 1u8), (50, 20), (0, 255), (200, 7)] {
        let a = gray(24, 24, v);
        let b = gray(24, 24, v.saturating_add(k));
        let (x, y) = (v as f64, v.saturating_add(k) as f64);
        // zero variances leave only the luminance term
        let expected = (2.0 * x * y + c1) / (x * x + y * y + c1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-9, "v={v} k={k}: {got} vs {expected}");
    }
}

#[test]
fn inverted_images_score_low() {
    use semjpeg::harness::{corpus_items, kodak_style_corpus};
    for item in corpus_items(&kodak_style_corpus(4, 3)).unwrap() {
        let inv = RgbImage::new(
            item.image.width(),
            item.image.height(),
            item.image.data().iter().map(|v| 255 - v).collect(),
        )
        .unwrap();
        let s = ssim(&item.image, &inv).unwrap();
        assert!(s < 0.3, "{}: {s}", item.id);
    }
}

#[test]
fn ms_ssim_rejects_small_images() {
    let a = gray(175, 200, 9);
    assert!(matches!(ms_ssim(&a, &a), Err(MetricsError::TooSmall { min: 176, .. })));
    let b = gray(176, 176, 9);
    assert_eq!(ms_ssim(&b, &b).unwrap(), 1.0);
}

#[test]
fn report_roundtrips_through_csv() {
    let a = random_image(20, 20, 8);
    let b = random_image(20, 20, 9);
    let map = SaliencyMap::constant(20, 20, 0.0).unwrap();
    let r = MetricsReport::measure("x", 123, &a, &b, &map, 0.5).unwrap();
    assert_eq!(r.psnr_s, None);
    assert_eq!(r.msssim, None);
    let back = MetricsReport::from_csv_row(&r.csv_row()).unwrap();
    assert_eq!(back.csv_row(), r.csv_row());
}

fn arb_pair() -> impl Strategy<Value = (RgbImage, RgbImage)> {
    (1usize..20, 1usize..20).prop_flat_map(|(w, h)| {
        (
            proptest::collection::vec(any::<u8>(), w * h * 3),
            proptest::collection::vec(any::<u8>(), w * h * 3),
        )
            .prop_map(move |(a, b)| (RgbImage::new(w, h, a).unwrap(), RgbImage::new(w, h, b).unwrap()))
    })
}

fn reverse_rows(img: &RgbImage) -> RgbImage {
    let row = img.width() * 3;
    let data = img.data().chunks_exact(row).rev().flatten().copied().collect();
    RgbImage::new(img.width(), img.height(), data).unwrap()
}

proptest! {
    #[test]
    fn psnr_is_symmetric((a, b) in arb_pair()) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn full_map_psnr_s_equals_psnr((a, b) in arb_pair()) {
        let map = SaliencyMap::constant(a.width(), a.height(), 1.0).unwrap();
        let s = psnr_s(&a, &b, &map, 0.5).unwrap().unwrap();
        let p = psnr(&a, &b).unwrap();
        prop_assert!(s == p || (s.db() - p.db()).abs() <= 1e-12);
    }

    #[test]
    fn ssim_of_self_is_one((a, _) in arb_pair()) {
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_ignores_a_shared_row_permutation((a, b) in arb_pair()) {
        let direct = ssim(&a, &b).unwrap();
        let flipped = ssim(&reverse_rows(&a), &reverse_rows(&b)).unwrap();
        prop_assert!((direct - flipped).abs() < 1e-9, "{} vs {}", direct, flipped);
    }

    #[test]
    fn ssim_is_bounded((a, b) in arb_pair()) {
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
    }
}
