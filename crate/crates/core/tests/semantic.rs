use proptest::prelude::*;
use semjpeg::harness::{corpus_items, kodak_style_corpus};
use semjpeg::jpeg;
use semjpeg::msroi::SaliencyMap;
use semjpeg::semantic::{
    assemble_mosaic, discretize, encode_ladder, final_encode, level_for_saliency, semantic_compress, LevelMap,
    QualityLadder, SizeTarget, BLOCK,
};
use semjpeg::RgbImage;

fn textured(w: usize, h: usize, seed: usize) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let v = (x * 31 + y * 17 + seed * 7) ^ (x * y + seed);
        [(v * 13) as u8, (v * 7 + x) as u8, (y * 9 + v) as u8]
    })
    .unwrap()
}

/// Scan every quality: the largest one under the upper bound, stepping up
/// one when that lands closer to the target.
fn scan_oracle(image: &RgbImage, target: usize, tol: f64) -> (u8, usize) {
    let sizes: Vec<usize> = (1..=100u8).map(|q| jpeg::encode(image, q).unwrap().len()).collect();
    let t = target as f64;
    let upper = t * (1.0 + tol);
    let q = (1..=100u8).rev().find(|&q| sizes[q as usize - 1] as f64 <= upper).unwrap_or(1);
    let within = |n: usize| (n as f64 - t).abs() / t <= tol;
    let mut best = q;
    if !within(sizes[q as usize - 1]) && q < 100 {
        let below = (sizes[q as usize - 1] as f64 - t).abs();
        let above = (sizes[q as usize] as f64 - t).abs();
        if above < below {
            best = q + 1;
        }
    }
    (best, sizes[best as usize - 1])
}

fn all_sizes(image: &RgbImage) -> Vec<usize> {
    (1..=100u8).map(|q| jpeg::encode(image, q).unwrap().len()).collect()
}

#[test]
fn binary_search_agrees_with_exhaustive_scan() {
    let mut monotone = 0;
    for seed in 0..6 {
        let img = textured(40, 24, seed);
        let sizes = all_sizes(&img);
        let size = |q: u8| sizes[q as usize - 1];
        let base = size(50);
        for (target, tol) in [(base, 0.01), (base * 3 / 2, 0.01), (base / 2, 0.05), (base, 0.0), (10, 0.01), (1 << 20, 0.01)] {
            let got = final_encode(&img, target, tol).unwrap();
            assert_eq!(got.stream.len(), size(got.quality));
            // the search stops where the upper bound is crossed; with non-monotone
            // sizes that crossing need not be the last one
            let upper = target as f64 * (1.0 + tol);
            let q = if got.within_tolerance || got.quality == 1 || size(got.quality) as f64 <= upper {
                got.quality
            } else {
                got.quality - 1
            };
            if size(q) as f64 <= upper {
                assert!(q == 100 || size(q + 1) as f64 > upper, "seed {seed} target {target}: q {q}");
            } else {
                assert_eq!(q, 1);
            }
            if sizes.windows(2).all(|w| w[0] <= w[1]) {
                assert_eq!((got.quality, got.stream.len()), scan_oracle(&img, target, tol), "seed {seed} target {target} tol {tol}");
            }
        }
        monotone += usize::from(sizes.windows(2).all(|w| w[0] <= w[1]));
    }
    eprintln!("{monotone} of 6 images had sizes monotone in quality");
}

#[test]
fn size_lands_in_tolerance_when_reachable() {
    for item in corpus_items(&kodak_style_corpus(3, 21)).unwrap() {
        let target = jpeg::encode(&item.image, 50).unwrap().len();
        let sizes: Vec<usize> = (1..=100u8).map(|q| jpeg::encode(&item.image, q).unwrap().len()).collect();
        let reachable = sizes.iter().any(|&n| (n as f64 - target as f64).abs() <= 0.01 * target as f64);
        let enc = final_encode(&item.image, target, 0.01).unwrap();
        assert_eq!(enc.within_tolerance, enc.relative_size_error().abs() <= 0.01);
        if reachable {
            assert!(enc.within_tolerance, "{}: {}", item.id, enc.relative_size_error());
        }
    }
}

#[test]
fn unbounded_tolerance_at_q100_size_picks_q100() {
    let img = textured(33, 19, 4);
    let target = jpeg::encode(&img, 100).unwrap().len();
    let enc = final_encode(&img, target, 1.0).unwrap();
    assert_eq!(enc.quality, 100);
    assert!(enc.within_tolerance);
}

#[test]
fn unreachable_target_is_flagged() {
    let img = textured(48, 48, 1);
    let enc = final_encode(&img, 5, 0.01).unwrap();
    assert_eq!(enc.quality, 1);
    assert!(!enc.within_tolerance);
}

#[test]
fn constant_maps_collapse_to_ladder_ends() {
    let img = textured(50, 30, 2);
    let ladder = QualityLadder::new(30, 70, 5).unwrap();
    for (value, q) in [(1.0, 70), (0.0, 30)] {
        let map = SaliencyMap::constant(50, 30, value).unwrap();
        let out = semantic_compress(&img, &map, &ladder, SizeTarget::MatchQuality(50), 0.01).unwrap();
        assert_eq!(out.mosaic, jpeg::roundtrip(&img, q).unwrap().1);
    }
}

/// Squared error over the RGB samples of one 8x8 block.
fn block_sse(a: &RgbImage, b: &RgbImage, bx: usize, by: usize) -> u64 {
    let mut sse = 0u64;
    for y in by * BLOCK..((by + 1) * BLOCK).min(a.height()) {
        for x in bx * BLOCK..((bx + 1) * BLOCK).min(a.width()) {
            let (p, q) = (a.pixel(x, y), b.pixel(x, y));
            sse += (0..3).map(|c| (p[c] as i64 - q[c] as i64).pow(2) as u64).sum::<u64>();
        }
    }
    sse
}

#[test]
fn raising_levels_lowers_block_error_over_the_corpus() {
    let ladder = QualityLadder::new(30, 70, 5).unwrap();
    let mut per_level = vec![0u64; ladder.levels()];
    let (mut steps, mut worse) = (0usize, 0usize);
    for item in corpus_items(&kodak_style_corpus(4, 5)).unwrap() {
        let imgs = encode_ladder(&item.image, &ladder).unwrap();
        let (bw, bh) = semjpeg::semantic::block_grid(item.image.width(), item.image.height());
        for by in 0..bh {
            for bx in 0..bw {
                let sse: Vec<u64> = imgs.iter().map(|i| block_sse(&item.image, i, bx, by)).collect();
                for (total, e) in per_level.iter_mut().zip(&sse) {
                    *total += e;
                }
                for w in sse.windows(2) {
                    steps += 1;
                    worse += usize::from(w[1] > w[0]);
                }
            }
        }
    }
    eprintln!("block error rose on {worse} of {steps} single-block level steps");
    assert!(per_level.windows(2).all(|w| w[1] < w[0]), "{per_level:?}");
}

#[test]
fn ladder_psnr_rises_with_level() {
    let ladder = QualityLadder::new(30, 70, 5).unwrap();
    let item = corpus_items(&kodak_style_corpus(1, 9)).unwrap().remove(0);
    let imgs = encode_ladder(&item.image, &ladder).unwrap();
    let psnrs: Vec<f64> = imgs
        .iter()
        .map(|i| semjpeg::metrics::psnr(&item.image, i).unwrap().db())
        .collect();
    assert!(psnrs.windows(2).all(|w| w[1] > w[0]), "{psnrs:?}");
}

fn arb_case() -> impl Strategy<Value = (RgbImage, LevelMap)> {
    (1usize..40, 1usize..40, 0usize..1000).prop_flat_map(|(w, h, seed)| {
        let (bw, bh) = (w.div_ceil(BLOCK), h.div_ceil(BLOCK));
        proptest::collection::vec(0u8..5, bw * bh)
            .prop_map(move |v| (textured(w, h, seed), LevelMap::new(bw, bh, 5, v).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mosaic_blocks_are_verbatim_copies((img, levels) in arb_case()) {
        let ladder = QualityLadder::new(30, 70, 5).unwrap();
        let imgs = encode_ladder(&img, &ladder).unwrap();
        let mosaic = assemble_mosaic(&imgs, &levels).unwrap();
        for y in 0..img.height() {
            for x in 0..img.width() {
                let n = levels.get(x / BLOCK, y / BLOCK) as usize;
                prop_assert_eq!(mosaic.pixel(x, y), imgs[n].pixel(x, y));
            }
        }
    }

    #[test]
    fn levels_are_monotone_and_in_range(a in 0.0f64..=1.0, b in 0.0f64..=1.0, k in 1usize..12) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(level_for_saliency(lo, k) <= level_for_saliency(hi, k));
        prop_assert!((level_for_saliency(hi, k) as usize) < k);
    }

    #[test]
    fn constant_maps_discretize_uniformly(w in 1usize..50, h in 1usize..50, s in 0.0f64..=1.0) {
        let map = SaliencyMap::constant(w, h, s).unwrap();
        let levels = discretize(&map, 5).unwrap();
        let expected = level_for_saliency(s, 5);
        prop_assert!(levels.values().iter().all(|&l| l == expected));
    }
}
