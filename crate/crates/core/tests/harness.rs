use std::collections::VecDeque;

use proptest::prelude::*;
use semjpeg::harness::{
    encode_pgm, encode_ppm, load_ppm, parse_pgm, parse_ppm, run_benchmark, save_ppm, BenchItem, HarnessError,
    RunConfig, SyntheticSpec,
};
use semjpeg::msroi::SaliencyMap;
use semjpeg::RgbImage;

#[test]
fn two_by_two_ppm_parses() {
    let mut bytes = b"P6 2 2 255\n".to_vec();
    bytes.extend(0u8..12);
    let img = parse_ppm(&bytes).unwrap();
    assert_eq!(img.dims(), (2, 2));
    assert_eq!(img.pixel(1, 1), [9, 10, 11]);
}

#[test]
fn sixteen_bit_maxval_is_rejected() {
    let mut bytes = b"P6 1 1 65535\n".to_vec();
    bytes.extend([0u8; 6]);
    assert!(parse_ppm(&bytes).is_err());
}

#[test]
fn truncated_raster_reports_offset() {
    let mut bytes = b"P5\n3 3\n255\n".to_vec();
    bytes.extend([1u8; 5]);
    match parse_pgm(&bytes) {
        Err(HarnessError::Pnm { offset, .. }) => assert_eq!(offset, bytes.len()),
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert!(matches!(parse_ppm(b"P3 1 1 255\n\0\0\0"), Err(HarnessError::Pnm { offset: 0, .. })));
}

#[test]
fn save_then_load_is_identity_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ppm");
    let img = RgbImage::from_fn(13, 7, |x, y| [(x * 19) as u8, (y * 37) as u8, (x * y) as u8]).unwrap();
    save_ppm(&path, &img).unwrap();
    assert_eq!(load_ppm(&path).unwrap(), img);
    assert_eq!(std::fs::read(&path).unwrap(), encode_ppm(&img));
    // no temporary files left next to the output
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn config_roundtrips_through_canonical_text() {
    let text = "# run\nq_low = 20\nq_high=80\nlevels=9\nmap_mode=threshold\nthreshold=-0.5\nseed=42\n\
                dataset=/data/kodak\nsweep_sizes=64, 128\nparallel=false\n";
    let cfg = RunConfig::parse(text).unwrap();
    let canon = cfg.to_text();
    let again = RunConfig::parse(&canon).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.to_text(), canon);
    assert_eq!(cfg.ladder().unwrap().qualities(), vec![20, 28, 35, 43, 50, 58, 65, 73, 80]);
}

#[test]
fn config_rejects_unknown_and_duplicate_keys() {
    assert!(RunConfig::parse("colour=blue\n").is_err());
    assert!(RunConfig::parse("seed=1\nseed=2\n").is_err());
    assert!(RunConfig::parse("q_low=90\nq_high=40\n").is_err());
    assert_eq!(RunConfig::default().baseline_quality, 50);
}

#[test]
fn generation_is_deterministic() {
    let spec = SyntheticSpec {
        count: 20,
        seed: 99,
        ..SyntheticSpec::default()
    };
    let a = spec.generate().unwrap();
    let b = spec.generate().unwrap();
    assert_eq!(a.len(), 20);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.image, y.image);
        assert_eq!(x.owner, y.owner);
    }
}

#[test]
fn zero_categories_rejected() {
    let spec = SyntheticSpec {
        shapes: Vec::new(),
        ..SyntheticSpec::default()
    };
    assert!(spec.generate().is_err());
}

#[test]
fn label_histogram_is_flat() {
    let spec = SyntheticSpec::default();
    assert_eq!(spec.count, 500);
    let set = spec.generate().unwrap();
    let mut counts = vec![0usize; spec.shapes.len()];
    for s in &set {
        for c in s.categories() {
            counts[c] += 1;
        }
    }
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    for &c in &counts {
        assert!((c as f64 - mean).abs() <= 0.1 * mean, "{counts:?}");
    }
}

fn components(mask: &[bool], w: usize, h: usize) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut n = 0;
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        n += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
    }
    n
}

#[test]
fn single_objects_are_single_components() {
    let spec = SyntheticSpec {
        min_objects: 1,
        max_objects: 1,
        count: 60,
        seed: 4,
        ..SyntheticSpec::default()
    };
    for s in spec.generate().unwrap() {
        assert_eq!(s.categories().len(), 1);
        assert_eq!(components(&s.foreground_mask(), spec.width, spec.height), 1);
    }
}

#[test]
fn masks_align_with_rendered_shapes() {
    let spec = SyntheticSpec {
        noise: 0.0,
        jitter: 0.0,
        count: 10,
        seed: 8,
        ..SyntheticSpec::default()
    };
    for s in spec.generate().unwrap() {
        let at = |i: usize| s.image.pixel(i % spec.width, i / spec.width);
        let bg = at(s.owner.iter().position(|&o| o == 0).unwrap());
        for (i, &o) in s.owner.iter().enumerate() {
            assert_eq!(o == 0, at(i) == bg, "pixel {i}");
        }
    }
}

#[test]
fn flat_map_benchmark_has_near_zero_deltas() {
    let img = RgbImage::from_fn(64, 48, |x, y| [(x * 4) as u8, (y * 5) as u8, ((x + y) * 2) as u8]).unwrap();
    let item = BenchItem {
        id: "flat".into(),
        map: SaliencyMap::constant(64, 48, 1.0).unwrap(),
        image: img,
    };
    let cfg = RunConfig {
        q_low: 50,
        q_high: 50,
        ..RunConfig::default()
    };
    let report = run_benchmark(&cfg, &[item]);
    assert!(report.failures.is_empty());
    let s = report.summary();
    // the mosaic is the Q50 roundtrip, re-encoded near Q50
    assert!(s.mean_psnr_delta.unwrap().abs() < 1.5, "{s:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ppm_roundtrips(w in 1usize..16, h in 1usize..16, seed in any::<u64>()) {
        let img = RgbImage::from_fn(w, h, |x, y| {
            let v = seed.wrapping_mul(6364136223846793005).wrapping_add((y * w + x) as u64);
            [(v >> 8) as u8, (v >> 24) as u8, (v >> 40) as u8]
        }).unwrap();
        prop_assert_eq!(parse_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn pgm_roundtrips(samples in proptest::collection::vec(any::<u8>(), 1..200)) {
        let w = samples.len();
        let (pw, ph, back) = parse_pgm(&encode_pgm(w, 1, &samples)).unwrap();
        prop_assert_eq!((pw, ph), (w, 1));
        prop_assert_eq!(back, samples);
    }
}
