use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::{load_pgm, load_ppm, HarnessError, RunConfig, SyntheticSpec};
use crate::jpeg::{self, JpegStream};
use crate::metrics::{self, MetricsReport, Psnr};
use crate::msroi::SaliencyMap;
use crate::semantic::{semantic_compress, SizeTarget};
use crate::RgbImage;

/// One image with the saliency map that drives its compression.
#[derive(Clone, Debug)]
pub struct BenchItem {
    pub id: String,
    pub image: RgbImage,
    pub map: SaliencyMap,
}

/// Standard and semantic JPEG of one image at matched size.
#[derive(Clone, Debug)]
pub struct BenchRow {
    pub id: String,
    pub baseline: MetricsReport,
    pub semantic: MetricsReport,
    pub baseline_stream: JpegStream,
    pub semantic_stream: JpegStream,
    pub final_quality: u8,
    pub within_tolerance: bool,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// `(id, message)` for images that could not be processed.
    pub failures: Vec<(String, String)>,
}

/// Means of semantic minus baseline over successful images. PSNR means
/// skip pairs where either side is infinite or PSNR-S is absent.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchSummary {
    pub images: usize,
    pub failed: usize,
    pub flagged: usize,
    pub mean_psnr_delta: Option<f64>,
    pub mean_psnr_s_delta: Option<f64>,
    pub mean_ssim_delta: Option<f64>,
    pub mean_msssim_delta: Option<f64>,
}

fn finite_delta(semantic: Psnr, baseline: Psnr) -> Option<f64> {
    match (semantic, baseline) {
        (Psnr::Finite(s), Psnr::Finite(b)) => Some(s - b),
        _ => None,
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".into(), |d| format!("{d:.4}"))
}

impl BenchRow {
    pub fn psnr_delta(&self) -> Option<f64> {
        finite_delta(self.semantic.psnr, self.baseline.psnr)
    }

    pub fn psnr_s_delta(&self) -> Option<f64> {
        finite_delta(self.semantic.psnr_s?, self.baseline.psnr_s?)
    }

    pub fn ssim_delta(&self) -> f64 {
        self.semantic.ssim - self.baseline.ssim
    }

    pub fn msssim_delta(&self) -> Option<f64> {
        Some(self.semantic.msssim? - self.baseline.msssim?)
    }
}

impl BenchReport {
    /// Metrics CSV with a baseline and a semantic row per image, ids
    /// suffixed `/baseline` and `/semantic`.
    pub fn csv(&self) -> String {
        let mut out = format!("{}\n", metrics::CSV_HEADER);
        for r in &self.rows {
            writeln!(out, "{}\n{}", r.baseline.csv_row(), r.semantic.csv_row()).expect("string write");
        }
        out
    }

    pub fn summary(&self) -> BenchSummary {
        let rows = &self.rows;
        BenchSummary {
            images: rows.len(),
            failed: self.failures.len(),
            flagged: rows.iter().filter(|r| !r.within_tolerance).count(),
            mean_psnr_delta: mean(rows.iter().map(BenchRow::psnr_delta)),
            mean_psnr_s_delta: mean(rows.iter().map(BenchRow::psnr_s_delta)),
            mean_ssim_delta: mean(rows.iter().map(|r| Some(r.ssim_delta()))),
            mean_msssim_delta: mean(rows.iter().map(BenchRow::msssim_delta)),
        }
    }

    pub fn summary_text(&self) -> String {
        let s = self.summary();
        let mut out = format!("images = {}\nfailed = {}\nsize_flagged = {}\n", s.images, s.failed, s.flagged);
        for (k, v) in [
            ("mean_psnr_delta", s.mean_psnr_delta),
            ("mean_psnr_s_delta", s.mean_psnr_s_delta),
            ("mean_ssim_delta", s.mean_ssim_delta),
            ("mean_msssim_delta", s.mean_msssim_delta),
        ] {
            writeln!(out, "{k} = {}", fmt_opt(v)).expect("string write");
        }
        for (id, msg) in &self.failures {
            writeln!(out, "failed {id}: {msg}").expect("string write");
        }
        out
    }
}

fn decode_checked(stream: &JpegStream, original: &RgbImage) -> Result<RgbImage, HarnessError> {
    let decoded = stream.decode()?;
    if decoded.dims() != original.dims() {
        return Err(HarnessError::DecodedDimensions(
            decoded.width(),
            decoded.height(),
            original.width(),
            original.height(),
        ));
    }
    Ok(decoded)
}

/// Baseline JPEG at the configured quality, then the semantic encoding
/// size-matched to it, both measured against the original.
pub fn run_one(item: &BenchItem, config: &RunConfig) -> Result<BenchRow, HarnessError> {
    let ladder = config.ladder()?;
    let baseline_stream = jpeg::encode(&item.image, config.baseline_quality)?;
    let out = semantic_compress(
        &item.image,
        &item.map,
        &ladder,
        SizeTarget::Bytes(baseline_stream.len()),
        config.tolerance,
    )?;
    let measure = |suffix: &str, stream: &JpegStream| -> Result<MetricsReport, HarnessError> {
        let decoded = decode_checked(stream, &item.image)?;
        Ok(MetricsReport::measure(
            format!("{}/{suffix}", item.id),
            stream.len(),
            &item.image,
            &decoded,
            &item.map,
            config.salient_cutoff,
        )?)
    };
    let baseline = measure("baseline", &baseline_stream)?;
    let semantic = measure("semantic", &out.encoding.stream)?;
    Ok(BenchRow {
        id: item.id.clone(),
        baseline,
        semantic,
        baseline_stream,
        semantic_stream: out.encoding.stream,
        final_quality: out.encoding.quality,
        within_tolerance: out.encoding.within_tolerance,
    })
}

/// Runs every item; failures are recorded and the rest continue. Row order
/// follows `items` whether or not the run is parallel.
pub fn run_benchmark(config: &RunConfig, items: &[BenchItem]) -> BenchReport {
    let results: Vec<Result<BenchRow, HarnessError>> = if config.parallel {
        items.par_iter().map(|it| run_one(it, config)).collect()
    } else {
        items.iter().map(|it| run_one(it, config)).collect()
    };
    let mut report = BenchReport::default();
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push((item.id.clone(), e.to_string())),
        }
    }
    report
}

/// Generator settings for a Kodak-sized-ratio corpus: 264x176 canvases
/// (3:2, large enough for five-scale MS-SSIM) with one to three objects on
/// fine-grained background texture.
pub fn kodak_style_corpus(count: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        width: 264,
        height: 176,
        min_objects: 1,
        max_objects: 3,
        radius: (24.0, 40.0),
        roughness: 0.9,
        count,
        seed,
        ..SyntheticSpec::default()
    }
}

/// Generates `spec` and pairs each image with its ground-truth foreground
/// mask as a binary saliency map.
pub fn corpus_items(spec: &SyntheticSpec) -> Result<Vec<BenchItem>, HarnessError> {
    spec.generate()?
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let values = s.foreground_mask().iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
            let map = SaliencyMap::new(spec.width, spec.height, values)?;
            Ok(BenchItem {
                id: format!("img{:02}", i + 1),
                image: s.image,
                map,
            })
        })
        .collect()
}

/// `*.ppm` files of a directory in name order, each with its `<stem>.pgm`
/// map when one exists.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, RgbImage, Option<SaliencyMap>)>, HarnessError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(HarnessError::Config(format!("no .ppm images in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let image = load_ppm(&p)?;
            let map_path = p.with_extension("pgm");
            let map = map_path.exists().then(|| load_pgm(&map_path)).transpose()?;
            Ok((id, image, map))
        })
        .collect()
}

/// Bilinear resample of a map with pixel-center alignment.
fn resize_map(map: &SaliencyMap, width: usize, height: usize) -> Result<SaliencyMap, HarnessError> {
    let (sw, sh) = map.dims();
    let src = |o: usize, s: usize, d: usize| -> (usize, usize, f64) {
        let c = ((o as f64 + 0.5) * s as f64 / d as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = c.floor() as usize;
        (i0, (i0 + 1).min(s - 1), c - i0 as f64)
    };
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = src(y, sh, height);
        for x in 0..width {
            let (x0, x1, fx) = src(x, sw, width);
            let top = map.get(x0, y0) * (1.0 - fx) + map.get(x1, y0) * fx;
            let bot = map.get(x0, y1) * (1.0 - fx) + map.get(x1, y1) * fx;
            values.push(top * (1.0 - fy) + bot * fy);
        }
    }
    Ok(SaliencyMap::new(width, height, values)?)
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub width: usize,
    pub height: usize,
    pub row: BenchRow,
}

pub const SWEEP_HEADER: &str =
    "width,height,baseline_bytes,semantic_bytes,psnr_delta,psnr_s_delta,ssim_delta,msssim_delta,within_tolerance";

/// Rescales `item` so its long side takes each configured length and runs
/// the matched-size comparison at every size.
pub fn sweep(item: &BenchItem, config: &RunConfig) -> Result<Vec<SweepRow>, HarnessError> {
    let (w, h) = item.image.dims();
    let long = w.max(h) as f64;
    config
        .sweep_sizes
        .iter()
        .map(|&size| {
            let scale = |d: usize| ((d as f64 * size as f64 / long).round() as usize).max(1);
            let (sw, sh) = (scale(w), scale(h));
            let scaled = BenchItem {
                id: format!("{}@{sw}x{sh}", item.id),
                image: item.image.resize_bilinear(sw, sh)?,
                map: resize_map(&item.map, sw, sh)?,
            };
            Ok(SweepRow {
                width: sw,
                height: sh,
                row: run_one(&scaled, config)?,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for s in rows {
        let r = &s.row;
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{},{}",
            s.width,
            s.height,
            r.baseline.bytes,
            r.semantic.bytes,
            fmt_opt(r.psnr_delta()),
            fmt_opt(r.psnr_s_delta()),
            r.ssim_delta(),
            r.msssim_delta().map_or_else(|| "na".into(), |d| format!("{d:.6}")),
            r.within_tolerance,
        )
        .expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_keeps_map() {
        let m = SaliencyMap::new(3, 2, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap();
        assert_eq!(resize_map(&m, 3, 2).unwrap(), m);
    }

    #[test]
    fn corpus_maps_match_masks() {
        let spec = SyntheticSpec {
            count: 2,
            ..kodak_style_corpus(2, 3)
        };
        let items = corpus_items(&spec).unwrap();
        assert_eq!(items.len(), 2);
        assert!(items[0].map.values().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(items[0].map.max() == 1.0);
    }
}
