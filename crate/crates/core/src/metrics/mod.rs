//! PSNR, salient-region PSNR, SSIM and MS-SSIM.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::image::ImageError;
use crate::msroi::SaliencyMap;
use crate::RgbImage;

pub const DEFAULT_SALIENCY_CUTOFF: f64 = 0.5;
pub const MS_SSIM_MIN_DIM: usize = 176;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("saliency map is {0}x{1} but the images are {2}x{3}")]
    MapDimensions(usize, usize, usize, usize),
    #[error("MS-SSIM needs both dimensions >= {min}, got {width}x{height}")]
    TooSmall { width: usize, height: usize, min: usize },
    #[error("cannot parse metric value {0:?}")]
    Parse(String),
}

/// A PSNR in dB; identical inputs give `Infinite` rather than an overflowed float.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    fn from_sse(sse: u64, samples: usize) -> Psnr {
        if sse == 0 {
            return Psnr::Infinite;
        }
        let mse = sse as f64 / samples as f64;
        Psnr::Finite(10.0 * (255.0 * 255.0 / mse).log10())
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Psnr::Infinite)
    }

    /// `f64::INFINITY` for the sentinel.
    pub fn db(&self) -> f64 {
        match *self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Psnr {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inf" => Ok(Psnr::Infinite),
            _ => s.parse().map(Psnr::Finite).map_err(|_| MetricsError::Parse(s.to_string())),
        }
    }
}

fn squared_error(a: &[u8], b: &[u8]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum()
}

/// `10 log10(255^2 / MSE)` over every sample of every channel.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<Psnr, MetricsError> {
    a.same_dims(b)?;
    Ok(Psnr::from_sse(squared_error(a.data(), b.data()), a.data().len()))
}

/// PSNR over the pixels whose saliency exceeds `cutoff`; `None` when no
/// pixel qualifies.
pub fn psnr_s(a: &RgbImage, b: &RgbImage, map: &SaliencyMap, cutoff: f64) -> Result<Option<Psnr>, MetricsError> {
    a.same_dims(b)?;
    if map.dims() != a.dims() {
        return Err(MetricsError::MapDimensions(map.width(), map.height(), a.width(), a.height()));
    }
    let mut sse = 0u64;
    let mut samples = 0usize;
    for ((pa, pb), &s) in a.data().chunks_exact(3).zip(b.data().chunks_exact(3)).zip(map.values()) {
        if s > cutoff {
            sse += squared_error(pa, pb);
            samples += 3;
        }
    }
    Ok((samples > 0).then(|| Psnr::from_sse(sse, samples)))
}

fn gaussian(len: usize) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..len).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, kx: &[f64], ky: &[f64]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - kx.len(), h + 1 - ky.len());
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = kx.iter().zip(&src[x..]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = ky.iter().enumerate().map(|(j, k)| k * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term over all valid windows.
fn ssim_terms(a: &[f64], b: &[f64], w: usize, h: usize) -> (f64, f64) {
    let (kx, ky) = (gaussian(WINDOW.min(w)), gaussian(WINDOW.min(h)));
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, w, h, &kx, &ky);
    let mu_b = filter_valid(b, w, h, &kx, &ky);
    let e_aa = filter_valid(&prod(|x, _| x * x), w, h, &kx, &ky);
    let e_bb = filter_valid(&prod(|_, y| y * y), w, h, &kx, &ky);
    let e_ab = filter_valid(&prod(|x, y| x * y), w, h, &kx, &ky);
    let n = mu_a.len() as f64;
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs = (2.0 * cov + C2) / (var_a + var_b + C2);
        let l = (2.0 * ma * mb + C1) / (ma * ma + mb * mb + C1);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    (ssim_sum / n, cs_sum / n)
}

/// Gaussian-window SSIM on BT.601 luma. Images narrower than the window use
/// a window clipped to the image.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricsError> {
    a.same_dims(b)?;
    let (w, h) = a.dims();
    Ok(ssim_terms(&a.luma(), &b.luma(), w, h).0)
}

fn halve(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (hw, hh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(hw * hh);
    for y in 0..hh {
        for x in 0..hw {
            let at = |dx: usize, dy: usize| plane[(2 * y + dy) * w + 2 * x + dx];
            out.push((at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) / 4.0);
        }
    }
    (out, hw, hh)
}

/// Five-scale MS-SSIM on BT.601 luma with 2x2 averaging between scales.
/// Negative contrast-structure terms are clamped to zero before weighting.
pub fn ms_ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricsError> {
    a.same_dims(b)?;
    let (mut w, mut h) = a.dims();
    if w < MS_SSIM_MIN_DIM || h < MS_SSIM_MIN_DIM {
        return Err(MetricsError::TooSmall {
            width: w,
            height: h,
            min: MS_SSIM_MIN_DIM,
        });
    }
    let (mut pa, mut pb) = (a.luma(), b.luma());
    let mut value = 1.0;
    for (scale, &weight) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (s, cs) = ssim_terms(&pa, &pb, w, h);
        let term = if scale + 1 == MS_SSIM_WEIGHTS.len() { s } else { cs };
        value *= term.max(0.0).powf(weight);
        if scale + 1 < MS_SSIM_WEIGHTS.len() {
            let (na, nw, nh) = halve(&pa, w, h);
            pb = halve(&pb, w, h).0;
            pa = na;
            (w, h) = (nw, nh);
        }
    }
    Ok(value)
}

/// Per-image quality record. `psnr_s` is absent when no pixel is salient,
/// `msssim` when the image is too small for five scales.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub id: String,
    pub bytes: usize,
    pub psnr: Psnr,
    pub psnr_s: Option<Psnr>,
    pub ssim: f64,
    pub msssim: Option<f64>,
}

pub const CSV_HEADER: &str = "id,bytes,psnr,psnr_s,ssim,msssim";

impl MetricsReport {
    pub fn measure(
        id: impl Into<String>,
        bytes: usize,
        original: &RgbImage,
        decoded: &RgbImage,
        map: &SaliencyMap,
        cutoff: f64,
    ) -> Result<Self, MetricsError> {
        let msssim = match ms_ssim(original, decoded) {
            Ok(v) => Some(v),
            Err(MetricsError::TooSmall { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            id: id.into(),
            bytes,
            psnr: psnr(original, decoded)?,
            psnr_s: psnr_s(original, decoded, map, cutoff)?,
            ssim: ssim(original, decoded)?,
            msssim,
        })
    }

    pub fn csv_row(&self) -> String {
        let na = || "na".to_string();
        format!(
            "{},{},{},{},{:.6},{}",
            self.id,
            self.bytes,
            self.psnr,
            self.psnr_s.map_or_else(na, |p| p.to_string()),
            self.ssim,
            self.msssim.map_or_else(na, |v| format!("{v:.6}")),
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self, MetricsError> {
        let bad = || MetricsError::Parse(line.to_string());
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        fn opt(s: &str) -> Option<&str> {
            (s != "na").then_some(s)
        }
        Ok(MetricsReport {
            id: f[0].to_string(),
            bytes: f[1].parse().map_err(|_| bad())?,
            psnr: f[2].parse()?,
            psnr_s: opt(f[3]).map(str::parse).transpose()?,
            ssim: f[4].parse().map_err(|_| bad())?,
            msssim: opt(f[5]).map(|s| s.parse().map_err(|_| bad())).transpose()?,
        })
    }
}

pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
