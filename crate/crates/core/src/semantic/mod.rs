//! Saliency-driven variable-quality JPEG: blocks of the image are taken from
//! JPEG roundtrips at different qualities according to a saliency map, and
//! the resulting mosaic is re-encoded once at a size-matched quality.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::image::ImageError;
use crate::jpeg::{self, JpegError, JpegStream};
use crate::msroi::SaliencyMap;
use crate::RgbImage;

pub const BLOCK: usize = 8;

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("invalid quality ladder: {0}")]
    Ladder(String),
    #[error("level {level} outside a {levels}-level ladder")]
    Level { level: usize, levels: usize },
    #[error("saliency map is {map_w}x{map_h} but the image is {image_w}x{image_h}")]
    MapDimensions {
        map_w: usize,
        map_h: usize,
        image_w: usize,
        image_h: usize,
    },
    #[error("level map grid {0}x{1} does not match the image block grid {2}x{3}")]
    GridMismatch(usize, usize, usize, usize),
    #[error("no ladder image for level {0}")]
    MissingLevel(usize),
    #[error("target size must be positive")]
    ZeroTarget,
    #[error(transparent)]
    Jpeg(#[from] JpegError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Qualities `Q_l..=Q_h` spread over `levels` saliency levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QualityLadder {
    low: u8,
    high: u8,
    levels: usize,
}

impl QualityLadder {
    pub fn new(low: u8, high: u8, levels: usize) -> Result<Self, SemanticError> {
        if low == 0 || high > 100 || low > high {
            return Err(SemanticError::Ladder(format!("need 1 <= Q_l <= Q_h <= 100, got {low}..{high}")));
        }
        if levels == 0 || levels > 255 {
            return Err(SemanticError::Ladder(format!("level count {levels} outside 1..=255")));
        }
        Ok(QualityLadder { low, high, levels })
    }

    pub fn low(&self) -> u8 {
        self.low
    }

    pub fn high(&self) -> u8 {
        self.high
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn quality(&self, level: usize) -> Result<u8, SemanticError> {
        quality_for_level(self, level)
    }

    pub fn qualities(&self) -> Vec<u8> {
        (0..self.levels).map(|n| self.quality(n).expect("in range")).collect()
    }
}

impl Default for QualityLadder {
    fn default() -> Self {
        QualityLadder {
            low: 30,
            high: 70,
            levels: 5,
        }
    }
}

/// `Q_n = round(Q_l + n (Q_h - Q_l) / (k - 1))`, and `Q_l` for a single level.
pub fn quality_for_level(ladder: &QualityLadder, level: usize) -> Result<u8, SemanticError> {
    let k = ladder.levels;
    if level >= k {
        return Err(SemanticError::Level { level, levels: k });
    }
    if k == 1 {
        return Ok(ladder.low);
    }
    let span = (ladder.high - ladder.low) as f64;
    Ok((ladder.low as f64 + level as f64 * span / (k - 1) as f64).round() as u8)
}

/// One saliency level per 8x8 block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelMap {
    blocks_x: usize,
    blocks_y: usize,
    levels: usize,
    values: Vec<u8>,
}

impl LevelMap {
    pub fn new(blocks_x: usize, blocks_y: usize, levels: usize, values: Vec<u8>) -> Result<Self, SemanticError> {
        if values.len() != blocks_x * blocks_y {
            return Err(SemanticError::GridMismatch(blocks_x, blocks_y, values.len(), 1));
        }
        if let Some(&bad) = values.iter().find(|&&v| v as usize >= levels) {
            return Err(SemanticError::Level {
                level: bad as usize,
                levels,
            });
        }
        Ok(LevelMap {
            blocks_x,
            blocks_y,
            levels,
            values,
        })
    }

    /// Every block of a `width x height` image at `level`.
    pub fn uniform(width: usize, height: usize, levels: usize, level: u8) -> Result<Self, SemanticError> {
        let (bx, by) = block_grid(width, height);
        Self::new(bx, by, levels, vec![level; bx * by])
    }

    pub fn blocks_x(&self) -> usize {
        self.blocks_x
    }

    pub fn blocks_y(&self) -> usize {
        self.blocks_y
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn get(&self, bx: usize, by: usize) -> u8 {
        self.values[by * self.blocks_x + bx]
    }

    pub fn set(&mut self, bx: usize, by: usize, level: u8) -> Result<(), SemanticError> {
        if level as usize >= self.levels {
            return Err(SemanticError::Level {
                level: level as usize,
                levels: self.levels,
            });
        }
        self.values[by * self.blocks_x + bx] = level;
        Ok(())
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Number of blocks at each level.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.levels];
        for &v in &self.values {
            h[v as usize] += 1;
        }
        h
    }
}

pub fn block_grid(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(BLOCK), height.div_ceil(BLOCK))
}

/// Level of a block whose mean saliency is `s`: the smallest `n` with
/// `s <= (n + 1) / k`.
pub fn level_for_saliency(s: f64, levels: usize) -> u8 {
    (0..levels)
        .find(|&n| s <= (n + 1) as f64 / levels as f64)
        .unwrap_or(levels - 1) as u8
}

/// Bins each block's mean saliency (over its in-image pixels) into `levels`.
pub fn discretize(map: &SaliencyMap, levels: usize) -> Result<LevelMap, SemanticError> {
    if levels == 0 || levels > 255 {
        return Err(SemanticError::Ladder(format!("level count {levels} outside 1..=255")));
    }
    let (w, h) = map.dims();
    let (bx, by) = block_grid(w, h);
    let mut values = Vec::with_capacity(bx * by);
    for j in 0..by {
        for i in 0..bx {
            let (x0, y0) = (i * BLOCK, j * BLOCK);
            let (x1, y1) = ((x0 + BLOCK).min(w), (y0 + BLOCK).min(h));
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += map.get(x, y);
                }
            }
            let mean = sum / ((x1 - x0) * (y1 - y0)) as f64;
            values.push(level_for_saliency(mean, levels));
        }
    }
    LevelMap::new(bx, by, levels, values)
}

/// `decode(encode(image, Q_n))` for every level `n`.
pub fn encode_ladder(image: &RgbImage, ladder: &QualityLadder) -> Result<Vec<RgbImage>, SemanticError> {
    let qualities = ladder.qualities();
    let mut distinct = qualities.clone();
    distinct.dedup();
    let decoded: Vec<(u8, RgbImage)> = distinct
        .par_iter()
        .map(|&q| Ok((q, jpeg::roundtrip(image, q)?.1)))
        .collect::<Result<_, JpegError>>()?;
    let by_quality: BTreeMap<u8, RgbImage> = decoded.into_iter().collect();
    Ok(qualities.iter().map(|q| by_quality[q].clone()).collect())
}

/// Copies each 8x8 block verbatim from the ladder image at that block's level.
pub fn assemble_mosaic(ladder_images: &[RgbImage], levels: &LevelMap) -> Result<RgbImage, SemanticError> {
    let first = ladder_images.first().ok_or(SemanticError::MissingLevel(0))?;
    for img in ladder_images {
        first.same_dims(img)?;
    }
    let (w, h) = first.dims();
    let (bx, by) = block_grid(w, h);
    if (bx, by) != (levels.blocks_x, levels.blocks_y) {
        return Err(SemanticError::GridMismatch(levels.blocks_x, levels.blocks_y, bx, by));
    }
    let mut out = first.clone();
    let data = out.data_mut();
    for j in 0..by {
        for i in 0..bx {
            let level = levels.get(i, j) as usize;
            let src = ladder_images.get(level).ok_or(SemanticError::MissingLevel(level))?.data();
            let (x0, x1) = (i * BLOCK * 3, ((i + 1) * BLOCK).min(w) * 3);
            for y in j * BLOCK..((j + 1) * BLOCK).min(h) {
                let row = y * w * 3;
                data[row + x0..row + x1].copy_from_slice(&src[row + x0..row + x1]);
            }
        }
    }
    Ok(out)
}

/// Outcome of size-matched re-encoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinalEncoding {
    pub stream: JpegStream,
    pub quality: u8,
    pub target_bytes: usize,
    /// False when no quality landed within tolerance and the closest size
    /// was taken instead.
    pub within_tolerance: bool,
}

impl FinalEncoding {
    pub fn relative_size_error(&self) -> f64 {
        (self.stream.len() as f64 - self.target_bytes as f64) / self.target_bytes as f64
    }
}

struct SizeProbe<'a> {
    image: &'a RgbImage,
    cache: BTreeMap<u8, JpegStream>,
}

impl SizeProbe<'_> {
    fn size(&mut self, q: u8) -> Result<usize, JpegError> {
        if let Some(s) = self.cache.get(&q) {
            return Ok(s.len());
        }
        let s = jpeg::encode(self.image, q)?;
        let n = s.len();
        self.cache.insert(q, s);
        Ok(n)
    }
}

/// Re-encodes `mosaic` at the largest quality whose size is within
/// `tolerance` (a fraction) of `target_bytes`, found by binary search on the
/// upper size bound. When none qualifies, the quality with the closest size
/// is returned and flagged.
pub fn final_encode(mosaic: &RgbImage, target_bytes: usize, tolerance: f64) -> Result<FinalEncoding, SemanticError> {
    if target_bytes == 0 {
        return Err(SemanticError::ZeroTarget);
    }
    let target = target_bytes as f64;
    let upper = target * (1.0 + tolerance.max(0.0));
    let within = |size: usize| ((size as f64 - target).abs() / target) <= tolerance;
    let mut probe = SizeProbe {
        image: mosaic,
        cache: BTreeMap::new(),
    };

    let chosen = if probe.size(1)? as f64 > upper {
        1
    } else {
        // invariant: size(lo) <= upper, and size(hi + 1) > upper when hi < 100
        let (mut lo, mut hi) = (1u8, 100u8);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if probe.size(mid)? as f64 <= upper {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    };
    let mut quality = chosen;
    let ok = within(probe.size(chosen)?);
    if !ok && chosen < 100 {
        let below = (probe.size(chosen)? as f64 - target).abs();
        let above = (probe.size(chosen + 1)? as f64 - target).abs();
        if above < below {
            quality = chosen + 1;
        }
    }
    let stream = probe.cache.remove(&quality).expect("probed");
    Ok(FinalEncoding {
        within_tolerance: within(stream.len()),
        stream,
        quality,
        target_bytes,
    })
}

/// Final stream size to aim for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeTarget {
    Bytes(usize),
    /// The size of a standard JPEG of the original image at this quality.
    MatchQuality(u8),
}

impl SizeTarget {
    pub fn resolve(&self, image: &RgbImage) -> Result<usize, SemanticError> {
        match *self {
            SizeTarget::Bytes(0) => Err(SemanticError::ZeroTarget),
            SizeTarget::Bytes(n) => Ok(n),
            SizeTarget::MatchQuality(q) => Ok(jpeg::encode(image, q)?.len()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SemanticOutput {
    pub levels: LevelMap,
    /// Pixels before the final re-encode.
    pub mosaic: RgbImage,
    pub encoding: FinalEncoding,
}

/// discretize -> encode_ladder -> assemble_mosaic -> final_encode.
pub fn semantic_compress(
    image: &RgbImage,
    map: &SaliencyMap,
    ladder: &QualityLadder,
    target: SizeTarget,
    tolerance: f64,
) -> Result<SemanticOutput, SemanticError> {
    if map.dims() != image.dims() {
        return Err(SemanticError::MapDimensions {
            map_w: map.width(),
            map_h: map.height(),
            image_w: image.width(),
            image_h: image.height(),
        });
    }
    let target_bytes = target.resolve(image)?;
    let levels = discretize(map, ladder.levels())?;
    let ladder_images = encode_ladder(image, ladder)?;
    let mosaic = assemble_mosaic(&ladder_images, &levels)?;
    let encoding = final_encode(&mosaic, target_bytes, tolerance)?;
    Ok(SemanticOutput {
        levels,
        mosaic,
        encoding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_in_steps_of_ten() {
        let l = QualityLadder::new(30, 70, 5).unwrap();
        assert_eq!(l.qualities(), vec![30, 40, 50, 60, 70]);
        assert_eq!(QualityLadder::new(30, 70, 3).unwrap().quality(1).unwrap(), 50);
        assert!(l.quality(5).is_err());
    }

    #[test]
    fn single_level_is_low_quality() {
        let l = QualityLadder::new(20, 90, 1).unwrap();
        assert_eq!(l.qualities(), vec![20]);
    }

    #[test]
    fn bin_edges() {
        assert_eq!(level_for_saliency(0.35, 5), 1);
        assert_eq!(level_for_saliency(0.0, 5), 0);
        assert_eq!(level_for_saliency(0.2, 5), 0);
        assert_eq!(level_for_saliency(0.5, 5), 2);
        assert_eq!(level_for_saliency(1.0, 5), 4);
    }

    #[test]
    fn rejects_bad_ladders() {
        assert!(QualityLadder::new(0, 50, 3).is_err());
        assert!(QualityLadder::new(60, 50, 3).is_err());
        assert!(QualityLadder::new(10, 101, 3).is_err());
        assert!(QualityLadder::new(10, 50, 0).is_err());
    }

    #[test]
    fn partial_edge_blocks_average_in_image_pixels() {
        // 10x3 image: second block column holds only 2x3 pixels
        let values: Vec<f64> = (0..30).map(|i| if i % 10 >= 8 { 1.0 } else { 0.0 }).collect();
        let map = SaliencyMap::new(10, 3, values).unwrap();
        let lm = discretize(&map, 5).unwrap();
        assert_eq!((lm.blocks_x(), lm.blocks_y()), (2, 1));
        assert_eq!(lm.values(), &[0, 4]);
    }
}
