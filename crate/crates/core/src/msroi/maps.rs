use super::MsroiError;
use crate::tensor::Tensor;
use crate::Scalar;

/// Per-pixel saliency in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, MsroiError> {
        if width == 0 || height == 0 {
            return Err(MsroiError::Map(format!("saliency map must be non-empty, got {width}x{height}")));
        }
        if values.len() != width * height {
            return Err(MsroiError::Map(format!(
                "{width}x{height} map needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MsroiError::Map(format!("saliency value {v} outside [0, 1]")));
        }
        Ok(SaliencyMap { width, height, values })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self, MsroiError> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Clamps negatives to zero, then min-max normalises to `[0, 1]`.
    /// An identically zero map stays zero; a positive constant map becomes all ones.
    pub fn from_raw(width: usize, height: usize, raw: &[f64]) -> Result<Self, MsroiError> {
        let clamped: Vec<f64> = raw
            .iter()
            .map(|&v| if v.is_finite() && v > 0.0 { v } else { 0.0 })
            .collect();
        let max = clamped.iter().copied().fold(0.0, f64::max);
        let min = clamped.iter().copied().fold(f64::INFINITY, f64::min);
        let values = if max <= 0.0 {
            clamped
        } else if max == min {
            vec![1.0; clamped.len()]
        } else {
            clamped.iter().map(|v| ((v - min) / (max - min)).clamp(0.0, 1.0)).collect()
        };
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(1.0, f64::min)
    }

    /// Mean saliency over the pixels where `mask` is set.
    pub fn mean_where(&self, mask: &[bool]) -> Option<f64> {
        let (sum, n) = self
            .values
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Total activation per category, `Z[c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassScores<T>(pub Vec<T>);

impl<T: Scalar> ClassScores<T> {
    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Category indices by descending score; ties keep the lower index first.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| {
            self.0[b]
                .partial_cmp(&self.0[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RankWeighting {
    /// Rank `r` (1-based) of `K` gets weight `(K + 1 - r) / K`.
    #[default]
    Linear,
    Uniform,
}

/// Which categories contribute to the multi-structure map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MapMode {
    /// Every category with `Z[c] > threshold`, unweighted.
    Threshold(f64),
    /// The `k` highest-scoring categories, weighted by rank.
    TopK { k: usize, weighting: RankWeighting },
}

impl Default for MapMode {
    fn default() -> Self {
        MapMode::TopK {
            k: 5,
            weighting: RankWeighting::Linear,
        }
    }
}

fn head_dims<T: Scalar>(head: &Tensor<T>) -> Result<[usize; 4], MsroiError> {
    match *head.shape() {
        [c, d, h, w] => Ok([c, d, h, w]),
        _ => Err(MsroiError::Shape(format!(
            "head must be 4-d (category, feature, y, x), got {:?}",
            head.shape()
        ))),
    }
}

/// `Z[c] = sum_d sum_{x,y} f^c_d(x, y)` over a `(C, D, h, w)` head.
pub fn class_scores<T: Scalar>(head: &Tensor<T>) -> Result<ClassScores<T>, MsroiError> {
    let [c, d, h, w] = head_dims(head)?;
    let block = d * h * w;
    Ok(ClassScores(
        (0..c)
            .map(|ci| head.data()[ci * block..(ci + 1) * block].iter().copied().sum())
            .collect(),
    ))
}

/// Per-category weights selected by `mode`; zero for excluded categories.
pub fn category_weights<T: Scalar>(scores: &ClassScores<T>, mode: MapMode) -> Result<Vec<f64>, MsroiError> {
    let c = scores.len();
    let mut weights = vec![0.0; c];
    match mode {
        MapMode::Threshold(t) => {
            for (w, z) in weights.iter_mut().zip(scores.values()) {
                if z.to_f64_lossy() > t {
                    *w = 1.0;
                }
            }
        }
        MapMode::TopK { k, weighting } => {
            if k == 0 || k > c {
                return Err(MsroiError::Map(format!("top-k needs 1 <= k <= {c}, got {k}")));
            }
            for (r, &cat) in scores.ranking().iter().take(k).enumerate() {
                weights[cat] = match weighting {
                    RankWeighting::Linear => (k - r) as f64 / k as f64,
                    RankWeighting::Uniform => 1.0,
                };
            }
        }
    }
    Ok(weights)
}

/// Un-normalised multi-structure map at head resolution, row-major `h x w`.
pub fn msroi_raw_map<T: Scalar>(
    head: &Tensor<T>,
    scores: &ClassScores<T>,
    mode: MapMode,
) -> Result<Vec<f64>, MsroiError> {
    let [c, d, h, w] = head_dims(head)?;
    if scores.len() != c {
        return Err(MsroiError::Shape(format!("{} scores for {c} categories", scores.len())));
    }
    let weights = category_weights(scores, mode)?;
    let plane = h * w;
    let mut raw = vec![0.0f64; plane];
    for (ci, &wt) in weights.iter().enumerate() {
        if wt == 0.0 {
            continue;
        }
        for di in 0..d {
            let f = &head.data()[(ci * d + di) * plane..][..plane];
            for (r, &v) in raw.iter_mut().zip(f) {
                *r += wt * v.to_f64_lossy();
            }
        }
    }
    Ok(raw)
}

/// Multi-structure region-of-interest map at head resolution, normalised.
pub fn msroi_map<T: Scalar>(
    head: &Tensor<T>,
    scores: &ClassScores<T>,
    mode: MapMode,
) -> Result<SaliencyMap, MsroiError> {
    let [_, _, h, w] = head_dims(head)?;
    SaliencyMap::from_raw(w, h, &msroi_raw_map(head, scores, mode)?)
}

/// Class activation map `M_c(x,y) = sum_d w^c_d f_d(x,y)`, normalised.
///
/// `features` is `(D, h, w)` or `(1, D, h, w)`; `weights` holds `C x D`
/// values in any shape whose leading extent is `C`.
pub fn cam_map<T: Scalar>(
    features: &Tensor<T>,
    weights: &Tensor<T>,
    category: usize,
) -> Result<SaliencyMap, MsroiError> {
    let (d, h, w) = match *features.shape() {
        [d, h, w] | [1, d, h, w] => (d, h, w),
        _ => {
            return Err(MsroiError::Shape(format!(
                "features must be (D, h, w), got {:?}",
                features.shape()
            )))
        }
    };
    let c = weights.shape().first().copied().unwrap_or(0);
    if c == 0 || weights.len() != c * d {
        return Err(MsroiError::Shape(format!(
            "classifier weights {:?} do not match {d} features",
            weights.shape()
        )));
    }
    if category >= c {
        return Err(MsroiError::UnknownCategory { category, categories: c });
    }
    let plane = h * w;
    let mut raw = vec![0.0f64; plane];
    for di in 0..d {
        let wt = weights.data()[category * d + di].to_f64_lossy();
        for (r, &v) in raw.iter_mut().zip(&features.data()[di * plane..][..plane]) {
            *r += wt * v.to_f64_lossy();
        }
    }
    SaliencyMap::from_raw(w, h, &raw)
}

/// Bilinear upsampling with corner alignment.
pub fn upsample_map(map: &SaliencyMap, width: usize, height: usize) -> Result<SaliencyMap, MsroiError> {
    if width == 0 || height == 0 {
        return Err(MsroiError::Map(format!("upsample target must be non-empty, got {width}x{height}")));
    }
    let (sw, sh) = map.dims();
    if width < sw || height < sh {
        return Err(MsroiError::Map(format!(
            "upsample target {width}x{height} smaller than source {sw}x{sh}"
        )));
    }
    if (width, height) == (sw, sh) {
        return Ok(map.clone());
    }
    let coord = |o: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if src == 1 || dst == 1 {
            return (0, 0, 0.0);
        }
        let c = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let i0 = (c.floor() as usize).min(src - 1);
        let i1 = (i0 + 1).min(src - 1);
        (i0, i1, c - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| coord(x, sw, width)).collect();
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, sh, height);
        for &(x0, x1, fx) in &cols {
            let top = map.get(x0, y0) * (1.0 - fx) + map.get(x1, y0) * fx;
            let bot = map.get(x0, y1) * (1.0 - fx) + map.get(x1, y1) * fx;
            values.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
        }
    }
    SaliencyMap::new(width, height, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(c: usize, d: usize, h: usize, w: usize, f: impl FnMut(usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(&[c, d, h, w], f)
    }

    #[test]
    fn zero_head_zero_scores() {
        let z = class_scores(&Tensor::<f64>::zeros(&[6, 4, 2, 2])).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_entry_lands_in_its_category() {
        let mut t = Tensor::<f64>::zeros(&[4, 3, 2, 2]);
        let off = t.offset4(2, 1, 1, 0);
        t.data_mut()[off] = 2.5;
        assert_eq!(class_scores(&t).unwrap().values(), &[0.0, 0.0, 2.5, 0.0]);
    }

    #[test]
    fn class_scores_rejects_3d() {
        assert!(class_scores(&Tensor::<f64>::zeros(&[4, 2, 2])).is_err());
    }

    #[test]
    fn one_category_passes_threshold() {
        let t = head(3, 2, 2, 2, |i| if i < 8 { -1.0 } else if i < 16 { 0.25 * (i % 4) as f64 } else { -0.5 });
        let z = class_scores(&t).unwrap();
        let m = msroi_map(&t, &z, MapMode::Threshold(0.0)).unwrap();
        // category 1: both features 0, .25, .5, .75 -> summed 0, .5, 1, 1.5
        let expected = SaliencyMap::from_raw(2, 2, &[0.0, 0.5, 1.0, 1.5]).unwrap();
        assert_eq!(m, expected);
    }

    #[test]
    fn nothing_passes_threshold() {
        let t = head(3, 2, 2, 2, |i| i as f64);
        let z = class_scores(&t).unwrap();
        let m = msroi_map(&t, &z, MapMode::Threshold(1e9)).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn top_k_larger_than_categories_rejected() {
        let t = head(3, 1, 1, 1, |i| i as f64);
        let z = class_scores(&t).unwrap();
        let mode = MapMode::TopK {
            k: 4,
            weighting: RankWeighting::Linear,
        };
        assert!(msroi_map(&t, &z, mode).is_err());
    }

    #[test]
    fn linear_rank_weights() {
        let z = ClassScores(vec![0.1f64, 3.0, -2.0, 1.0]);
        let w = category_weights(
            &z,
            MapMode::TopK {
                k: 3,
                weighting: RankWeighting::Linear,
            },
        )
        .unwrap();
        assert_eq!(w, vec![1.0 / 3.0, 1.0, 0.0, 2.0 / 3.0]);
    }

    #[test]
    fn normalisation_rules() {
        let m = SaliencyMap::from_raw(2, 1, &[-3.0, -1.0]).unwrap();
        assert_eq!(m.values(), &[0.0, 0.0]);
        let m = SaliencyMap::from_raw(2, 1, &[2.0, 2.0]).unwrap();
        assert_eq!(m.values(), &[1.0, 1.0]);
        let m = SaliencyMap::from_raw(3, 1, &[-1.0, 1.0, 3.0]).unwrap();
        assert_eq!(m.values(), &[0.0, 1.0 / 3.0, 1.0]);
    }

    #[test]
    fn cam_uniform_weights_single_feature() {
        let f = Tensor::from_vec(&[1, 2, 2], vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let wts = Tensor::from_vec(&[2, 1], vec![0.7, 0.7]).unwrap();
        let m = cam_map(&f, &wts, 1).unwrap();
        assert_eq!(m.values(), &[0.0, 0.25, 0.5, 1.0]);
        assert!(matches!(
            cam_map(&f, &wts, 2),
            Err(MsroiError::UnknownCategory { category: 2, categories: 2 })
        ));
    }

    #[test]
    fn cam_zero_weights_zero_map() {
        let f = Tensor::from_fn(&[3, 2, 2], |i| i as f64);
        let m = cam_map(&f, &Tensor::zeros(&[4, 3]), 0).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_identity_and_constant() {
        let m = SaliencyMap::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(upsample_map(&m, 2, 2).unwrap(), m);
        let one = SaliencyMap::constant(1, 1, 0.6).unwrap();
        assert!(upsample_map(&one, 5, 3).unwrap().values().iter().all(|&v| v == 0.6));
        assert!(upsample_map(&m, 0, 4).is_err());
        assert!(upsample_map(&m, 1, 4).is_err());
    }

    #[test]
    fn upsample_2x2_to_4x4_hand_grid() {
        let m = SaliencyMap::new(2, 2, vec![0.0, 0.3, 0.6, 0.9]).unwrap();
        let u = upsample_map(&m, 4, 4).unwrap();
        // corner aligned: sample positions 0, 1/3, 2/3, 1 on each axis
        // v(x, y) = 0.3 x + 0.6 y
        let mut expected = Vec::new();
        for y in 0..4 {
            for x in 0..4 {
                expected.push(0.3 * x as f64 / 3.0 + 0.6 * y as f64 / 3.0);
            }
        }
        for (a, b) in u.values().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
