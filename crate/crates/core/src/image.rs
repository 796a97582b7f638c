//! 8-bit RGB raster shared by the codec, the network front end and the metrics.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    ZeroSized { width: usize, height: usize },
    #[error("expected {expected} samples for {width}x{height} RGB, got {actual}")]
    SampleCount {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// Interleaved RGB, row-major, 3 bytes per pixel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroSized { width, height });
        }
        let expected = width * height * 3;
        if data.len() != expected {
            return Err(ImageError::SampleCount {
                width,
                height,
                expected,
                actual: data.len(),
            });
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, ImageError> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_dims(&self, other: &RgbImage) -> Result<(), ImageError> {
        if self.dims() != other.dims() {
            return Err(ImageError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// BT.601 luma of every pixel, unrounded.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    /// Bilinear resample with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<RgbImage, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroSized { width, height });
        }
        if (width, height) == self.dims() {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let coord = |o: usize, scale: f64, len: usize| {
            let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = c.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, c - i0 as f64)
        };
        let cols: Vec<_> = (0..width).map(|x| coord(x, sx, self.width)).collect();
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let (y0, y1, fy) = coord(y, sy, self.height);
            for &(x0, x1, fx) in &cols {
                let (a, b, c, d) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
                for ch in 0..3 {
                    let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                    let bot = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                    data.push((top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        RgbImage::new(width, height, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_and_wrong_length() {
        assert!(RgbImage::new(0, 4, vec![]).is_err());
        assert!(matches!(
            RgbImage::new(2, 2, vec![0; 11]),
            Err(ImageError::SampleCount { expected: 12, .. })
        ));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = RgbImage::filled(7, 5, [10, 200, 33]).unwrap();
        let r = img.resize_bilinear(16, 3).unwrap();
        assert!(r.data().chunks(3).all(|p| p == [10, 200, 33]));
        assert_eq!(img.resize_bilinear(7, 5).unwrap(), img);
    }

    #[test]
    fn luma_of_gray_is_gray() {
        let img = RgbImage::filled(2, 1, [128, 128, 128]).unwrap();
        for v in img.luma() {
            assert!((v - 128.0).abs() < 1e-12);
        }
    }
}
