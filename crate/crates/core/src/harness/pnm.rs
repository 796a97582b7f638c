//! Binary PPM (P6) and PGM (P5) at maxval 255.

use std::path::Path;

use super::{write_atomic, HarnessError};
use crate::msroi::SaliencyMap;
use crate::RgbImage;

fn pnm_error(offset: usize, reason: impl Into<String>) -> HarnessError {
    HarnessError::Pnm {
        offset,
        reason: reason.into(),
    }
}

struct Header {
    width: usize,
    height: usize,
    payload: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header, HarnessError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(pnm_error(0, format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(pnm_error(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(pnm_error(pos, "expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| pnm_error(start, "number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(pnm_error(pos, format!("unsupported maxval {maxval}, only 255 is accepted")));
    }
    if width == 0 || height == 0 {
        return Err(pnm_error(pos, format!("zero-sized image {width}x{height}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(pnm_error(pos, "expected one whitespace byte before the raster")),
    }
    Ok(Header {
        width,
        height,
        payload: pos,
    })
}

fn raster<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8], HarnessError> {
    let need = h.width * h.height * channels;
    let have = bytes.len() - h.payload;
    if have < need {
        return Err(pnm_error(bytes.len(), format!("truncated raster: {have} of {need} bytes")));
    }
    Ok(&bytes[h.payload..h.payload + need])
}

pub fn parse_ppm(bytes: &[u8]) -> Result<RgbImage, HarnessError> {
    let h = parse_header(bytes, b"P6")?;
    let data = raster(bytes, &h, 3)?.to_vec();
    Ok(RgbImage::new(h.width, h.height, data)?)
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

/// A PGM raster as raw 8-bit samples.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), HarnessError> {
    let h = parse_header(bytes, b"P5")?;
    Ok((h.width, h.height, raster(bytes, &h, 1)?.to_vec()))
}

pub fn encode_pgm(width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    out
}

pub fn map_to_samples(map: &SaliencyMap) -> Vec<u8> {
    map.values().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn map_from_samples(width: usize, height: usize, samples: &[u8]) -> Result<SaliencyMap, HarnessError> {
    Ok(SaliencyMap::new(width, height, samples.iter().map(|&s| s as f64 / 255.0).collect())?)
}

pub fn load_ppm(path: &Path) -> Result<RgbImage, HarnessError> {
    parse_ppm(&std::fs::read(path).map_err(|e| HarnessError::io(path, e))?)
}

pub fn save_ppm(path: &Path, image: &RgbImage) -> Result<(), HarnessError> {
    write_atomic(path, &encode_ppm(image))
}

/// Saliency map from an 8-bit PGM, sample `s` mapping to `s / 255`.
pub fn load_pgm(path: &Path) -> Result<SaliencyMap, HarnessError> {
    let (w, h, s) = parse_pgm(&std::fs::read(path).map_err(|e| HarnessError::io(path, e))?)?;
    map_from_samples(w, h, &s)
}

pub fn save_pgm(path: &Path, map: &SaliencyMap) -> Result<(), HarnessError> {
    write_atomic(path, &encode_pgm(map.width(), map.height(), &map_to_samples(map)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_with_comment() {
        let mut bytes = b"P6 # c\n2 2 255\n".to_vec();
        bytes.extend(0..12u8);
        let img = parse_ppm(&bytes).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.pixel(1, 1), [9, 10, 11]);
    }

    #[test]
    fn deep_maxval_rejected() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend([0, 0]);
        assert!(matches!(parse_pgm(&bytes), Err(HarnessError::Pnm { .. })));
    }

    #[test]
    fn truncated_raster_reports_end_offset() {
        let bytes = b"P6\n2 2\n255\n\x01\x02".to_vec();
        match parse_ppm(&bytes) {
            Err(HarnessError::Pnm { offset, .. }) => assert_eq!(offset, bytes.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_magic_at_zero() {
        assert!(matches!(parse_ppm(b"P5\n1 1\n255\n\0"), Err(HarnessError::Pnm { offset: 0, .. })));
    }
}
