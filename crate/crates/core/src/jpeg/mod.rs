//! Baseline sequential-DCT JPEG (JFIF) encoder and decoder.

mod dct;
mod decoder;
mod encoder;
mod tables;

use thiserror::Error;

pub use dct::{fdct8x8, idct8x8, idct8x8_fixed, Dct8};
pub use decoder::decode;
pub use encoder::encode;
pub use tables::{quant_tables_for_quality, QuantTables, BASE_CHROMA, BASE_LUMA, ZIGZAG};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("truncated stream")]
    Truncated,
    #[error("missing start-of-image marker")]
    NotJpeg,
    #[error("unexpected byte {0:#04x} where a marker was expected")]
    BadMarker(u8),
    #[error("marker inside entropy-coded data")]
    UnexpectedMarker,
    #[error("invalid Huffman code")]
    BadHuffmanCode,
    #[error("missing or out-of-sequence restart marker")]
    MissingRestart,
    #[error("{0}")]
    BadSegment(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum JpegError {
    #[error("quality {0} outside 1..=100")]
    Quality(u8),
    #[error("{kind} at byte {offset}")]
    Parse { offset: usize, kind: ParseErrorKind },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// A complete JFIF byte stream.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct JpegStream {
    bytes: Vec<u8>,
}

impl JpegStream {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        JpegStream { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn decode(&self) -> Result<crate::RgbImage, JpegError> {
        decode(&self.bytes)
    }
}

/// Encode then decode: the image as a viewer would see it at `quality`.
pub fn roundtrip(image: &crate::RgbImage, quality: u8) -> Result<(JpegStream, crate::RgbImage), JpegError> {
    let stream = encode(image, quality)?;
    let decoded = stream.decode()?;
    Ok((stream, decoded))
}
