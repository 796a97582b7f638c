//! Datasets, configuration and experiment runners.

mod bench;
mod config;
mod pnm;
mod synth;

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::image::ImageError;
use crate::jpeg::JpegError;
use crate::metrics::MetricsError;
use crate::msroi::MsroiError;
use crate::semantic::SemanticError;

pub use bench::{
    corpus_items, kodak_style_corpus, load_dataset, run_benchmark, run_one, sweep, sweep_csv, BenchItem, BenchReport,
    BenchRow, BenchSummary, SweepRow, SWEEP_HEADER,
};
pub use config::RunConfig;
pub use pnm::{
    encode_pgm, encode_ppm, load_pgm, load_ppm, map_from_samples, map_to_samples, parse_pgm, parse_ppm, save_pgm,
    save_ppm,
};
pub use synth::{Shape, SyntheticImage, SyntheticObject, SyntheticSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("pnm parse error at byte {offset}: {reason}")]
    Pnm { offset: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("decoded image is {0}x{1}, original is {2}x{3}")]
    DecodedDimensions(usize, usize, usize, usize),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Msroi(#[from] MsroiError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Jpeg(#[from] JpegError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let name = path
        .file_name()
        .ok_or_else(|| HarnessError::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(HarnessError::io(path, e));
    }
    Ok(())
}
