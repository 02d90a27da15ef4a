//! Persistence: 16-bit PGM label frames, a JSON movie manifest, and TSV/DOT
//! exports of forests and correction events.
//!
//! Every writer goes through [`write_atomic`], so readers never observe a
//! half-written file.

mod export;
mod manifest;
mod pgm;

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use export::{events_tsv, forest_dot, forest_tsv, read_forest_tsv, EVENTS_TSV_HEADER, FOREST_TSV_HEADER};
pub use manifest::{load_movie, save_movie, FrameEntry, MovieManifest, Provenance, MANIFEST_FILE, MANIFEST_VERSION};
pub use pgm::{decode_frame, encode_frame, read_frame, write_frame};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("label {label} at ({x}, {y}) does not fit in 16 bits")]
    LabelOverflow { label: u32, x: usize, y: usize },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: line {line}: {message}")]
    Table {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}
