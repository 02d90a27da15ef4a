use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_frame, read_to_string, write_atomic, write_frame, IoError};
use crate::frame::Movie;

pub const MANIFEST_VERSION: &str = "cellforest-movie/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    /// Relative to the manifest's directory.
    pub file: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieManifest {
    pub version: String,
    pub width: usize,
    pub height: usize,
    pub interval_min: f64,
    pub frames: Vec<FrameEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Accepts either a manifest file or a directory holding `manifest.json`.
fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

impl MovieManifest {
    pub fn read(path: &Path) -> Result<Self, IoError> {
        let path = manifest_path(path);
        let text = read_to_string(&path)?;
        let m: MovieManifest = serde_json::from_str(&text).map_err(|e| IoError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        m.check(&path)?;
        Ok(m)
    }

    fn check(&self, path: &Path) -> Result<(), IoError> {
        let fail = |message: String| IoError::Manifest {
            path: path.to_path_buf(),
            message,
        };
        if self.version != MANIFEST_VERSION {
            return Err(fail(format!("unsupported version {:?}", self.version)));
        }
        if self.interval_min.is_nan() || self.interval_min <= 0.0 {
            return Err(fail("interval_min must be positive".into()));
        }
        for (i, e) in self.frames.iter().enumerate() {
            if e.index != i {
                return Err(fail(format!(
                    "frame entry {i} has index {}; indices must run 0, 1, 2, ...",
                    e.index
                )));
            }
        }
        Ok(())
    }
}

/// Loads every frame listed by the manifest at `path`.
pub fn load_movie(path: &Path) -> Result<(Movie, MovieManifest), IoError> {
    let mpath = manifest_path(path);
    let manifest = MovieManifest::read(&mpath)?;
    let dir = mpath.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let fpath = dir.join(&entry.file);
        let frame = read_frame(&fpath, entry.index)?;
        if frame.dims() != (manifest.width, manifest.height) {
            return Err(IoError::Manifest {
                path: fpath,
                message: format!(
                    "frame is {}x{}, manifest declares {}x{}",
                    frame.width(),
                    frame.height(),
                    manifest.width,
                    manifest.height
                ),
            });
        }
        frames.push(frame);
    }
    Ok((Movie::new(frames, manifest.interval_min), manifest))
}

/// Writes `frame_NNNN.pgm` files and `manifest.json` into `dir`.
pub fn save_movie(movie: &Movie, dir: &Path, provenance: Option<Provenance>) -> Result<MovieManifest, IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let (width, height) = movie.dims().unwrap_or((0, 0));
    let mut entries = Vec::with_capacity(movie.len());
    for (i, frame) in movie.frames.iter().enumerate() {
        let file = format!("frame_{i:04}.pgm");
        write_frame(frame, &dir.join(&file))?;
        entries.push(FrameEntry { index: i, file });
    }
    let manifest = MovieManifest {
        version: MANIFEST_VERSION.to_string(),
        width,
        height,
        interval_min: movie.interval_min,
        frames: entries,
        provenance,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}
