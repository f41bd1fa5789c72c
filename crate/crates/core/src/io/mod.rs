//! File codecs: PFM float maps, PNG images and masks, PLY Gaussians and
//! meshes, OBJ meshes, camera JSON, pipeline configuration and the
//! monocular-depth directory layout.
//!
//! Decoders operate on byte slices and report failures with the byte offset
//! at which they were detected; the path-based helpers wrap them.

pub mod cameras;
pub mod config;
pub mod mono;
pub mod pfm;
pub mod ply;
pub mod png;

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorKind {
    MalformedHeader,
    Truncated,
    Endianness,
    InvalidValue,
}

impl fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MalformedHeader => "malformed header",
            Self::Truncated => "truncated payload",
            Self::Endianness => "endianness mismatch",
            Self::InvalidValue => "invalid value",
        })
    }
}

/// Decoding failure located at a byte offset of the input.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{format}: {kind} at byte {offset}: {detail}")]
pub struct FormatError {
    pub format: &'static str,
    pub kind: FormatErrorKind,
    pub offset: usize,
    pub detail: String,
}

impl FormatError {
    pub fn new(format: &'static str, kind: FormatErrorKind, offset: usize, detail: impl Into<String>) -> Self {
        Self {
            format,
            kind,
            offset,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, source: FormatError) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True when the underlying cause is a missing file.
    pub fn is_not_found(&self) -> bool {
        matches!(self, Self::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

/// Byte offset of a 1-based (line, column) position, as reported by the
/// JSON and TOML parsers.
pub(crate) fn offset_of(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}
