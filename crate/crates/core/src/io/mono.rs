//! Monocular depth directory: `<view_id>.pfm` per view plus an optional
//! `<view_id>.meta` text file declaring what the map holds.
//!
//! A meta file is a list of `key = value` lines (`#` starts a comment). The
//! only key is `kind`, either `depth` (the default) or `inverse_depth`.
//! Inverse-depth maps are converted to depth by taking reciprocals of their
//! positive entries; non-positive entries become the 0 "no data" value.

use std::path::Path;

use super::pfm::decode_pfm;
use super::{read_bytes, FormatError, FormatErrorKind, IoError};
use crate::image::ScalarMap;

const FORMAT: &str = "meta";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MonoKind {
    #[default]
    Depth,
    InverseDepth,
}

pub fn decode_meta(bytes: &[u8]) -> Result<MonoKind, FormatError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| FormatError::new(FORMAT, FormatErrorKind::MalformedHeader, e.valid_up_to(), "not UTF-8"))?;
    let mut kind = None;
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let at = offset;
        offset += raw.len();
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(FormatError::new(FORMAT, FormatErrorKind::MalformedHeader, at, format!("expected key = value, got {line:?}")));
        };
        match (key.trim(), value.trim()) {
            ("kind", v) => {
                if kind.is_some() {
                    return Err(FormatError::new(FORMAT, FormatErrorKind::MalformedHeader, at, "duplicate kind"));
                }
                kind = Some(match v {
                    "depth" => MonoKind::Depth,
                    "inverse_depth" => MonoKind::InverseDepth,
                    other => {
                        return Err(FormatError::new(FORMAT, FormatErrorKind::InvalidValue, at, format!("unknown kind {other:?}")))
                    }
                });
            }
            (k, _) => {
                return Err(FormatError::new(FORMAT, FormatErrorKind::MalformedHeader, at, format!("unknown key {k:?}")));
            }
        }
    }
    Ok(kind.unwrap_or_default())
}

pub fn to_depth(map: ScalarMap, kind: MonoKind) -> ScalarMap {
    match kind {
        MonoKind::Depth => map,
        MonoKind::InverseDepth => map.map(|v| if *v > 0.0 { 1.0 / v } else { 0.0 }),
    }
}

/// Loads the monocular depth of one view, `None` when the directory has no
/// PFM for it.
pub fn read_mono(dir: &Path, view_id: u32) -> Result<Option<ScalarMap>, IoError> {
    let pfm = dir.join(format!("{view_id}.pfm"));
    if !pfm.exists() {
        return Ok(None);
    }
    let map = decode_pfm(&read_bytes(&pfm)?).map_err(|e| IoError::format(&pfm, e))?;
    let meta = dir.join(format!("{view_id}.meta"));
    let kind = if meta.exists() {
        decode_meta(&read_bytes(&meta)?).map_err(|e| IoError::format(&meta, e))?
    } else {
        MonoKind::Depth
    };
    Ok(Some(to_depth(map, kind)))
}
