//! Camera files: a JSON array of views, each
//! `{view_id, width, height, fx, fy, cx, cy, world_to_camera}` with the
//! 4×4 world-to-camera matrix given as 16 row-major numbers.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{offset_of, read_bytes, write_bytes, FormatError, FormatErrorKind, IoError};
use crate::scene::{CameraView, Intrinsics};

const FORMAT: &str = "cameras";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    view_id: u32,
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    world_to_camera: [f64; 16],
}

pub fn encode_cameras(views: &[CameraView]) -> String {
    let records: Vec<CameraRecord> = views
        .iter()
        .map(|v| CameraRecord {
            view_id: v.view_id,
            width: v.width,
            height: v.height,
            fx: v.intrinsics.fx,
            fy: v.intrinsics.fy,
            cx: v.intrinsics.cx,
            cy: v.intrinsics.cy,
            world_to_camera: v.world_to_camera_matrix(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&records).expect("camera records always serialize");
    s.push('\n');
    s
}

pub fn decode_cameras(bytes: &[u8]) -> Result<Vec<CameraView>, FormatError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| FormatError::new(FORMAT, FormatErrorKind::MalformedHeader, e.valid_up_to(), "not UTF-8"))?;
    let records: Vec<CameraRecord> = serde_json::from_str(text).map_err(|e| {
        let kind = if e.is_eof() { FormatErrorKind::Truncated } else { FormatErrorKind::MalformedHeader };
        FormatError::new(FORMAT, kind, offset_of(text, e.line(), e.column()), e.to_string())
    })?;
    let mut seen = BTreeSet::new();
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let bad = |detail: String| FormatError::new(FORMAT, FormatErrorKind::InvalidValue, 0, format!("view #{i}: {detail}"));
            if !seen.insert(r.view_id) {
                return Err(bad(format!("duplicate view_id {}", r.view_id)));
            }
            let m = &r.world_to_camera;
            if m[12..] != [0.0, 0.0, 0.0, 1.0] {
                return Err(bad("last matrix row must be 0 0 0 1".into()));
            }
            let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
            let translation = Vector3::new(m[3], m[7], m[11]);
            let k = Intrinsics {
                fx: r.fx,
                fy: r.fy,
                cx: r.cx,
                cy: r.cy,
            };
            CameraView::new(r.view_id, r.width, r.height, k, rotation, translation).map_err(|e| bad(e.to_string()))
        })
        .collect()
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraView>, IoError> {
    decode_cameras(&read_bytes(path)?).map_err(|e| IoError::format(path, e))
}

pub fn write_cameras(path: &Path, views: &[CameraView]) -> Result<(), IoError> {
    write_bytes(path, encode_cameras(views).as_bytes())
}
