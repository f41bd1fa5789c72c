//! Single-channel PFM (`Pf`) float maps.
//!
//! Files are written little-endian (negative scale) with rows stored bottom
//! to top. Big-endian files (positive scale) are accepted and byte-swapped on
//! read. Values pass through `f32`, so maps whose entries are representable
//! in `f32` round-trip bitwise.

use std::path::Path;

use super::{read_bytes, write_bytes, FormatError, FormatErrorKind, IoError};
use crate::image::ScalarMap;

const FORMAT: &str = "pfm";

pub fn encode_pfm(map: &ScalarMap) -> Vec<u8> {
    let (w, h) = map.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(*map.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, kind: FormatErrorKind, detail: impl Into<String>) -> FormatError {
        FormatError::new(FORMAT, kind, self.pos, detail)
    }

    /// Next whitespace-delimited header token; leaves the cursor on the
    /// delimiter.
    fn token(&mut self, what: &str) -> Result<(usize, &'a str), FormatError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(FormatErrorKind::MalformedHeader, format!("missing {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| FormatError::new(FORMAT, FormatErrorKind::MalformedHeader, start, format!("{what} is not text")))?;
        Ok((start, text))
    }
}

pub fn decode_pfm(bytes: &[u8]) -> Result<ScalarMap, FormatError> {
    let mut c = Cursor { bytes, pos: 0 };
    let (at, magic) = c.token("magic")?;
    match magic {
        "Pf" => {}
        "PF" => {
            return Err(FormatError::new(FORMAT, FormatErrorKind::MalformedHeader, at, "three-channel PFM is not supported"));
        }
        other => {
            return Err(FormatError::new(FORMAT, FormatErrorKind::MalformedHeader, at, format!("bad magic {other:?}")));
        }
    }
    let mut dim = |what: &str| -> Result<usize, FormatError> {
        let (at, t) = c.token(what)?;
        match t.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(FormatError::new(FORMAT, FormatErrorKind::MalformedHeader, at, format!("bad {what} {t:?}"))),
        }
    };
    let w = dim("width")?;
    let h = dim("height")?;
    let (at, t) = c.token("scale")?;
    let scale: f64 = t
        .parse()
        .map_err(|_| FormatError::new(FORMAT, FormatErrorKind::MalformedHeader, at, format!("bad scale {t:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(FormatError::new(FORMAT, FormatErrorKind::Endianness, at, format!("scale {t} does not encode a byte order")));
    }
    let little = scale < 0.0;
    if c.pos >= bytes.len() {
        return Err(c.err(FormatErrorKind::Truncated, "header ends without payload"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    let start = c.pos + 1;
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::new(FORMAT, FormatErrorKind::MalformedHeader, start, "dimensions overflow"))?;
    let available = bytes.len() - start;
    if available < need {
        return Err(FormatError::new(
            FORMAT,
            FormatErrorKind::Truncated,
            bytes.len(),
            format!("expected {need} payload bytes, found {available}"),
        ));
    }
    if available > need {
        return Err(FormatError::new(FORMAT, FormatErrorKind::InvalidValue, start + need, "trailing bytes after payload"));
    }
    let payload = &bytes[start..];
    let mut data = vec![0.0; w * h];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (x, row) = (i % w, i / w);
        data[(h - 1 - row) * w + x] = v as f64;
    }
    Ok(ScalarMap::from_vec(w, h, data))
}

pub fn read_pfm(path: &Path) -> Result<ScalarMap, IoError> {
    decode_pfm(&read_bytes(path)?).map_err(|e| IoError::format(path, e))
}

pub fn write_pfm(path: &Path, map: &ScalarMap) -> Result<(), IoError> {
    write_bytes(path, &encode_pfm(map))
}
