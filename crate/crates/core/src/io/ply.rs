//! PLY reading and writing (ASCII and both binary byte orders), Gaussian
//! scenes in the conventional splatting layout, and triangle meshes (PLY and
//! OBJ).
//!
//! Property values are held as `f64`, which represents every PLY scalar type
//! exactly, so decoding and re-encoding reproduces float payloads bitwise.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{read_bytes, write_bytes, FormatError, FormatErrorKind, IoError};
use crate::meshing::TriMesh;
use crate::scene::{logit, sigmoid, Gaussian3D};

const FORMAT: &str = "ply";

/// Zeroth-order spherical-harmonic constant linking `f_dc` to RGB.
pub const SH_C0: f64 = 0.28209479177387814;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

impl PlyFormat {
    fn name(self) -> &'static str {
        match self {
            Self::Ascii => "ascii",
            Self::BinaryLittleEndian => "binary_little_endian",
            Self::BinaryBigEndian => "binary_big_endian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Self::F32 | Self::F64)
    }

    fn range(self) -> (f64, f64) {
        match self {
            Self::I8 => (i8::MIN as f64, i8::MAX as f64),
            Self::U8 => (0.0, u8::MAX as f64),
            Self::I16 => (i16::MIN as f64, i16::MAX as f64),
            Self::U16 => (0.0, u16::MAX as f64),
            Self::I32 => (i32::MIN as f64, i32::MAX as f64),
            Self::U32 => (0.0, u32::MAX as f64),
            Self::F32 | Self::F64 => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropertyType {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyProperty {
    pub name: String,
    pub ty: PropertyType,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlyValue {
    Scalar(f64),
    List(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyElement {
    pub name: String,
    pub properties: Vec<PlyProperty>,
    pub rows: Vec<Vec<PlyValue>>,
}

impl PlyElement {
    pub fn property_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p.name == name)
    }

    /// Byte size of one row when every property is a scalar.
    fn fixed_row_size(&self) -> Option<usize> {
        self.properties
            .iter()
            .map(|p| match p.ty {
                PropertyType::Scalar(t) => Some(t.size()),
                PropertyType::List { .. } => None,
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ply {
    pub format: PlyFormat,
    pub comments: Vec<String>,
    pub elements: Vec<PlyElement>,
}

impl Ply {
    pub fn element(&self, name: &str) -> Option<&PlyElement> {
        self.elements.iter().find(|e| e.name == name)
    }
}

/// Where each element's data begins in the decoded buffer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PlyLayout {
    pub header_len: usize,
    pub element_offsets: Vec<usize>,
}

fn err(kind: FormatErrorKind, offset: usize, detail: impl Into<String>) -> FormatError {
    FormatError::new(FORMAT, kind, offset, detail)
}

pub fn decode_ply(bytes: &[u8]) -> Result<Ply, FormatError> {
    decode_ply_with_layout(bytes).map(|(p, _)| p)
}

pub fn decode_ply_with_layout(bytes: &[u8]) -> Result<(Ply, PlyLayout), FormatError> {
    let (format, comments, mut elements, header_len) = parse_header(bytes)?;
    let mut offsets = Vec::with_capacity(elements.len());
    let body = &bytes[header_len..];
    let mut pos = 0;
    let mut tokens = AsciiTokens { bytes: body, pos: 0, base: header_len };
    for (index, (el, count)) in elements.iter_mut().enumerate() {
        let count = *count;
        offsets.push(header_len + if format == PlyFormat::Ascii { tokens.pos } else { pos });
        if count > 0 && el.properties.is_empty() {
            return Err(err(FormatErrorKind::InvalidValue, header_len, format!("element {index} has rows but no properties")));
        }
        for _ in 0..count {
            let mut row = Vec::with_capacity(el.properties.len());
            for p in &el.properties {
                let value = match format {
                    PlyFormat::Ascii => read_ascii_value(&mut tokens, p.ty)?,
                    _ => read_binary_value(body, &mut pos, header_len, p.ty, format == PlyFormat::BinaryLittleEndian)?,
                };
                row.push(value);
            }
            el.rows.push(row);
        }
    }
    let end = match format {
        PlyFormat::Ascii => {
            tokens.skip_ws();
            tokens.pos
        }
        _ => pos,
    };
    if end != body.len() {
        return Err(err(FormatErrorKind::InvalidValue, header_len + end, "trailing data after last element"));
    }
    Ok((
        Ply {
            format,
            comments,
            elements: elements.into_iter().map(|(e, _)| e).collect(),
        },
        PlyLayout {
            header_len,
            element_offsets: offsets,
        },
    ))
}

type Header = (PlyFormat, Vec<String>, Vec<(PlyElement, usize)>, usize);

/// Parses the header into elements paired with their declared row counts.
fn parse_header(bytes: &[u8]) -> Result<Header, FormatError> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<(usize, &str), FormatError> {
        let start = *pos;
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err(FormatErrorKind::Truncated, bytes.len(), "header is not terminated by end_header"))?;
        *pos = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| err(FormatErrorKind::MalformedHeader, start, "header line is not UTF-8"))?;
        Ok((start, line.strip_suffix('\r').unwrap_or(line)))
    };
    let (_, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(err(FormatErrorKind::MalformedHeader, 0, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut comments = Vec::new();
    let mut elements: Vec<(PlyElement, usize)> = Vec::new();
    loop {
        let (at, line) = next_line(&mut pos)?;
        let mut words = line.split_ascii_whitespace();
        match words.next() {
            Some("end_header") => break,
            Some("comment") | Some("obj_info") => {
                let text = line.trim_start();
                let rest = text.split_once(char::is_whitespace).map_or("", |(_, r)| r);
                comments.push(rest.to_string());
            }
            Some("format") => {
                if format.is_some() {
                    return Err(err(FormatErrorKind::MalformedHeader, at, "duplicate format line"));
                }
                let f = match words.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some("binary_big_endian") => PlyFormat::BinaryBigEndian,
                    other => return Err(err(FormatErrorKind::MalformedHeader, at, format!("unknown format {other:?}"))),
                };
                if words.next() != Some("1.0") {
                    return Err(err(FormatErrorKind::MalformedHeader, at, "unsupported format version"));
                }
                format = Some(f);
            }
            Some("element") => {
                let (Some(name), Some(count), None) = (words.next(), words.next(), words.next()) else {
                    return Err(err(FormatErrorKind::MalformedHeader, at, "element line needs a name and a count"));
                };
                let count: usize = count
                    .parse()
                    .map_err(|_| err(FormatErrorKind::MalformedHeader, at, format!("bad element count {count:?}")))?;
                elements.push((
                    PlyElement {
                        name: name.to_string(),
                        properties: Vec::new(),
                        rows: Vec::new(),
                    },
                    count,
                ));
            }
            Some("property") => {
                let Some((el, _)) = elements.last_mut() else {
                    return Err(err(FormatErrorKind::MalformedHeader, at, "property before any element"));
                };
                let bad = || err(FormatErrorKind::MalformedHeader, at, format!("bad property line {line:?}"));
                let ty = match words.next() {
                    Some("list") => {
                        let count = words.next().and_then(ScalarType::parse).ok_or_else(bad)?;
                        let item = words.next().and_then(ScalarType::parse).ok_or_else(bad)?;
                        if count.is_float() {
                            return Err(bad());
                        }
                        PropertyType::List { count, item }
                    }
                    Some(t) => PropertyType::Scalar(ScalarType::parse(t).ok_or_else(bad)?),
                    None => return Err(bad()),
                };
                let (Some(name), None) = (words.next(), words.next()) else {
                    return Err(bad());
                };
                if el.properties.iter().any(|p| p.name == name) {
                    return Err(err(FormatErrorKind::MalformedHeader, at, format!("duplicate property {name:?}")));
                }
                el.properties.push(PlyProperty { name: name.to_string(), ty });
            }
            Some(other) => {
                return Err(err(FormatErrorKind::MalformedHeader, at, format!("unknown header keyword {other:?}")));
            }
            None => return Err(err(FormatErrorKind::MalformedHeader, at, "blank header line")),
        }
    }
    let format = format.ok_or_else(|| err(FormatErrorKind::MalformedHeader, pos, "header has no format line"))?;
    let remaining = bytes.len() - pos;
    // Every row occupies at least one byte, so larger counts are necessarily
    // truncated; rejecting them up front keeps allocations bounded.
    for (el, count) in &elements {
        if *count > remaining && !el.properties.is_empty() {
            return Err(err(
                FormatErrorKind::Truncated,
                bytes.len(),
                format!("element {:?} declares {count} rows but only {remaining} bytes follow", el.name),
            ));
        }
    }
    Ok((format, comments, elements, pos))
}

struct AsciiTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> AsciiTokens<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(usize, &'a str), FormatError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(err(FormatErrorKind::Truncated, self.base + start, "expected another value"));
        }
        let at = self.base + start;
        let s = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| err(FormatErrorKind::InvalidValue, at, "value is not text"))?;
        Ok((at, s))
    }
}

fn parse_ascii_scalar(tokens: &mut AsciiTokens, ty: ScalarType) -> Result<f64, FormatError> {
    let (at, s) = tokens.next()?;
    let bad = || err(FormatErrorKind::InvalidValue, at, format!("{s:?} is not a valid {}", ty.name()));
    match ty {
        ScalarType::F32 => s.parse::<f32>().map(f64::from).map_err(|_| bad()),
        ScalarType::F64 => s.parse::<f64>().map_err(|_| bad()),
        _ => {
            let v: i64 = s.parse().map_err(|_| bad())?;
            let (lo, hi) = ty.range();
            if (v as f64) < lo || (v as f64) > hi {
                return Err(bad());
            }
            Ok(v as f64)
        }
    }
}

fn read_ascii_value(tokens: &mut AsciiTokens, ty: PropertyType) -> Result<PlyValue, FormatError> {
    match ty {
        PropertyType::Scalar(t) => parse_ascii_scalar(tokens, t).map(PlyValue::Scalar),
        PropertyType::List { count, item } => {
            let n = parse_ascii_scalar(tokens, count)?;
            if n < 0.0 {
                return Err(err(FormatErrorKind::InvalidValue, tokens.base + tokens.pos, "negative list length"));
            }
            let mut items = Vec::new();
            for _ in 0..n as u64 {
                items.push(parse_ascii_scalar(tokens, item)?);
            }
            Ok(PlyValue::List(items))
        }
    }
}

fn read_binary_scalar(body: &[u8], pos: &mut usize, base: usize, ty: ScalarType, little: bool) -> Result<f64, FormatError> {
    let n = ty.size();
    if body.len() - *pos < n {
        return Err(err(
            FormatErrorKind::Truncated,
            base + body.len(),
            format!("needed {n} more bytes at offset {}", base + *pos),
        ));
    }
    let b = &body[*pos..*pos + n];
    *pos += n;
    macro_rules! num {
        ($t:ty) => {{
            let raw = b.try_into().expect("sized slice");
            (if little { <$t>::from_le_bytes(raw) } else { <$t>::from_be_bytes(raw) }) as f64
        }};
    }
    Ok(match ty {
        ScalarType::I8 => b[0] as i8 as f64,
        ScalarType::U8 => b[0] as f64,
        ScalarType::I16 => num!(i16),
        ScalarType::U16 => num!(u16),
        ScalarType::I32 => num!(i32),
        ScalarType::U32 => num!(u32),
        ScalarType::F32 => num!(f32),
        ScalarType::F64 => num!(f64),
    })
}

fn read_binary_value(body: &[u8], pos: &mut usize, base: usize, ty: PropertyType, little: bool) -> Result<PlyValue, FormatError> {
    match ty {
        PropertyType::Scalar(t) => read_binary_scalar(body, pos, base, t, little).map(PlyValue::Scalar),
        PropertyType::List { count, item } => {
            let at = base + *pos;
            let n = read_binary_scalar(body, pos, base, count, little)?;
            if n < 0.0 {
                return Err(err(FormatErrorKind::InvalidValue, at, "negative list length"));
            }
            let n = n as usize;
            if n.saturating_mul(item.size()) > body.len() - *pos {
                return Err(err(FormatErrorKind::Truncated, base + body.len(), format!("list of {n} items runs past the end")));
            }
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                items.push(read_binary_scalar(body, pos, base, item, little)?);
            }
            Ok(PlyValue::List(items))
        }
    }
}

fn write_ascii_scalar(out: &mut String, v: f64, ty: ScalarType) {
    match ty {
        ScalarType::F32 => write!(out, "{}", v as f32),
        ScalarType::F64 => write!(out, "{v}"),
        _ => write!(out, "{}", v as i64),
    }
    .expect("writing to a String cannot fail");
}

fn write_binary_scalar(out: &mut Vec<u8>, v: f64, ty: ScalarType, little: bool) {
    macro_rules! put {
        ($x:expr) => {{
            let x = $x;
            out.extend_from_slice(&if little { x.to_le_bytes() } else { x.to_be_bytes() });
        }};
    }
    match ty {
        ScalarType::I8 => out.push(v as i8 as u8),
        ScalarType::U8 => out.push(v as u8),
        ScalarType::I16 => put!(v as i16),
        ScalarType::U16 => put!(v as u16),
        ScalarType::I32 => put!(v as i32),
        ScalarType::U32 => put!(v as u32),
        ScalarType::F32 => put!(v as f32),
        ScalarType::F64 => put!(v),
    }
}

/// Serializes a PLY. Rows must match their element's property list; scalar
/// values are converted to the declared type.
pub fn encode_ply(ply: &Ply) -> Vec<u8> {
    let mut header = format!("ply\nformat {} 1.0\n", ply.format.name());
    for c in &ply.comments {
        let _ = writeln!(header, "comment {c}");
    }
    for el in &ply.elements {
        let _ = writeln!(header, "element {} {}", el.name, el.rows.len());
        for p in &el.properties {
            let _ = match p.ty {
                PropertyType::Scalar(t) => writeln!(header, "property {} {}", t.name(), p.name),
                PropertyType::List { count, item } => {
                    writeln!(header, "property list {} {} {}", count.name(), item.name(), p.name)
                }
            };
        }
    }
    header.push_str("end_header\n");
    if ply.format == PlyFormat::Ascii {
        for el in &ply.elements {
            for row in &el.rows {
                let mut first = true;
                for (p, v) in el.properties.iter().zip(row) {
                    let mut put = |x: f64, ty: ScalarType| {
                        if !first {
                            header.push(' ');
                        }
                        first = false;
                        write_ascii_scalar(&mut header, x, ty);
                    };
                    match (p.ty, v) {
                        (PropertyType::Scalar(t), PlyValue::Scalar(x)) => put(*x, t),
                        (PropertyType::List { count, item }, PlyValue::List(xs)) => {
                            put(xs.len() as f64, count);
                            for x in xs {
                                put(*x, item);
                            }
                        }
                        _ => panic!("row value does not match property {:?}", p.name),
                    }
                }
                header.push('\n');
            }
        }
        return header.into_bytes();
    }
    let little = ply.format == PlyFormat::BinaryLittleEndian;
    let mut out = header.into_bytes();
    for el in &ply.elements {
        out.reserve(el.fixed_row_size().unwrap_or(16) * el.rows.len());
        for row in &el.rows {
            for (p, v) in el.properties.iter().zip(row) {
                match (p.ty, v) {
                    (PropertyType::Scalar(t), PlyValue::Scalar(x)) => write_binary_scalar(&mut out, *x, t, little),
                    (PropertyType::List { count, item }, PlyValue::List(xs)) => {
                        write_binary_scalar(&mut out, xs.len() as f64, count, little);
                        for x in xs {
                            write_binary_scalar(&mut out, *x, item, little);
                        }
                    }
                    _ => panic!("row value does not match property {:?}", p.name),
                }
            }
        }
    }
    out
}

const GAUSSIAN_PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];

/// Gaussians as a `vertex` element with stored logit opacity, log scales,
/// `(w, x, y, z)` rotation and DC color coefficients.
pub fn gaussians_to_ply(gaussians: &[Gaussian3D], format: PlyFormat, ty: ScalarType) -> Ply {
    let properties = GAUSSIAN_PROPERTIES
        .iter()
        .map(|n| PlyProperty {
            name: n.to_string(),
            ty: PropertyType::Scalar(ty),
        })
        .collect();
    let rows = gaussians
        .iter()
        .map(|g| {
            let q = g.rotation.quaternion();
            let dc = g.color.map(|c| (c - 0.5) / SH_C0);
            [
                g.center.x,
                g.center.y,
                g.center.z,
                dc.x,
                dc.y,
                dc.z,
                logit(g.opacity),
                g.scale.x.ln(),
                g.scale.y.ln(),
                g.scale.z.ln(),
                q.w,
                q.i,
                q.j,
                q.k,
            ]
            .into_iter()
            .map(PlyValue::Scalar)
            .collect()
        })
        .collect();
    Ply {
        format,
        comments: vec!["gaussian scene".into()],
        elements: vec![PlyElement {
            name: "vertex".into(),
            properties,
            rows,
        }],
    }
}

/// Decodes the `vertex` element of a splatting export. Extra properties
/// (normals, higher-order color coefficients) are ignored; colors outside
/// `[0, 1]` are clamped.
pub fn gaussians_from_ply(ply: &Ply, layout: &PlyLayout) -> Result<Vec<Gaussian3D>, FormatError> {
    let (index, el) = ply
        .elements
        .iter()
        .enumerate()
        .find(|(_, e)| e.name == "vertex")
        .ok_or_else(|| err(FormatErrorKind::MalformedHeader, 0, "no vertex element"))?;
    let header_end = layout.header_len;
    let mut cols = [0usize; 14];
    for (c, name) in cols.iter_mut().zip(GAUSSIAN_PROPERTIES) {
        *c = match el.property_index(name) {
            Some(i) if matches!(el.properties[i].ty, PropertyType::Scalar(_)) => i,
            _ => {
                return Err(err(
                    FormatErrorKind::MalformedHeader,
                    header_end,
                    format!("vertex element lacks scalar property {name:?}"),
                ))
            }
        };
    }
    let base = layout.element_offsets.get(index).copied().unwrap_or(header_end);
    let row_size = match ply.format {
        PlyFormat::Ascii => None,
        _ => el.fixed_row_size(),
    };
    el.rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let at = row_size.map_or(base, |s| base + r * s);
            let v = cols.map(|c| match row[c] {
                PlyValue::Scalar(x) => x,
                PlyValue::List(_) => f64::NAN,
            });
            if v.iter().any(|x| !x.is_finite()) {
                return Err(err(FormatErrorKind::InvalidValue, at, format!("gaussian {r} has a non-finite value")));
            }
            let scale = Vector3::new(v[7].exp(), v[8].exp(), v[9].exp());
            if !scale.iter().all(|s| s.is_finite() && *s > 0.0) {
                return Err(err(FormatErrorKind::InvalidValue, at, format!("gaussian {r} has a degenerate scale")));
            }
            let q = Quaternion::new(v[10], v[11], v[12], v[13]);
            if !(q.norm() > 1e-12) {
                return Err(err(FormatErrorKind::InvalidValue, at, format!("gaussian {r} has a zero rotation")));
            }
            Ok(Gaussian3D {
                center: Vector3::new(v[0], v[1], v[2]),
                scale,
                rotation: UnitQuaternion::from_quaternion(q),
                opacity: sigmoid(v[6]),
                color: Vector3::new(v[3], v[4], v[5]).map(|c| (0.5 + SH_C0 * c).clamp(0.0, 1.0)),
            })
        })
        .collect()
}

pub fn decode_gaussians(bytes: &[u8]) -> Result<Vec<Gaussian3D>, FormatError> {
    let (ply, layout) = decode_ply_with_layout(bytes)?;
    gaussians_from_ply(&ply, &layout)
}

pub fn read_gaussians(path: &Path) -> Result<Vec<Gaussian3D>, IoError> {
    decode_gaussians(&read_bytes(path)?).map_err(|e| IoError::format(path, e))
}

/// Writes Gaussians as binary little-endian `float` PLY.
pub fn write_gaussians(path: &Path, gaussians: &[Gaussian3D]) -> Result<(), IoError> {
    write_bytes(path, &encode_ply(&gaussians_to_ply(gaussians, PlyFormat::BinaryLittleEndian, ScalarType::F32)))
}

pub fn mesh_to_ply(mesh: &TriMesh, format: PlyFormat) -> Ply {
    let scalar = |name: &str| PlyProperty {
        name: name.into(),
        ty: PropertyType::Scalar(ScalarType::F32),
    };
    Ply {
        format,
        comments: Vec::new(),
        elements: vec![
            PlyElement {
                name: "vertex".into(),
                properties: vec![scalar("x"), scalar("y"), scalar("z")],
                rows: mesh
                    .vertices
                    .iter()
                    .map(|v| v.iter().map(|c| PlyValue::Scalar(*c)).collect())
                    .collect(),
            },
            PlyElement {
                name: "face".into(),
                properties: vec![PlyProperty {
                    name: "vertex_indices".into(),
                    ty: PropertyType::List {
                        count: ScalarType::U8,
                        item: ScalarType::I32,
                    },
                }],
                rows: mesh
                    .triangles
                    .iter()
                    .map(|t| vec![PlyValue::List(t.iter().map(|i| *i as f64).collect())])
                    .collect(),
            },
        ],
    }
}

/// Reads a polygon mesh; faces with more than three corners are fanned.
pub fn decode_mesh(bytes: &[u8]) -> Result<TriMesh, FormatError> {
    let (ply, layout) = decode_ply_with_layout(bytes)?;
    let missing = |what: &str| err(FormatErrorKind::MalformedHeader, layout.header_len, format!("missing {what}"));
    let vertex = ply.element("vertex").ok_or_else(|| missing("vertex element"))?;
    let xyz = ["x", "y", "z"].map(|n| vertex.property_index(n));
    let [Some(x), Some(y), Some(z)] = xyz else {
        return Err(missing("vertex coordinates"));
    };
    let scalar = |v: &PlyValue| match v {
        PlyValue::Scalar(s) => *s,
        PlyValue::List(_) => f64::NAN,
    };
    let vertices: Vec<Vector3<f64>> = vertex
        .rows
        .iter()
        .map(|r| Vector3::new(scalar(&r[x]), scalar(&r[y]), scalar(&r[z])))
        .collect();
    let mut triangles = Vec::new();
    if let Some((fi, face)) = ply.elements.iter().enumerate().find(|(_, e)| e.name == "face") {
        let col = face
            .property_index("vertex_indices")
            .or_else(|| face.property_index("vertex_index"))
            .ok_or_else(|| missing("face vertex_indices"))?;
        let at = layout.element_offsets[fi];
        for (r, row) in face.rows.iter().enumerate() {
            let PlyValue::List(ids) = &row[col] else {
                return Err(missing("face index list"));
            };
            if ids.len() < 3 || ids.iter().any(|&i| i < 0.0 || i as usize >= vertices.len()) {
                return Err(err(FormatErrorKind::InvalidValue, at, format!("face {r} has invalid vertex indices")));
            }
            for k in 1..ids.len() - 1 {
                triangles.push([ids[0] as u32, ids[k] as u32, ids[k + 1] as u32]);
            }
        }
    }
    Ok(TriMesh { vertices, triangles })
}

pub fn write_mesh_ply(path: &Path, mesh: &TriMesh, format: PlyFormat) -> Result<(), IoError> {
    write_bytes(path, &encode_ply(&mesh_to_ply(mesh, format)))
}

pub fn encode_obj(mesh: &TriMesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<(), IoError> {
    write_bytes(path, encode_obj(mesh).as_bytes())
}
