use std::fmt::Write as _;
use std::path::Path;

use super::{parse_error, Mesh};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, PartialEq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

/// Reads one element record as a list of values per property (scalars are
/// one-element lists).
trait RecordSource {
    fn scalar(&mut self, ty: Scalar) -> std::result::Result<f64, String>;
    fn location(&self) -> String;
}

struct AsciiSource<'a> {
    tokens: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    line: usize,
}

impl RecordSource for AsciiSource<'_> {
    fn scalar(&mut self, _ty: Scalar) -> std::result::Result<f64, String> {
        let (line, tok) = self.tokens.next().ok_or("unexpected end of data")?;
        self.line = line;
        tok.parse::<f64>().map_err(|_| format!("bad number {tok:?}"))
    }

    fn location(&self) -> String {
        format!("line {}", self.line)
    }
}

struct BinarySource<'a> {
    data: &'a [u8],
    offset: usize,
}

impl RecordSource for BinarySource<'_> {
    fn scalar(&mut self, ty: Scalar) -> std::result::Result<f64, String> {
        let end = self.offset + ty.size();
        let bytes = self
            .data
            .get(self.offset..end)
            .ok_or("unexpected end of data")?;
        self.offset = end;
        Ok(ty.read_le(bytes))
    }

    fn location(&self) -> String {
        format!("byte {}", self.offset)
    }
}

/// Parses ASCII or binary little-endian PLY. Reads `x/y/z` from the
/// `vertex` element and `vertex_indices` (or `vertex_index`) from `face`.
pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<Mesh> {
    let (elements, encoding, body_start, header_lines) = parse_header(bytes, path)?;
    match encoding {
        Encoding::Ascii => {
            let body = std::str::from_utf8(&bytes[body_start..])
                .map_err(|e| parse_error(path, format!("line {}", header_lines + 1), e.to_string()))?;
            let iter: Box<dyn Iterator<Item = (usize, &str)>> = Box::new(
                body.lines()
                    .enumerate()
                    .flat_map(move |(i, l)| l.split_whitespace().map(move |t| (header_lines + i + 1, t))),
            );
            let mut src = AsciiSource {
                tokens: iter.peekable(),
                line: header_lines + 1,
            };
            read_body(&elements, &mut src, path)
        }
        Encoding::BinaryLe => {
            let mut src = BinarySource {
                data: bytes,
                offset: body_start,
            };
            read_body(&elements, &mut src, path)
        }
    }
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(Vec<Element>, Encoding, usize, usize)> {
    let mut elements: Vec<Element> = Vec::new();
    let mut encoding = None;
    let mut offset = 0;
    let mut line_no = 0;
    loop {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_error(path, format!("line {}", line_no + 1), "header not terminated".into()))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| parse_error(path, format!("line {}", line_no + 1), "header is not UTF-8".into()))?
            .trim();
        offset += end + 1;
        line_no += 1;
        let at = || format!("line {line_no}");
        let fields: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line != "ply" {
                return Err(Error::UnsupportedFormat(format!("{}: missing ply magic", path.display())));
            }
            continue;
        }
        match fields.first().copied() {
            Some("format") => {
                encoding = Some(match fields.get(1).copied() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLe,
                    other => {
                        return Err(Error::UnsupportedFormat(format!(
                            "{}: PLY format {other:?}",
                            path.display()
                        )))
                    }
                });
            }
            Some("element") => {
                let (Some(name), Some(count)) = (fields.get(1), fields.get(2)) else {
                    return Err(parse_error(path, at(), "malformed element line".into()));
                };
                let count = count
                    .parse()
                    .map_err(|_| parse_error(path, at(), format!("bad element count {count:?}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(path, at(), "property before element".into()))?;
                let bad_type = |t: &str| parse_error(path, at(), format!("unknown property type {t:?}"));
                let prop = if fields.get(1) == Some(&"list") {
                    if fields.len() != 5 {
                        return Err(parse_error(path, at(), "malformed list property".into()));
                    }
                    Property::List {
                        count: Scalar::parse(fields[2]).ok_or_else(|| bad_type(fields[2]))?,
                        item: Scalar::parse(fields[3]).ok_or_else(|| bad_type(fields[3]))?,
                        name: fields[4].to_string(),
                    }
                } else {
                    if fields.len() != 3 {
                        return Err(parse_error(path, at(), "malformed property".into()));
                    }
                    Property::Scalar {
                        ty: Scalar::parse(fields[1]).ok_or_else(|| bad_type(fields[1]))?,
                        name: fields[2].to_string(),
                    }
                };
                element.properties.push(prop);
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(parse_error(path, at(), format!("unexpected header keyword {other:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| parse_error(path, "header".into(), "missing format line".into()))?;
    Ok((elements, encoding, offset, line_no))
}

fn read_body(elements: &[Element], src: &mut impl RecordSource, path: &Path) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let fail = |src: &dyn RecordSource, msg: String| parse_error(path, src.location(), msg);

    for element in elements {
        let axis_of = |name: &str| ["x", "y", "z"].iter().position(|a| *a == name);
        if element.name == "vertex" {
            for n in ["x", "y", "z"] {
                let found = element
                    .properties
                    .iter()
                    .any(|p| matches!(p, Property::Scalar { name, .. } if name == n));
                if !found {
                    return Err(parse_error(path, "header".into(), format!("vertex lacks property {n}")));
                }
            }
        }
        for _ in 0..element.count {
            let mut xyz = [0.0; 3];
            let mut face: Option<Vec<usize>> = None;
            for prop in &element.properties {
                match prop {
                    Property::Scalar { name, ty } => {
                        let v = src.scalar(*ty).map_err(|m| fail(src, m))?;
                        if element.name == "vertex" {
                            if let Some(a) = axis_of(name) {
                                xyz[a] = v;
                            }
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = src.scalar(*count).map_err(|m| fail(src, m))?;
                        if !(n >= 0.0 && n.fract() == 0.0) {
                            return Err(fail(src, format!("bad list length {n}")));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            items.push(src.scalar(*item).map_err(|m| fail(src, m))?);
                        }
                        if element.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            let idx = items
                                .iter()
                                .map(|&v| {
                                    if v >= 0.0 && v.fract() == 0.0 {
                                        Ok(v as usize)
                                    } else {
                                        Err(fail(src, format!("bad vertex index {v}")))
                                    }
                                })
                                .collect::<Result<Vec<_>>>()?;
                            face = Some(idx);
                        }
                    }
                }
            }
            if element.name == "vertex" {
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            if let Some(corners) = face {
                if corners.len() < 3 {
                    return Err(fail(src, "face needs at least 3 corners".into()));
                }
                for i in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[i], corners[i + 1]]);
                }
            }
        }
    }
    if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
        return Err(parse_error(
            path,
            "face data".into(),
            format!("triangle {t:?} indexes past {} vertices", vertices.len()),
        ));
    }
    Ok(Mesh {
        vertices,
        triangles,
    })
}

fn header(mesh: &Mesh, format: &str, coord: &str) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "ply\nformat {format} 1.0");
    let _ = writeln!(h, "element vertex {}", mesh.vertices.len());
    for a in ["x", "y", "z"] {
        let _ = writeln!(h, "property {coord} {a}");
    }
    if !mesh.triangles.is_empty() {
        let _ = writeln!(h, "element face {}", mesh.triangles.len());
        h.push_str("property list uchar int vertex_indices\n");
    }
    h.push_str("end_header\n");
    h
}

/// ASCII PLY with double-precision coordinates; faces only if present.
pub fn write_ply_ascii(mesh: &Mesh) -> String {
    let mut out = header(mesh, "ascii", "double");
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    out
}

pub fn write_ply_binary(mesh: &Mesh) -> Vec<u8> {
    let mut out = header(mesh, "binary_little_endian", "double").into_bytes();
    for v in &mesh.vertices {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}
