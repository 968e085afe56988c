use std::fmt::Write as _;
use std::path::Path;

use super::{parse_error, Mesh};
use crate::error::Result;
use crate::geometry::Vec3;

/// Parses `v` and `f` records of an ASCII OBJ file. Polygons are
/// fan-triangulated around their first corner; everything else is ignored.
pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let at = || format!("line {}", no + 1);
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                let coords: Vec<f64> = fields
                    .take(3)
                    .map(|f| f.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_error(path, at(), format!("bad vertex: {e}")))?;
                if coords.len() != 3 {
                    return Err(parse_error(path, at(), "vertex needs 3 coordinates".into()));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let corners: Vec<usize> = fields
                    .map(|f| resolve_index(f, vertices.len()))
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|msg| parse_error(path, at(), msg))?;
                if corners.len() < 3 {
                    return Err(parse_error(path, at(), "face needs at least 3 corners".into()));
                }
                for i in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[i], corners[i + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(Mesh {
        vertices,
        triangles,
    })
}

/// OBJ indices are 1-based; negative values count back from the last vertex
/// read so far. Only the position part of `v/vt/vn` is used.
fn resolve_index(field: &str, count: usize) -> std::result::Result<usize, String> {
    let pos = field.split('/').next().unwrap_or("");
    let idx: i64 = pos
        .parse()
        .map_err(|_| format!("bad face index {field:?}"))?;
    let resolved = if idx > 0 {
        idx - 1
    } else if idx < 0 {
        count as i64 + idx
    } else {
        return Err("face index 0 is invalid".into());
    };
    if resolved < 0 || resolved >= count as i64 {
        return Err(format!("face index {idx} out of range for {count} vertices"));
    }
    Ok(resolved as usize)
}

/// Serialises named mesh parts as OBJ objects (`o <name>`), sharing one
/// global vertex numbering.
pub fn write_obj(parts: &[(String, Mesh)]) -> String {
    let mut out = String::new();
    let mut base = 1;
    for (name, mesh) in parts {
        let _ = writeln!(out, "o {name}");
        for v in &mesh.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &mesh.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + base, t[1] + base, t[2] + base);
        }
        base += mesh.vertices.len();
    }
    out
}
