//! Geometry containers, file formats and unit normalisation.

mod ensemble_file;
mod export;
mod obj;
mod ply;
mod trace;

use std::path::Path;

pub use ensemble_file::{load_ensemble, save_ensemble};
pub use export::{export_ensemble_mesh, tessellate_ensemble, tessellate_superquadric};
pub use obj::{parse_obj, write_obj};
pub use ply::{parse_ply, write_ply_ascii, write_ply_binary};
pub use trace::{read_trace_csv, save_trace_csv, TRACE_HEADER};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::InvalidArgument(format!(
                "triangle {t:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    /// Axis-aligned cube of side 1 centred at the origin, outward-facing.
    pub fn unit_cube() -> Self {
        let vertices = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { -0.5 } else { 0.5 },
                    if i & 2 == 0 { -0.5 } else { 0.5 },
                    if i & 4 == 0 { -0.5 } else { 0.5 },
                )
            })
            .collect();
        let quads = [
            [0, 2, 3, 1], // z-
            [4, 5, 7, 6], // z+
            [0, 1, 5, 4], // y-
            [2, 6, 7, 3], // y+
            [0, 4, 6, 2], // x-
            [1, 3, 7, 5], // x+
        ];
        let triangles = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        Self {
            vertices,
            triangles,
        }
    }

    #[inline]
    pub fn corners(&self, tri: &[usize; 3]) -> [Vec3; 3] {
        [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ]
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    /// Volume enclosed by a closed, consistently oriented mesh (positive
    /// when faces point outward).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn aabb(&self) -> Option<(Vec3, Vec3)> {
        aabb(&self.vertices)
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }
}

/// Target points in world coordinates. Normals are carried through but no
/// loss term reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::TooFewPoints { needed: 1, got: 0 });
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("point cloud has non-finite coordinates".into()));
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    pub fn aabb(&self) -> (Vec3, Vec3) {
        aabb(&self.points).expect("point cloud is non-empty")
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.aabb();
        (hi - lo).norm()
    }
}

pub(crate) fn aabb(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

/// Map `x ↦ (x − offset)·scale` taking input data to the unit cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub offset: Vec3,
    pub scale: f64,
}

impl Default for NormalizationRecord {
    fn default() -> Self {
        Self::identity()
    }
}

impl NormalizationRecord {
    pub fn identity() -> Self {
        Self {
            offset: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.offset) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale + self.offset
    }

    fn fit(centroid: Vec3, lo: Vec3, hi: Vec3) -> Self {
        let extent = (hi - lo).max();
        Self {
            offset: centroid,
            scale: if extent > 0.0 { 1.0 / extent } else { 1.0 },
        }
    }
}

/// Centres the cloud on its centroid and scales the largest extent to 1.
pub fn normalize_cloud(cloud: &PointCloud) -> (PointCloud, NormalizationRecord) {
    let (lo, hi) = cloud.aabb();
    let record = NormalizationRecord::fit(cloud.centroid(), lo, hi);
    let normalized = PointCloud {
        points: cloud.points.iter().map(|p| record.apply(p)).collect(),
        normals: cloud.normals.clone(),
    };
    (normalized, record)
}

/// Same as [`normalize_cloud`] using the area-weighted surface centroid.
pub fn normalize_mesh(mesh: &Mesh) -> Result<(Mesh, NormalizationRecord)> {
    let (lo, hi) = mesh
        .aabb()
        .ok_or_else(|| Error::InvalidArgument("mesh has no vertices".into()))?;
    let mut area = 0.0;
    let mut weighted = Vec3::zeros();
    for t in &mesh.triangles {
        let [a, b, c] = mesh.corners(t);
        let w = 0.5 * (b - a).cross(&(c - a)).norm();
        area += w;
        weighted += (a + b + c) * (w / 3.0);
    }
    let centroid = if area > 0.0 {
        weighted / area
    } else {
        mesh.vertices.iter().sum::<Vec3>() / mesh.vertices.len() as f64
    };
    let record = NormalizationRecord::fit(centroid, lo, hi);
    Ok((mesh.transformed(|p| record.apply(p)), record))
}

/// Contents of a geometry file: a mesh when faces are present, otherwise
/// the vertices as a point cloud.
#[derive(Debug, Clone)]
pub enum Geometry {
    Mesh(Mesh),
    Cloud(PointCloud),
}

/// Loads an OBJ or PLY mesh.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "obj" => parse_obj(&std::fs::read_to_string(path)?, path),
        "ply" => parse_ply(&std::fs::read(path)?, path),
        other => Err(Error::UnsupportedFormat(format!(
            "{}: unknown extension {other:?}",
            path.display()
        ))),
    }
}

/// Loads a mesh or point cloud (`.obj`, `.ply`, or whitespace-separated `.xyz`).
pub fn load_geometry(path: impl AsRef<Path>) -> Result<Geometry> {
    let path = path.as_ref();
    if extension(path) == "xyz" {
        return Ok(Geometry::Cloud(parse_xyz(&std::fs::read_to_string(path)?, path)?));
    }
    let mesh = load_mesh(path)?;
    if mesh.triangles.is_empty() {
        Ok(Geometry::Cloud(PointCloud::new(mesh.vertices)?))
    } else {
        Ok(Geometry::Mesh(mesh))
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let coords: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_error(path, format!("line {}", no + 1), format!("{e}")))?;
        if coords.len() != 3 {
            return Err(parse_error(path, format!("line {}", no + 1), "expected 3 coordinates".into()));
        }
        points.push(Vec3::new(coords[0], coords[1], coords[2]));
    }
    PointCloud::new(points)
}

pub(crate) fn parse_error(path: &Path, location: String, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location,
        message,
    }
}
