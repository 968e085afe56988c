use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use super::{write_obj, Mesh, NormalizationRecord};
use crate::error::{Error, Result};
use crate::geometry::{surface_point, Ensemble, Superquadric};
use crate::metrics::active_primitives;

/// Closed, outward-facing tessellation of one primitive in world
/// coordinates: `resolution` latitude bands by `resolution` longitude steps,
/// with single pole vertices.
pub fn tessellate_superquadric(sq: &Superquadric, resolution: usize) -> Result<Mesh> {
    if resolution < 4 {
        return Err(Error::InvalidArgument(format!("resolution must be at least 4, got {resolution}")));
    }
    let r_t = sq.pose.rotation()?.transpose();
    let to_world = |eta: f64, omega: f64| r_t * (surface_point(&sq.shape, eta, omega) - sq.pose.t);
    let n = resolution;

    let mut vertices = Vec::with_capacity(n * (n - 1) + 2);
    vertices.push(to_world(-FRAC_PI_2, 0.0));
    for i in 1..n {
        let eta = -FRAC_PI_2 + PI * i as f64 / n as f64;
        for j in 0..n {
            vertices.push(to_world(eta, -PI + 2.0 * PI * j as f64 / n as f64));
        }
    }
    vertices.push(to_world(FRAC_PI_2, 0.0));
    let south = 0;
    let north = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * n + j % n;

    let mut triangles = Vec::with_capacity(2 * n * (n - 1));
    for j in 0..n {
        triangles.push([south, ring(1, j + 1), ring(1, j)]);
    }
    for i in 1..n - 1 {
        for j in 0..n {
            let (a, b) = (ring(i, j), ring(i, j + 1));
            let (c, d) = (ring(i + 1, j + 1), ring(i + 1, j));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    for j in 0..n {
        triangles.push([north, ring(n - 1, j), ring(n - 1, j + 1)]);
    }
    Mesh::new(vertices, triangles)
}

/// Tessellates the active primitives, keeping each one as a named part.
pub fn tessellate_parts(
    ensemble: &Ensemble,
    resolution: usize,
    threshold: f64,
) -> Result<Vec<(String, Mesh)>> {
    let active = active_primitives(ensemble, threshold);
    if active.is_empty() {
        return Err(Error::NoActivePrimitives);
    }
    active
        .into_iter()
        .map(|m| Ok((format!("prim_{m}"), tessellate_superquadric(&ensemble.primitives[m], resolution)?)))
        .collect()
}

/// All active primitives merged into one mesh.
pub fn tessellate_ensemble(ensemble: &Ensemble, resolution: usize, threshold: f64) -> Result<Mesh> {
    let mut merged = Mesh {
        vertices: Vec::new(),
        triangles: Vec::new(),
    };
    for (_, part) in tessellate_parts(ensemble, resolution, threshold)? {
        let base = merged.vertices.len();
        merged.vertices.extend(part.vertices);
        merged
            .triangles
            .extend(part.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }
    Ok(merged)
}

/// Writes active primitives as OBJ objects named `prim_<m>`. When a
/// normalisation record is supplied, vertices are mapped back to the
/// original coordinates. Returns the number of primitives written.
pub fn export_ensemble_mesh(
    ensemble: &Ensemble,
    resolution: usize,
    threshold: f64,
    path: impl AsRef<Path>,
    denormalize: Option<&NormalizationRecord>,
) -> Result<usize> {
    let mut parts = tessellate_parts(ensemble, resolution, threshold)?;
    if let Some(record) = denormalize {
        for (_, mesh) in &mut parts {
            *mesh = mesh.transformed(|p| record.invert(p));
        }
    }
    std::fs::write(path, write_obj(&parts))?;
    Ok(parts.len())
}
