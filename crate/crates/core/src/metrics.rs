//! Evaluation: existence thresholding, symmetric Chamfer distance and
//! Monte-Carlo volumetric IoU.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Ensemble, Mat3, Vec3};
use crate::io::{aabb, Mesh, PointCloud};
use crate::kdtree::KdTree;
use crate::par;
use crate::sampler::{sample_superquadric, SamplingMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalConfig {
    pub gamma_threshold: f64,
    pub iou_samples: usize,
    pub eval_k: usize,
    pub eval_n: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gamma_threshold: 0.5,
            iou_samples: 100_000,
            eval_k: 1000,
            eval_n: 10_000,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_threshold > 0.0 && self.gamma_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in (0, 1), got {}",
                self.gamma_threshold
            )));
        }
        if self.iou_samples == 0 || self.eval_k < 4 || self.eval_n == 0 {
            return Err(Error::InvalidArgument("sample counts must be positive (eval_k ≥ 4)".into()));
        }
        Ok(())
    }
}

/// `{m : γ_m ≥ threshold}` in increasing order.
pub fn active_primitives(ensemble: &Ensemble, threshold: f64) -> Vec<usize> {
    ensemble
        .gamma
        .iter()
        .enumerate()
        .filter(|(_, &g)| g >= threshold)
        .map(|(m, _)| m)
        .collect()
}

/// Independent Bernoulli draws `z_m ∼ B(γ_m)`.
pub fn sample_existence(gamma: &[f64], seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gamma.iter().map(|&g| rng.random::<f64>() < g).collect()
}

/// Surface samples of the active primitives in world coordinates.
pub fn ensemble_surface_points(ensemble: &Ensemble, threshold: f64, k: usize) -> Result<Vec<Vec3>> {
    let active = active_primitives(ensemble, threshold);
    if active.is_empty() {
        return Err(Error::NoActivePrimitives);
    }
    let parts = par::map_slice(&active, |&m| -> Result<Vec<Vec3>> {
        let sq = &ensemble.primitives[m];
        let r = sq.pose.rotation()?;
        let samples = sample_superquadric(&sq.shape, k, SamplingMode::UniformArc)?;
        Ok(samples
            .points_local
            .iter()
            .map(|y| r.transpose() * (y - sq.pose.t))
            .collect())
    });
    Ok(parts.into_iter().collect::<Result<Vec<_>>>()?.concat())
}

/// Mean nearest-neighbour distance from `a` to `b` plus from `b` to `a`.
pub fn symmetric_chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("chamfer distance needs two non-empty sets".into()));
    }
    let one_way = |from: &[Vec3], to: &[Vec3]| {
        let tree = KdTree::new(to);
        par::map_slice(from, |p| tree.nearest(p).1.sqrt()).iter().sum::<f64>() / from.len() as f64
    };
    Ok(one_way(a, b) + one_way(b, a))
}

/// Symmetric Chamfer between `eval_k` samples per active primitive and the
/// target points.
pub fn chamfer_eval(ensemble: &Ensemble, target: &PointCloud, cfg: &EvalConfig) -> Result<f64> {
    ensemble.validate()?;
    let predicted = ensemble_surface_points(ensemble, cfg.gamma_threshold, cfg.eval_k)?;
    symmetric_chamfer(&predicted, &target.points)
}

/// Ray-parity inside test for a closed triangle mesh.
///
/// Each of three fixed, generic ray directions has its own rotated copy of
/// the mesh in which the ray is `+z`, with triangles binned on a 2D grid.
/// Rays grazing an edge or vertex are retried from a slightly shifted
/// origin.
#[derive(Debug, Clone)]
pub struct MeshInsideTester {
    frames: Vec<RayFrame>,
    scale: f64,
}

#[derive(Debug, Clone)]
struct RayFrame {
    rotation: Mat3,
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    lo: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    bins: Vec<Vec<u32>>,
}

enum Parity {
    Inside(bool),
    Degenerate,
}

const RAY_DIRECTIONS: [[f64; 3]; 3] = [
    [0.2672612419124244, 0.5345224838248488, 0.8017837257372732],
    [-0.7071067811865475, 0.1414213562373095, 0.6928203230275509],
    [0.5773502691896258, -0.8164965809277261, 0.0],
];

fn frame_to_z(dir: Vec3) -> Mat3 {
    let d = dir.normalize();
    let helper = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = d.cross(&helper).normalize();
    let b = d.cross(&a);
    Mat3::from_rows(&[a.transpose(), b.transpose(), d.transpose()])
}

impl RayFrame {
    fn new(mesh: &Mesh, rotation: Mat3) -> Self {
        let vertices: Vec<Vec3> = mesh.vertices.iter().map(|v| rotation * v).collect();
        let (lo3, hi3) = aabb(&vertices).unwrap_or((Vec3::zeros(), Vec3::zeros()));
        let side = (mesh.triangles.len() as f64).sqrt().ceil().clamp(1.0, 512.0) as usize;
        let dims = [side, side];
        let lo = [lo3.x, lo3.y];
        let cell = [
            ((hi3.x - lo3.x) / side as f64).max(f64::MIN_POSITIVE),
            ((hi3.y - lo3.y) / side as f64).max(f64::MIN_POSITIVE),
        ];
        let mut frame = Self {
            rotation,
            vertices,
            triangles: mesh.triangles.clone(),
            lo,
            cell,
            dims,
            bins: vec![Vec::new(); side * side],
        };
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let (mut a, mut b) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for &v in t {
                let p = frame.vertices[v];
                for c in 0..2 {
                    a[c] = a[c].min(p[c]);
                    b[c] = b[c].max(p[c]);
                }
            }
            let (i0, j0) = frame.cell_of(a[0], a[1]);
            let (i1, j1) = frame.cell_of(b[0], b[1]);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    frame.bins[i * dims[1] + j].push(ti as u32);
                }
            }
        }
        frame
    }

    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let f = |v: f64, c: usize| {
            let k = ((v - self.lo[c]) / self.cell[c]).floor();
            (k.max(0.0) as usize).min(self.dims[c] - 1)
        };
        (f(x, 0), f(y, 1))
    }

    fn parity(&self, p_world: &Vec3, scale: f64) -> Parity {
        let p = self.rotation * p_world;
        let hi = [
            self.lo[0] + self.cell[0] * self.dims[0] as f64,
            self.lo[1] + self.cell[1] * self.dims[1] as f64,
        ];
        if p.x < self.lo[0] || p.y < self.lo[1] || p.x > hi[0] || p.y > hi[1] {
            return Parity::Inside(false);
        }
        let (i, j) = self.cell_of(p.x, p.y);
        let tol = 1e-12 * scale * scale;
        let mut crossings = 0usize;
        for &ti in &self.bins[i * self.dims[1] + j] {
            let [a, b, c] = self.triangles[ti as usize].map(|v| self.vertices[v]);
            let edge = |u: &Vec3, v: &Vec3| (v.x - u.x) * (p.y - u.y) - (v.y - u.y) * (p.x - u.x);
            let (w0, w1, w2) = (edge(&b, &c), edge(&c, &a), edge(&a, &b));
            let all_pos = w0 > tol && w1 > tol && w2 > tol;
            let all_neg = w0 < -tol && w1 < -tol && w2 < -tol;
            if all_pos || all_neg {
                let z = (w0 * a.z + w1 * b.z + w2 * c.z) / (w0 + w1 + w2);
                if (z - p.z).abs() <= 1e-12 * scale {
                    return Parity::Degenerate;
                }
                if z > p.z {
                    crossings += 1;
                }
                continue;
            }
            let outside = w0 < -tol || w1 < -tol || w2 < -tol;
            let outside_pos = w0 > tol || w1 > tol || w2 > tol;
            if !(outside && outside_pos) {
                // On an edge or vertex of the projection (or a projected
                // sliver): only matters if the hit is ahead of the origin.
                let zmax = a.z.max(b.z).max(c.z);
                if zmax >= p.z - 1e-12 * scale {
                    return Parity::Degenerate;
                }
            }
        }
        Parity::Inside(crossings % 2 == 1)
    }
}

impl MeshInsideTester {
    /// Fails with [`Error::OpenMesh`] unless every undirected edge is shared
    /// by exactly two triangles.
    pub fn new(mesh: &Mesh) -> Result<Self> {
        if mesh.triangles.is_empty() {
            return Err(Error::OpenMesh);
        }
        let mut edges = std::collections::HashMap::<(usize, usize), u32>::new();
        for t in &mesh.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        if edges.values().any(|&c| c != 2) {
            return Err(Error::OpenMesh);
        }
        let diag = mesh.aabb().map_or(1.0, |(lo, hi)| (hi - lo).norm()).max(f64::MIN_POSITIVE);
        let frames = RAY_DIRECTIONS
            .iter()
            .map(|d| RayFrame::new(mesh, frame_to_z(Vec3::from(*d))))
            .collect();
        Ok(Self { frames, scale: diag })
    }

    pub fn contains(&self, p: &Vec3) -> Result<bool> {
        let mut verdict = None;
        for (f, frame) in self.frames.iter().enumerate() {
            let mut inside = None;
            for attempt in 0..16u64 {
                let q = if attempt == 0 {
                    *p
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(attempt * 3 + f as u64);
                    p + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                        * (1e-9 * self.scale)
                };
                if let Parity::Inside(b) = frame.parity(&q, self.scale) {
                    inside = Some(b);
                    break;
                }
            }
            let inside = inside.ok_or(Error::OpenMesh)?;
            match verdict {
                None => verdict = Some(inside),
                Some(v) if v != inside => return Err(Error::OpenMesh),
                Some(_) => {}
            }
        }
        Ok(verdict.unwrap_or(false))
    }
}

/// Whether `p` lies inside the closed mesh.
pub fn point_in_mesh(mesh: &Mesh, p: &Vec3) -> Result<bool> {
    MeshInsideTester::new(mesh)?.contains(p)
}

/// Reference shape for [`volumetric_iou`].
#[derive(Debug, Clone, Copy)]
pub enum Truth<'a> {
    Mesh(&'a Mesh),
    Ensemble(&'a Ensemble),
}

enum Occupancy<'a> {
    Mesh(MeshInsideTester),
    Ensemble(Vec<(&'a crate::geometry::Superquadric, Mat3)>),
}

impl<'a> Occupancy<'a> {
    fn for_ensemble(ensemble: &'a Ensemble, threshold: f64) -> Result<Self> {
        ensemble.validate()?;
        let active = active_primitives(ensemble, threshold);
        if active.is_empty() {
            return Err(Error::NoActivePrimitives);
        }
        Ok(Self::Ensemble(
            active
                .into_iter()
                .map(|m| {
                    let sq = &ensemble.primitives[m];
                    Ok((sq, sq.pose.rotation()?))
                })
                .collect::<Result<Vec<_>>>()?,
        ))
    }

    fn bounds(&self, mesh: Option<&Mesh>) -> Result<(Vec3, Vec3)> {
        match self {
            Self::Mesh(_) => mesh.and_then(Mesh::aabb).ok_or(Error::OpenMesh),
            Self::Ensemble(parts) => {
                let mut lo = Vec3::repeat(f64::INFINITY);
                let mut hi = Vec3::repeat(f64::NEG_INFINITY);
                for (sq, _) in parts {
                    let (a, b) = sq.world_aabb()?;
                    lo = lo.inf(&a);
                    hi = hi.sup(&b);
                }
                Ok((lo, hi))
            }
        }
    }

    fn contains(&self, p: &Vec3) -> Result<bool> {
        match self {
            Self::Mesh(t) => t.contains(p),
            Self::Ensemble(parts) => Ok(parts.iter().any(|(sq, r)| sq.contains(r, p))),
        }
    }
}

/// Monte-Carlo IoU over `iou_samples` uniform points in the joint bounding
/// box (inflated by 5%). Only active primitives count as occupied.
pub fn volumetric_iou(predicted: &Ensemble, truth: Truth<'_>, cfg: &EvalConfig) -> Result<f64> {
    cfg.validate()?;
    let pred = Occupancy::for_ensemble(predicted, cfg.gamma_threshold)?;
    let (reference, mesh) = match truth {
        Truth::Mesh(m) => (Occupancy::Mesh(MeshInsideTester::new(m)?), Some(m)),
        Truth::Ensemble(e) => (Occupancy::for_ensemble(e, cfg.gamma_threshold)?, None),
    };
    let (lo_a, hi_a) = pred.bounds(None)?;
    let (lo_b, hi_b) = reference.bounds(mesh)?;
    let (lo, hi) = (lo_a.inf(&lo_b), hi_a.sup(&hi_b));
    let center = (lo + hi) * 0.5;
    let half = (hi - lo) * 0.525;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points: Vec<Vec3> = (0..cfg.iou_samples)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .component_mul(&half)
                + center
        })
        .collect();
    let flags = par::map_slice(&points, |p| -> Result<(bool, bool)> { Ok((pred.contains(p)?, reference.contains(p)?)) });
    let (mut inter, mut union) = (0usize, 0usize);
    for f in flags {
        let (a, b) = f?;
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}
