//! Point sampling on superquadric surfaces and on triangle meshes.
//!
//! Superquadric sampling works in angle space. Uniform steps in `(η, ω)`
//! crowd points near the poles and along sharp edges, so the arc-length mode
//! reparameterises both angles by arc length: first along a meridian profile
//! (which fixes the latitude rings), then around each ring, giving every ring
//! a point budget proportional to its circumference.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{signed_pow, surface_point, ShapeParams, Vec3};
use crate::io::{Mesh, PointCloud};

/// Angular distance kept from the poles, where `d/dη cos^ε(η)` diverges.
pub const POLE_GUARD: f64 = 1e-3;

pub const DEFAULT_K: usize = 200;
pub const DEFAULT_N: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// Arc-length-adaptive angle stepping (near-uniform spacing).
    #[default]
    UniformArc,
    /// Regular lattice in `(η, ω)`.
    UniformAngle,
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_arc" | "uniform-arc" | "arc" => Ok(Self::UniformArc),
            "uniform_angle" | "uniform-angle" | "angle" => Ok(Self::UniformAngle),
            other => Err(Error::InvalidArgument(format!("unknown sampling mode {other:?}"))),
        }
    }
}

/// Per-primitive sample count and angle scheme used when evaluating losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerSettings {
    pub k: usize,
    pub mode: SamplingMode,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            mode: SamplingMode::UniformArc,
        }
    }
}

/// `K` paired `(η, ω)` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    pub etas: Vec<f64>,
    pub omegas: Vec<f64>,
}

impl AngleGrid {
    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etas.is_empty()
    }

    pub fn points(&self, shape: &ShapeParams) -> Vec<Vec3> {
        self.etas
            .iter()
            .zip(&self.omegas)
            .map(|(&eta, &omega)| surface_point(shape, eta, omega))
            .collect()
    }

    /// Randomly shifted copy: a common ω rotation plus a per-sample latitude
    /// wobble of at most half the nominal ring spacing.
    pub fn jittered<R: Rng>(&self, rng: &mut R) -> AngleGrid {
        let k = self.len().max(1) as f64;
        let shift = rng.random_range(-PI..PI);
        let wobble = 0.5 * PI / k.sqrt();
        let limit = FRAC_PI_2 - POLE_GUARD;
        let etas = self
            .etas
            .iter()
            .map(|&e| (e + rng.random_range(-wobble..=wobble)).clamp(-limit, limit))
            .collect();
        let omegas = self.omegas.iter().map(|&w| wrap_angle(w + shift)).collect();
        AngleGrid { etas, omegas }
    }
}

fn wrap_angle(w: f64) -> f64 {
    let mut w = (w + PI).rem_euclid(2.0 * PI) - PI;
    if w < -PI {
        w = -PI;
    }
    w
}

/// Points on the surface in the primitive frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub points_local: Vec<Vec3>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.points_local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points_local.is_empty()
    }
}

/// Cumulative arc length of a planar curve, tabulated on an adaptively
/// refined angle partition.
struct ArcTable {
    angles: Vec<f64>,
    cumulative: Vec<f64>,
}

impl ArcTable {
    /// `resolution` is the number of equal-length chords the curve would
    /// be split into at the finest refinement.
    fn build(curve: impl Fn(f64) -> (f64, f64), start: f64, end: f64, resolution: f64) -> Self {
        const BASE_CELLS: usize = 64;
        const MAX_DEPTH: u32 = 18;
        let chord = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);

        let base: Vec<f64> = (0..=BASE_CELLS)
            .map(|i| start + (end - start) * i as f64 / BASE_CELLS as f64)
            .collect();
        let base_pts: Vec<(f64, f64)> = base.iter().map(|&t| curve(t)).collect();
        let rough: f64 = base_pts.windows(2).map(|w| chord(w[0], w[1])).sum();
        let max_chord = (rough / resolution).max(f64::MIN_POSITIVE);

        let mut angles = vec![start];
        let mut cumulative = vec![0.0];
        // Depth-first refinement; the stack holds (t0, p0, t1, p1, depth)
        // with the leftmost pending cell on top.
        for i in 0..BASE_CELLS {
            let mut stack = vec![(base[i], base_pts[i], base[i + 1], base_pts[i + 1], 0u32)];
            while let Some((t0, p0, t1, p1, depth)) = stack.pop() {
                let c = chord(p0, p1);
                if c > max_chord && depth < MAX_DEPTH {
                    let tm = 0.5 * (t0 + t1);
                    let pm = curve(tm);
                    stack.push((tm, pm, t1, p1, depth + 1));
                    stack.push((t0, p0, tm, pm, depth + 1));
                } else {
                    let last = *cumulative.last().unwrap();
                    angles.push(t1);
                    cumulative.push(last + c);
                }
            }
        }
        Self { angles, cumulative }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Angle at which the arc length reaches `s`.
    fn angle_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let hi = self.cumulative.partition_point(|&c| c < s).max(1);
        let lo = hi - 1;
        let (c0, c1) = (self.cumulative[lo], self.cumulative[hi]);
        let f = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
        self.angles[lo] + f * (self.angles[hi] - self.angles[lo])
    }
}

/// Angle samples for one shape.
pub fn angle_grid(shape: &ShapeParams, k: usize, mode: SamplingMode) -> Result<AngleGrid> {
    shape.validate()?;
    if k < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 surface samples, got {k}")));
    }
    Ok(match mode {
        SamplingMode::UniformAngle => uniform_angle_grid(k),
        SamplingMode::UniformArc => uniform_arc_grid(shape, k),
    })
}

fn uniform_angle_grid(k: usize) -> AngleGrid {
    let rows = ((k as f64 / 2.0).sqrt().round() as usize).max(1);
    let cols = k.div_ceil(rows);
    let (etas, omegas) = (0..k)
        .map(|idx| {
            let (j, i) = (idx / cols, idx % cols);
            (
                -FRAC_PI_2 + (j as f64 + 0.5) * PI / rows as f64,
                -PI + (i as f64 + 0.5) * 2.0 * PI / cols as f64,
            )
        })
        .unzip();
    AngleGrid { etas, omegas }
}

fn uniform_arc_grid(shape: &ShapeParams, k: usize) -> AngleGrid {
    let [a1, a2, a3] = shape.alpha;
    let [e1, e2] = shape.epsilon;
    let radial = 0.5 * (a1 + a2);
    let limit = FRAC_PI_2 - POLE_GUARD;
    let resolution = (32.0 * (k as f64).sqrt()).clamp(512.0, 65536.0);

    let meridian = ArcTable::build(
        |eta| (radial * signed_pow(eta.cos(), e1), a3 * signed_pow(eta.sin(), e1)),
        -limit,
        limit,
        resolution,
    );
    let equator = ArcTable::build(
        |omega| (a1 * signed_pow(omega.cos(), e2), a2 * signed_pow(omega.sin(), e2)),
        -PI,
        PI,
        resolution,
    );
    let (meridian_len, equator_len) = (meridian.length(), equator.length());

    // Mean ring scale along the meridian decides how many rings give equal
    // spacing in both directions.
    const PROBES: usize = 256;
    let mean_scale = (0..PROBES)
        .map(|i| {
            let eta = meridian.angle_at((i as f64 + 0.5) * meridian_len / PROBES as f64);
            eta.cos().abs().powf(e1)
        })
        .sum::<f64>()
        / PROBES as f64;
    let ideal = (k as f64 * meridian_len / (mean_scale * equator_len).max(1e-300)).sqrt();
    let rings = (ideal.round() as usize).clamp(2, k / 2);

    let ring_etas: Vec<f64> = (0..rings)
        .map(|j| meridian.angle_at((j as f64 + 0.5) * meridian_len / rings as f64))
        .collect();
    let scales: Vec<f64> = ring_etas.iter().map(|e| e.cos().abs().powf(e1)).collect();
    let counts = apportion(&scales, k);

    let mut etas = Vec::with_capacity(k);
    let mut omegas = Vec::with_capacity(k);
    for (j, (&eta, &count)) in ring_etas.iter().zip(&counts).enumerate() {
        let offset = if j % 2 == 0 { 0.0 } else { 0.5 };
        for i in 0..count {
            etas.push(eta);
            omegas.push(equator.angle_at((i as f64 + offset) * equator_len / count as f64));
        }
    }
    AngleGrid { etas, omegas }
}

/// Splits `total` into integer shares proportional to `weights`, each at
/// least 1, summing exactly to `total` (largest-remainder rule).
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let n = weights.len();
    debug_assert!(total >= n);
    let sum: f64 = weights.iter().sum();
    let spare = (total - n) as f64;
    let raw: Vec<f64> = weights
        .iter()
        .map(|w| if sum > 0.0 { spare * w / sum } else { spare / n as f64 })
        .collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| 1 + r.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &j in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[j] += 1;
        left -= 1;
    }
    counts
}

/// `k` surface points of a superquadric in its local frame.
pub fn sample_superquadric(
    shape: &ShapeParams,
    k: usize,
    mode: SamplingMode,
) -> Result<SurfaceSamples> {
    let grid = angle_grid(shape, k, mode)?;
    Ok(SurfaceSamples {
        points_local: grid.points(shape),
    })
}

/// Area-weighted uniform surface sampling of a triangle mesh.
pub fn sample_mesh_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for tri in &mesh.triangles {
        let [a, b, c] = mesh.corners(tri);
        total += 0.5 * (b - a).cross(&(c - a)).norm();
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let target = rng.random::<f64>() * total;
            let idx = cumulative
                .partition_point(|&c| c <= target)
                .min(mesh.triangles.len() - 1);
            let [a, b, c] = mesh.corners(&mesh.triangles[idx]);
            let r1 = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
        })
        .collect();
    PointCloud::new(points)
}
