//! Bi-directional Chamfer reconstruction loss with Bernoulli existence
//! probabilities, plus the parsimony regulariser.
//!
//! Primitive-to-cloud is linear in the existence probabilities:
//!
//! ```text
//! L_P→X = Σ_m γ_m · (1/K) Σ_k Δᵐ_k
//! ```
//!
//! Cloud-to-primitive needs the expected distance to the closest *existing*
//! primitive. Sorting the per-point distances `Δ⁽¹⁾ ≤ … ≤ Δ⁽ᴹ⁾` turns the
//! `2^M`-term expectation into a single pass:
//!
//! ```text
//! E[min_{m: z_m = 1} Δᵐ_i] = Σ_j Δ⁽ʲ⁾_i · γ_(j) · Π_{l<j} (1 − γ_(l))
//! ```
//!
//! The configuration where no primitive exists contributes 0.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Ensemble, Vec3};
use crate::io::PointCloud;
use crate::kdtree::{dist_sq, nearest_brute, KdTree};
use crate::par;
use crate::sampler::{sample_superquadric, SamplerSettings, SurfaceSamples};

/// Largest ensemble the exhaustive expectation accepts.
pub const BRUTE_FORCE_MAX_PRIMITIVES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceRole {
    /// Row `m`, column `k`: distance from surface sample `k` to the cloud.
    PrimToCloud,
    /// Row `m`, column `i`: distance from cloud point `i` to primitive `m`.
    CloudToPrim,
}

/// Row-major `M × cols` matrix of non-negative distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub role: DistanceRole,
}

impl DistanceMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, role: DistanceRole) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "distance matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(d) = data.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::InvalidArgument(format!("distance {d} is not a finite non-negative value")));
        }
        Ok(Self {
            rows,
            cols,
            data,
            role,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, role: DistanceRole) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged distance rows".into()));
        }
        let n = rows.len();
        Self::new(n, cols, rows.concat(), role)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub w_px: f64,
    pub w_xp: f64,
    /// Weight of the "at least one primitive" hinge.
    pub alpha: f64,
    /// Weight of the sub-linear sparsity term.
    pub beta: f64,
    /// Divide the cloud-to-primitive point sum by `N`.
    pub normalize_by_counts: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_px: 1.2,
            w_xp: 0.8,
            alpha: 1.0,
            beta: 1e-3,
            normalize_by_counts: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.w_px >= 0.0 && self.w_xp >= 0.0 && self.alpha >= 0.0 && self.beta >= 0.0;
        if !ok || ![self.w_px, self.w_xp, self.alpha, self.beta].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub l_px: f64,
    pub l_xp: f64,
    pub l_recon: f64,
    pub l_parsimony: f64,
    pub l_total: f64,
    /// Unweighted per-primitive mean sample-to-cloud distance.
    pub per_primitive_px: Vec<f64>,
}

/// Per-primitive nearest-neighbour maps in the primitive frame.
#[derive(Debug, Clone)]
pub(crate) struct NearestMaps {
    /// For each surface sample: `(cloud index, distance)`.
    pub to_cloud: Vec<(usize, f64)>,
    /// For each cloud point: `(sample index, distance)`.
    pub to_samples: Vec<(usize, f64)>,
}

pub(crate) fn nearest_maps(local_cloud: &[Vec3], samples: &[Vec3]) -> NearestMaps {
    let cloud_tree = KdTree::new(local_cloud);
    let sample_tree = KdTree::new(samples);
    let to_cloud = samples
        .iter()
        .map(|y| {
            let (i, d) = cloud_tree.nearest(y);
            (i, d.sqrt())
        })
        .collect();
    let to_samples = par::map_slice(local_cloud, |x| {
        let (k, d) = sample_tree.nearest(x);
        (k, d.sqrt())
    });
    NearestMaps {
        to_cloud,
        to_samples,
    }
}

fn nearest_maps_exhaustive(local_cloud: &[Vec3], samples: &[Vec3]) -> NearestMaps {
    let scan = |set: &[Vec3], q: &Vec3| {
        let (i, d) = nearest_brute(set, q);
        (i, d.sqrt())
    };
    NearestMaps {
        to_cloud: samples.iter().map(|y| scan(local_cloud, y)).collect(),
        to_samples: local_cloud.iter().map(|x| scan(samples, x)).collect(),
    }
}

fn check_dims(ensemble: &Ensemble, samples: &[SurfaceSamples], cloud: &PointCloud) -> Result<usize> {
    if samples.len() != ensemble.len() {
        return Err(Error::InvalidArgument(format!(
            "{} sample sets for {} primitives",
            samples.len(),
            ensemble.len()
        )));
    }
    let k = samples.first().map_or(0, SurfaceSamples::len);
    if k == 0 || samples.iter().any(|s| s.len() != k) {
        return Err(Error::InvalidArgument("every primitive needs the same non-zero sample count".into()));
    }
    if cloud.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    Ok(k)
}

fn min_distances_with(
    ensemble: &Ensemble,
    samples: &[SurfaceSamples],
    cloud: &PointCloud,
    maps: impl Fn(&[Vec3], &[Vec3]) -> NearestMaps + Sync + Send,
) -> Result<(DistanceMatrix, DistanceMatrix)> {
    let k = check_dims(ensemble, samples, cloud)?;
    let m = ensemble.len();
    let n = cloud.len();
    let rotations = ensemble
        .primitives
        .iter()
        .map(|sq| sq.pose.rotation())
        .collect::<Result<Vec<_>>>()?;
    let per_prim = par::map_range(m, |j| {
        let t = ensemble.primitives[j].pose.t;
        let local: Vec<Vec3> = cloud.points.iter().map(|x| rotations[j] * x + t).collect();
        maps(&local, &samples[j].points_local)
    });
    let mut to_cloud = Vec::with_capacity(m * k);
    let mut to_prim = Vec::with_capacity(m * n);
    for maps in &per_prim {
        to_cloud.extend(maps.to_cloud.iter().map(|p| p.1));
        to_prim.extend(maps.to_samples.iter().map(|p| p.1));
    }
    Ok((
        DistanceMatrix::new(m, k, to_cloud, DistanceRole::PrimToCloud)?,
        DistanceMatrix::new(m, n, to_prim, DistanceRole::CloudToPrim)?,
    ))
}

/// `(Δᵐ_k, Δᵐ_i)` computed with k-d trees in each primitive's frame.
pub fn pairwise_min_distances(
    ensemble: &Ensemble,
    samples: &[SurfaceSamples],
    cloud: &PointCloud,
) -> Result<(DistanceMatrix, DistanceMatrix)> {
    min_distances_with(ensemble, samples, cloud, nearest_maps)
}

/// Reference double loop; bit-identical to [`pairwise_min_distances`].
pub fn pairwise_min_distances_exhaustive(
    ensemble: &Ensemble,
    samples: &[SurfaceSamples],
    cloud: &PointCloud,
) -> Result<(DistanceMatrix, DistanceMatrix)> {
    min_distances_with(ensemble, samples, cloud, nearest_maps_exhaustive)
}

fn check_gamma(rows: usize, gamma: &[f64]) -> Result<()> {
    if rows != gamma.len() {
        return Err(Error::InvalidArgument(format!(
            "{rows} distance rows but {} existence probabilities",
            gamma.len()
        )));
    }
    Ok(())
}

/// Mean sample-to-cloud distance of every primitive, `L^m_P→X`.
pub fn per_primitive_px(deltas: &DistanceMatrix) -> Vec<f64> {
    (0..deltas.rows())
        .map(|m| deltas.row(m).iter().sum::<f64>() / deltas.cols() as f64)
        .collect()
}

/// `Σ_m γ_m · mean_k Δᵐ_k`.
pub fn prim_to_cloud_loss(deltas: &DistanceMatrix, gamma: &[f64]) -> Result<f64> {
    check_gamma(deltas.rows(), gamma)?;
    Ok(per_primitive_px(deltas)
        .iter()
        .zip(gamma)
        .map(|(l, g)| g * l)
        .sum())
}

/// Expected distance of one point to its closest existing primitive.
/// `pairs` holds `(Δ, m)` and is sorted in place by distance, then index.
#[inline]
pub(crate) fn point_expectation(pairs: &mut [(f64, usize)], gamma: &[f64]) -> f64 {
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut none_closer = 1.0;
    let mut value = 0.0;
    for &(d, m) in pairs.iter() {
        value += d * gamma[m] * none_closer;
        none_closer *= 1.0 - gamma[m];
    }
    value
}

/// Gradient of [`point_expectation`] for already-sorted `pairs`, scaled by
/// `scale` and accumulated into `d_delta[m]` and `d_gamma[m]`.
pub(crate) fn point_expectation_grad(
    pairs: &[(f64, usize)],
    gamma: &[f64],
    scale: f64,
    d_delta: &mut [f64],
    d_gamma: &mut [f64],
) {
    let mut prefix = Vec::with_capacity(pairs.len());
    let mut none_closer = 1.0;
    for &(_, m) in pairs {
        prefix.push(none_closer);
        none_closer *= 1.0 - gamma[m];
    }
    // tail = E[min over primitives after position j | none before exists]
    let mut tail = 0.0;
    for (j, &(d, m)) in pairs.iter().enumerate().rev() {
        let g = gamma[m];
        d_delta[m] += scale * prefix[j] * g;
        d_gamma[m] += scale * prefix[j] * (d - tail);
        tail = d * g + (1.0 - g) * tail;
    }
}

fn per_point_values(deltas: &DistanceMatrix, gamma: &[f64]) -> Vec<f64> {
    const CHUNK: usize = 64;
    let (m, n) = (deltas.rows(), deltas.cols());
    let chunks = par::map_range(n.div_ceil(CHUNK), |c| {
        let mut pairs = Vec::with_capacity(m);
        (c * CHUNK..((c + 1) * CHUNK).min(n))
            .map(|i| {
                pairs.clear();
                pairs.extend((0..m).map(|j| (deltas.get(j, i), j)));
                point_expectation(&mut pairs, gamma)
            })
            .collect::<Vec<f64>>()
    });
    chunks.concat()
}

/// Linear-time expected cloud-to-primitive distance.
pub fn cloud_to_prim_expected(deltas: &DistanceMatrix, gamma: &[f64], normalize: bool) -> Result<f64> {
    check_gamma(deltas.rows(), gamma)?;
    let sum: f64 = per_point_values(deltas, gamma).iter().sum();
    Ok(if normalize { sum / deltas.cols() as f64 } else { sum })
}

/// Exact expectation by enumerating all `2^M` existence configurations.
pub fn cloud_to_prim_bruteforce(deltas: &DistanceMatrix, gamma: &[f64], normalize: bool) -> Result<f64> {
    check_gamma(deltas.rows(), gamma)?;
    let m = deltas.rows();
    if m > BRUTE_FORCE_MAX_PRIMITIVES {
        return Err(Error::TooManyPrimitives(m));
    }

    // Depth-first over z_0, z_1, …; `closest` is the minimum over the
    // primitives switched on so far (infinite while none is).
    fn walk(dist: &[f64], gamma: &[f64], j: usize, prob: f64, closest: f64) -> f64 {
        if j == dist.len() {
            return if closest.is_finite() { prob * closest } else { 0.0 };
        }
        let on = walk(dist, gamma, j + 1, prob * gamma[j], closest.min(dist[j]));
        let off = walk(dist, gamma, j + 1, prob * (1.0 - gamma[j]), closest);
        on + off
    }

    let mut column = vec![0.0; m];
    let mut sum = 0.0;
    for i in 0..deltas.cols() {
        for (j, c) in column.iter_mut().enumerate() {
            *c = deltas.get(j, i);
        }
        sum += walk(&column, gamma, 0, 1.0, f64::INFINITY);
    }
    Ok(if normalize { sum / deltas.cols() as f64 } else { sum })
}

/// Outcome of comparing an expectation evaluator against the exhaustive one.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub instances: usize,
    pub max_abs_dev: f64,
    pub worst_instance: usize,
}

/// Draws a random expectation instance with `m` primitives and `n` points.
///
/// Roughly one probability in eight is pinned to 0 or 1 and one distance in
/// eight is copied from another primitive, so ties and certain or impossible
/// primitives are covered.
pub fn random_expectation_instance<R: Rng>(rng: &mut R, m: usize, n: usize) -> (DistanceMatrix, Vec<f64>) {
    let mut data: Vec<f64> = (0..m * n).map(|_| rng.random::<f64>() * 10.0).collect();
    if m > 1 {
        for j in 0..m {
            for i in 0..n {
                if rng.random_bool(0.125) {
                    let other = rng.random_range(0..m);
                    data[j * n + i] = data[other * n + i];
                }
            }
        }
    }
    let gamma = (0..m)
        .map(|_| match rng.random_range(0..16) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random::<f64>(),
        })
        .collect();
    let deltas = DistanceMatrix::new(m, n, data, DistanceRole::CloudToPrim).expect("sized by construction");
    (deltas, gamma)
}

/// Runs `instances` random problems with `1..=max_primitives` primitives and
/// `1..=max_points` points through `evaluate` and the exhaustive oracle.
pub fn expectation_oracle_suite<R, F>(
    rng: &mut R,
    instances: usize,
    max_primitives: usize,
    max_points: usize,
    evaluate: F,
) -> Result<OracleReport>
where
    R: Rng,
    F: Fn(&DistanceMatrix, &[f64]) -> Result<f64>,
{
    if max_primitives > BRUTE_FORCE_MAX_PRIMITIVES {
        return Err(Error::TooManyPrimitives(max_primitives));
    }
    if max_primitives == 0 || max_points == 0 {
        return Err(Error::InvalidArgument("oracle suite needs at least one primitive and one point".into()));
    }
    let mut report = OracleReport {
        instances,
        max_abs_dev: 0.0,
        worst_instance: 0,
    };
    for t in 0..instances {
        let m = rng.random_range(1..=max_primitives);
        let n = rng.random_range(1..=max_points);
        let (deltas, gamma) = random_expectation_instance(rng, m, n);
        let fast = evaluate(&deltas, &gamma)?;
        let slow = cloud_to_prim_bruteforce(&deltas, &gamma, false)?;
        let dev = (fast - slow).abs();
        if !(dev <= report.max_abs_dev) {
            report.max_abs_dev = dev;
            report.worst_instance = t;
        }
    }
    Ok(report)
}

/// `max(α − α·Σγ, 0) + β·√Σγ`.
pub fn parsimony_loss(gamma: &[f64], cfg: &LossConfig) -> f64 {
    let s: f64 = gamma.iter().sum();
    (cfg.alpha - cfg.alpha * s).max(0.0) + cfg.beta * s.max(0.0).sqrt()
}

/// Assembles the full report from precomputed distance matrices.
pub fn report_from_deltas(
    to_cloud: &DistanceMatrix,
    to_prim: &DistanceMatrix,
    gamma: &[f64],
    cfg: &LossConfig,
) -> Result<LossReport> {
    check_gamma(to_cloud.rows(), gamma)?;
    let per_primitive = per_primitive_px(to_cloud);
    let l_px: f64 = per_primitive.iter().zip(gamma).map(|(l, g)| g * l).sum();
    let l_xp = cloud_to_prim_expected(to_prim, gamma, cfg.normalize_by_counts)?;
    let l_recon = cfg.w_px * l_px + cfg.w_xp * l_xp;
    let l_parsimony = parsimony_loss(gamma, cfg);
    let report = LossReport {
        l_px,
        l_xp,
        l_recon,
        l_parsimony,
        l_total: l_recon + l_parsimony,
        per_primitive_px: per_primitive,
    };
    if !report.l_total.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(report)
}

/// Samples each primitive, measures both distance directions and returns
/// the complete loss.
pub fn total_loss(
    ensemble: &Ensemble,
    cloud: &PointCloud,
    cfg: &LossConfig,
    sampler: &SamplerSettings,
) -> Result<LossReport> {
    ensemble.validate()?;
    cfg.validate()?;
    let samples = ensemble
        .primitives
        .iter()
        .map(|sq| sample_superquadric(&sq.shape, sampler.k, sampler.mode))
        .collect::<Result<Vec<_>>>()?;
    let (to_cloud, to_prim) = pairwise_min_distances(ensemble, &samples, cloud)?;
    report_from_deltas(&to_cloud, &to_prim, &ensemble.gamma, cfg)
}

/// Distance used throughout: square root of [`dist_sq`].
#[inline]
pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    dist_sq(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::{Pose, ShapeParams, Superquadric};

    fn cloud_matrix(rows: Vec<Vec<f64>>) -> DistanceMatrix {
        DistanceMatrix::from_rows(rows, DistanceRole::CloudToPrim).unwrap()
    }

    #[test]
    fn prim_to_cloud_examples() {
        let d = DistanceMatrix::from_rows(vec![vec![1.0, 3.0]], DistanceRole::PrimToCloud).unwrap();
        assert_eq!(prim_to_cloud_loss(&d, &[1.0]).unwrap(), 2.0);
        assert_eq!(prim_to_cloud_loss(&d, &[0.0]).unwrap(), 0.0);
        let d2 = DistanceMatrix::from_rows(vec![vec![1.0, 3.0], vec![0.5, 0.25]], DistanceRole::PrimToCloud).unwrap();
        let full = prim_to_cloud_loss(&d2, &[0.8, 0.4]).unwrap();
        let half = prim_to_cloud_loss(&d2, &[0.4, 0.2]).unwrap();
        assert!((half - 0.5 * full).abs() < 1e-15);
    }

    #[test]
    fn expected_examples() {
        let single = cloud_matrix(vec![vec![0.5, 1.5, 2.0]]);
        assert_eq!(cloud_to_prim_expected(&single, &[1.0], false).unwrap(), 4.0);
        // sorted Δ = [1, 2], γ = [0.5, 0.5]: 0.5·1 + 0.5·0.5·2
        let two = cloud_matrix(vec![vec![2.0], vec![1.0]]);
        assert_eq!(cloud_to_prim_expected(&two, &[0.5, 0.5], false).unwrap(), 1.0);
        assert_eq!(cloud_to_prim_expected(&two, &[0.0, 0.0], false).unwrap(), 0.0);
        assert_eq!(cloud_to_prim_expected(&single, &[1.0], true).unwrap(), 4.0 / 3.0);
    }

    #[test]
    fn brute_force_examples() {
        let single = cloud_matrix(vec![vec![4.0, 4.0]]);
        assert_eq!(cloud_to_prim_bruteforce(&single, &[0.25], false).unwrap(), 2.0);
        let three = cloud_matrix(vec![vec![3.0, 0.1], vec![1.0, 0.7], vec![2.0, 0.2]]);
        assert_eq!(cloud_to_prim_bruteforce(&three, &[1.0, 1.0, 1.0], false).unwrap(), 1.0 + 0.1);
        let two = cloud_matrix(vec![vec![2.0], vec![1.0]]);
        assert_eq!(cloud_to_prim_bruteforce(&two, &[0.5, 0.5], false).unwrap(), 1.0);
        let wide = cloud_matrix(vec![vec![1.0]; 21]);
        assert!(matches!(
            cloud_to_prim_bruteforce(&wide, &[0.5; 21], false),
            Err(Error::TooManyPrimitives(21))
        ));
    }

    #[test]
    fn parsimony_examples() {
        let cfg = LossConfig::default();
        assert_eq!(parsimony_loss(&[0.0, 0.0], &cfg), 1.0);
        assert!((parsimony_loss(&[0.5, 0.5], &cfg) - 1e-3).abs() < 1e-15);
        assert!((parsimony_loss(&[1.0; 9], &cfg) - 3e-3).abs() < 1e-15);
    }

    #[test]
    fn expectation_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let m = rng.random_range(1..8);
            let gamma: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let dist: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 5.0).collect();
            let value = |g: &[f64], d: &[f64]| {
                let mut pairs: Vec<_> = d.iter().copied().zip(0..).collect();
                point_expectation(&mut pairs, g)
            };
            let mut pairs: Vec<_> = dist.iter().copied().zip(0..).collect();
            point_expectation(&mut pairs, &gamma);
            let mut dd = vec![0.0; m];
            let mut dg = vec![0.0; m];
            point_expectation_grad(&pairs, &gamma, 1.0, &mut dd, &mut dg);
            let h = 1e-6;
            for j in 0..m {
                let (mut gp, mut gm) = (gamma.clone(), gamma.clone());
                gp[j] += h;
                gm[j] -= h;
                let fd = (value(&gp, &dist) - value(&gm, &dist)) / (2.0 * h);
                assert!((fd - dg[j]).abs() < 1e-7, "{fd} vs {}", dg[j]);
                let (mut dp, mut dm) = (dist.clone(), dist.clone());
                dp[j] += h;
                dm[j] -= h;
                let fd = (value(&gamma, &dp) - value(&gamma, &dm)) / (2.0 * h);
                assert!((fd - dd[j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn pairwise_hand_examples() {
        let sq = Superquadric::new(ShapeParams::sphere(1.0), Pose::identity()).unwrap();
        let ensemble = Ensemble::single(sq);
        let cloud = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        let samples = vec![SurfaceSamples {
            points_local: vec![Vec3::new(1.0, 0.0, 0.0)],
        }];
        let (a, b) = pairwise_min_distances(&ensemble, &samples, &cloud).unwrap();
        assert_eq!((a.get(0, 0), b.get(0, 0)), (1.0, 1.0));

        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.5, -1.0)).collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let samples = vec![SurfaceSamples { points_local: pts }];
        let (a, b) = pairwise_min_distances(&ensemble, &samples, &cloud).unwrap();
        assert!(a.as_slice().iter().chain(b.as_slice()).all(|&d| d == 0.0));
    }

    #[test]
    fn total_loss_examples() {
        let sphere = ShapeParams::sphere(0.4);
        let sq = Superquadric::new(sphere, Pose::identity()).unwrap();
        let settings = SamplerSettings::default();
        let samples = sample_superquadric(&sphere, settings.k, settings.mode).unwrap();
        let cloud = PointCloud::new(samples.points_local.clone()).unwrap();
        let cfg = LossConfig::default();

        let r = total_loss(&Ensemble::single(sq), &cloud, &cfg, &settings).unwrap();
        assert_eq!(r.l_recon, 0.0);
        assert!((r.l_parsimony - 1e-3).abs() < 1e-15);

        let off = Ensemble::new(vec![sq, sq], vec![0.0, 0.0]).unwrap();
        let r = total_loss(&off, &cloud, &cfg, &settings).unwrap();
        assert_eq!(r.l_recon, 0.0);
        assert_eq!(r.l_total, 1.0);
    }

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> (DistanceMatrix, Vec<f64>) {
        let rows = (0..m)
            .map(|_| (0..n).map(|_| rng.random::<f64>() * 10.0).collect())
            .collect();
        let gamma = (0..m).map(|_| rng.random::<f64>()).collect();
        (cloud_matrix(rows), gamma)
    }

    #[test]
    fn report_arithmetic_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = rng.random_range(1..6);
            let (to_prim, gamma) = random_matrix(&mut rng, m, 30);
            let (tc, _) = random_matrix(&mut rng, m, 12);
            let to_cloud = DistanceMatrix::new(m, 12, tc.as_slice().to_vec(), DistanceRole::PrimToCloud).unwrap();
            let cfg = LossConfig::default();
            let r = report_from_deltas(&to_cloud, &to_prim, &gamma, &cfg).unwrap();
            assert_eq!(r.l_recon, cfg.w_px * r.l_px + cfg.w_xp * r.l_xp);
            assert_eq!(r.l_total, r.l_recon + r.l_parsimony);
            assert_eq!(r.per_primitive_px.len(), m);
        }
    }

    #[test]
    fn oracle_suite_flags_a_corrupted_evaluator() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let good = expectation_oracle_suite(&mut rng, 100, 10, 20, |d, g| cloud_to_prim_expected(d, g, false)).unwrap();
        assert!(good.max_abs_dev <= 1e-9, "{}", good.max_abs_dev);
        let bad = expectation_oracle_suite(&mut rng, 100, 10, 20, |d, g| {
            cloud_to_prim_expected(d, g, false).map(|v| v * 1.01 + 1e-3)
        })
        .unwrap();
        assert!(bad.max_abs_dev > 1e-6);
        assert!(expectation_oracle_suite(&mut rng, 1, 21, 5, |_, _| Ok(0.0)).is_err());
    }

    proptest! {
        #[test]
        fn expected_matches_bruteforce(
            m in 1usize..=12,
            n in 1usize..=20,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d, gamma) = random_matrix(&mut rng, m, n);
            let fast = cloud_to_prim_expected(&d, &gamma, false).unwrap();
            let slow = cloud_to_prim_bruteforce(&d, &gamma, false).unwrap();
            prop_assert!((fast - slow).abs() <= 1e-10);
        }

        #[test]
        fn permutation_invariant(m in 1usize..=8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d, gamma) = random_matrix(&mut rng, m, 15);
            let mut perm: Vec<usize> = (0..m).collect();
            for i in (1..m).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let rows: Vec<Vec<f64>> = perm.iter().map(|&j| d.row(j).to_vec()).collect();
            let pg: Vec<f64> = perm.iter().map(|&j| gamma[j]).collect();
            let a = cloud_to_prim_expected(&d, &gamma, true).unwrap();
            let b = cloud_to_prim_expected(&cloud_matrix(rows.clone()), &pg, true).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            let pc = DistanceMatrix::from_rows(rows, DistanceRole::PrimToCloud).unwrap();
            let dc = DistanceMatrix::new(m, 15, d.as_slice().to_vec(), DistanceRole::PrimToCloud).unwrap();
            prop_assert!((prim_to_cloud_loss(&dc, &gamma).unwrap() - prim_to_cloud_loss(&pc, &pg).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn monotone_in_each_distance(m in 1usize..=8, seed in any::<u64>(), bump in 0.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d, gamma) = random_matrix(&mut rng, m, 5);
            let (j, i) = (rng.random_range(0..m), rng.random_range(0..5));
            let mut data = d.as_slice().to_vec();
            data[j * 5 + i] += bump;
            let raised = DistanceMatrix::new(m, 5, data, DistanceRole::CloudToPrim).unwrap();
            let before = cloud_to_prim_expected(&d, &gamma, false).unwrap();
            let after = cloud_to_prim_expected(&raised, &gamma, false).unwrap();
            prop_assert!(after >= before - 1e-12);
        }

        #[test]
        fn certain_existence_gives_min(m in 1usize..=8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d, _) = random_matrix(&mut rng, m, 1);
            let v = cloud_to_prim_expected(&d, &vec![1.0; m], false).unwrap();
            let min = d.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(v, min);
        }
    }
}
