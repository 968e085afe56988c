//! Direct per-shape fitting: reparameterisation, Adam, farthest-point
//! initialisation and the two-phase, multi-restart driver.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use nalgebra::{Rotation3, SymmetricEigen, UnitQuaternion};

use crate::geometry::{Ensemble, Mat3, Pose, ShapeParams, Superquadric, Vec3, EPSILON_MAX, EPSILON_MIN};
use crate::grad::{sigmoid, Field, Objective, ParamVector, PARAMS_PER_PRIMITIVE};
use crate::io::PointCloud;
use crate::loss::{LossConfig, LossReport};
use crate::par;
use crate::sampler::{AngleGrid, SamplingMode, DEFAULT_K, DEFAULT_N};

/// Range of the size parameters `α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for AlphaBounds {
    fn default() -> Self {
        Self { min: 0.005, max: 1.0 }
    }
}

impl AlphaBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.min < self.max && self.max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha bounds must satisfy 0 < min < max, got ({}, {})",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite() && unit(self.beta1) && unit(self.beta2) && self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam step. Returns the new state and the update to
/// add to the parameters.
pub fn adam_step(state: &AdamState, grad: &[f64], cfg: &AdamConfig) -> Result<(AdamState, Vec<f64>)> {
    let mut next = state.clone();
    let update = adam_step_in_place(&mut next, grad, cfg)?;
    Ok((next, update))
}

fn adam_step_in_place(state: &mut AdamState, grad: &[f64], cfg: &AdamConfig) -> Result<Vec<f64>> {
    if grad.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "gradient has {} entries, optimizer state {}",
            grad.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let mut update = Vec::with_capacity(grad.len());
    for ((m, v), &g) in state.m.iter_mut().zip(state.v.iter_mut()).zip(grad) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        update.push(-cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
    }
    Ok(update)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitConfig {
    pub max_prims: usize,
    pub iters_main: usize,
    pub iters_gamma: usize,
    pub adam: AdamConfig,
    pub restarts: usize,
    pub seed: u64,
    pub resample_each_iter: bool,
    /// Draw a fresh set of `n` target points from the input every
    /// iteration instead of fixing one subset for the whole fit.
    pub redraw_target: bool,
    /// Samples per primitive surface.
    pub k: usize,
    /// Target points drawn from the input per fit.
    pub n: usize,
    #[serde(skip)]
    pub loss: LossConfig,
    pub alpha_bounds: AlphaBounds,
    pub trace_every: usize,
    #[serde(skip)]
    pub sampling_mode: SamplingMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_prims: 1,
            iters_main: 2000,
            iters_gamma: 500,
            adam: AdamConfig::default(),
            restarts: 1,
            seed: 0,
            resample_each_iter: false,
            redraw_target: true,
            k: DEFAULT_K,
            n: DEFAULT_N,
            loss: LossConfig::default(),
            alpha_bounds: AlphaBounds::default(),
            trace_every: 10,
            sampling_mode: SamplingMode::UniformArc,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_prims", self.max_prims),
            ("iters_main", self.iters_main),
            ("restarts", self.restarts),
            ("k", self.k),
            ("n", self.n),
            ("trace_every", self.trace_every),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if self.k < 4 {
            return Err(Error::InvalidArgument(format!("k must be at least 4, got {}", self.k)));
        }
        self.adam.validate()?;
        self.loss.validate()?;
        self.alpha_bounds.validate()
    }
}

/// `ε = 0.1 + 1.8·sigmoid(u)`, evaluated about the midpoint so `u = 0`
/// gives exactly 1.
#[inline]
pub(crate) fn epsilon_from_logit(u: f64) -> f64 {
    0.5 * (EPSILON_MIN + EPSILON_MAX) + 0.5 * (EPSILON_MAX - EPSILON_MIN) * (0.5 * u).tanh()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps unconstrained parameters to a valid ensemble.
pub fn reparam_forward(u: &ParamVector, bounds: &AlphaBounds) -> Result<Ensemble> {
    if u.is_empty() || !u.len().is_multiple_of(PARAMS_PER_PRIMITIVE) {
        return Err(Error::InvalidArgument(format!("parameter length {} is invalid", u.len())));
    }
    if !u.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let m = u.primitives();
    let mut primitives = Vec::with_capacity(m);
    let mut gamma = Vec::with_capacity(m);
    for j in 0..m {
        let ua = u.field(j, Field::Alpha);
        let ue = u.field(j, Field::Epsilon);
        let ut = u.field(j, Field::Translation);
        let uq = u.field(j, Field::Quaternion);
        let alpha = std::array::from_fn(|c| bounds.min + (bounds.max - bounds.min) * sigmoid(ua[c]));
        let epsilon = std::array::from_fn(|c| epsilon_from_logit(ue[c]));
        let pose = Pose {
            q: [uq[0], uq[1], uq[2], uq[3]],
            t: Vec3::new(ut[0], ut[1], ut[2]),
        };
        pose.rotation()?;
        primitives.push(Superquadric {
            shape: ShapeParams { alpha, epsilon },
            pose,
        });
        gamma.push(sigmoid(u.field(j, Field::ExistenceLogit)[0]));
    }
    Ok(Ensemble { primitives, gamma })
}

/// Indices of `m` farthest-point samples, starting at `first`.
pub fn farthest_point_sampling(points: &[Vec3], m: usize, first: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(m);
    if points.is_empty() || m == 0 {
        return chosen;
    }
    let mut min_dist = vec![f64::INFINITY; points.len()];
    let mut next = first;
    for _ in 0..m.min(points.len()) {
        chosen.push(next);
        let c = points[next];
        let mut best = (0, -1.0);
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > best.1 {
                best = (i, min_dist[i]);
            }
        }
        next = best.0;
    }
    chosen
}

fn farthest_from_centroid(cloud: &PointCloud) -> usize {
    let c = cloud.centroid();
    let mut best = (0, -1.0);
    for (i, p) in cloud.points.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn init_from(cloud: &PointCloud, m: usize, bounds: &AlphaBounds, first: usize, rotations: &[[f64; 4]]) -> Result<ParamVector> {
    if cloud.len() < m {
        return Err(Error::TooFewPoints {
            needed: m,
            got: cloud.len(),
        });
    }
    bounds.validate()?;
    let centers = farthest_point_sampling(&cloud.points, m, first);
    let size = (0.1 * cloud.bbox_diagonal()).clamp(
        bounds.min + 1e-3 * (bounds.max - bounds.min),
        bounds.max - 1e-3 * (bounds.max - bounds.min),
    );
    let u_alpha = logit((size - bounds.min) / (bounds.max - bounds.min));
    let mut u = ParamVector::zeros(m);
    for (j, &c) in centers.iter().enumerate() {
        u.field_mut(j, Field::Alpha).fill(u_alpha);
        let pose = Pose::centered_at(cloud.points[c], rotations[j])?;
        u.field_mut(j, Field::Translation).copy_from_slice(pose.t.as_slice());
        u.field_mut(j, Field::Quaternion).copy_from_slice(&pose.q);
    }
    Ok(u)
}

/// Farthest-point initialisation: ellipsoids (`ε = 1`) of size
/// `0.1 × bounding-box diagonal`, identity orientation, `γ = 0.5`, centred
/// on FPS points starting from the point farthest from the centroid.
pub fn init_ensemble(cloud: &PointCloud, m: usize, bounds: &AlphaBounds) -> Result<ParamVector> {
    init_from(cloud, m, bounds, farthest_from_centroid(cloud), &vec![[1.0, 0.0, 0.0, 0.0]; m])
}

/// Randomised variant used for restarts: FPS from a random first point and
/// uniformly random orientations.
pub fn init_ensemble_seeded<R: Rng>(cloud: &PointCloud, m: usize, bounds: &AlphaBounds, rng: &mut R) -> Result<ParamVector> {
    if cloud.is_empty() {
        return Err(Error::TooFewPoints { needed: m, got: 0 });
    }
    let first = rng.random_range(0..cloud.len());
    let rotations: Vec<[f64; 4]> = (0..m).map(|_| random_unit_quaternion(rng)).collect();
    init_from(cloud, m, bounds, first, &rotations)
}

/// Rotations whose local axes are the cloud's principal axes, in the three
/// cyclic assignments of principal axes to local `(x, y, z)`.
pub fn principal_frames(cloud: &PointCloud) -> [[f64; 4]; 3] {
    let c = cloud.centroid();
    let mut cov = Mat3::zeros();
    for p in &cloud.points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes: [Vec3; 3] = order.map(|i| eig.eigenvectors.column(i).into_owned());
    if axes[0].cross(&axes[1]).dot(&axes[2]) < 0.0 {
        axes[2] = -axes[2];
    }
    std::array::from_fn(|shift| {
        let rows = [axes[shift % 3], axes[(shift + 1) % 3], axes[(shift + 2) % 3]];
        let m = Mat3::from_rows(&rows.map(|r| r.transpose()));
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        [q.w, q.i, q.j, q.k]
    })
}

/// Initial parameters for restart `restart`: the canonical initialisation
/// for restart 0, principal-axis orientations for restarts 1 to 3 and
/// uniformly random orientations afterwards. Restarts after the first also
/// start farthest-point sampling from a random point.
pub fn init_for_restart<R: Rng>(
    cloud: &PointCloud,
    m: usize,
    bounds: &AlphaBounds,
    restart: usize,
    rng: &mut R,
) -> Result<ParamVector> {
    match restart {
        0 => init_ensemble(cloud, m, bounds),
        1..=3 => {
            if cloud.is_empty() {
                return Err(Error::TooFewPoints { needed: m, got: 0 });
            }
            let first = rng.random_range(0..cloud.len());
            init_from(cloud, m, bounds, first, &vec![principal_frames(cloud)[restart - 1]; m])
        }
        _ => init_ensemble_seeded(cloud, m, bounds, rng),
    }
}

/// Uniform on SO(3) (Shoemake's method).
fn random_unit_quaternion<R: Rng>(rng: &mut R) -> [f64; 4] {
    use std::f64::consts::TAU;
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    [b * (TAU * u3).cos(), a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin()]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub l_px: f64,
    pub l_xp: f64,
    pub l_parsimony: f64,
    pub l_total: f64,
    pub sum_gamma: f64,
    pub active: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FitTrace {
    pub records: Vec<TraceRecord>,
}

const TRACE_THRESHOLD: f64 = 0.5;

impl TraceRecord {
    fn new(iter: usize, report: &LossReport, gamma: &[f64]) -> Self {
        Self {
            iter,
            l_px: report.l_px,
            l_xp: report.l_xp,
            l_parsimony: report.l_parsimony,
            l_total: report.l_total,
            sum_gamma: gamma.iter().sum(),
            active: gamma.iter().filter(|&&g| g >= TRACE_THRESHOLD).count(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub ensemble: Ensemble,
    pub params: ParamVector,
    pub trace: FitTrace,
    /// Loss of the returned parameters on the whole input cloud.
    pub report: LossReport,
    /// Index of the selected restart.
    pub restart: usize,
    /// Restarts aborted because of a non-finite loss.
    pub failed_restarts: Vec<usize>,
}

/// Up to `n` points of `cloud`, chosen without replacement.
pub fn subsample_cloud<R: Rng>(cloud: &PointCloud, n: usize, rng: &mut R) -> PointCloud {
    if cloud.len() <= n {
        return cloud.clone();
    }
    let mut idx = sample_indices(rng, cloud.len(), n).into_vec();
    idx.sort_unstable();
    PointCloud {
        points: idx.iter().map(|&i| cloud.points[i]).collect(),
        normals: cloud.normals.as_ref().map(|ns| idx.iter().map(|&i| ns[i]).collect()),
    }
}

fn gamma_of(u: &ParamVector) -> Vec<f64> {
    (0..u.primitives())
        .map(|j| sigmoid(u.field(j, Field::ExistenceLogit)[0]))
        .collect()
}

struct RestartResult {
    params: ParamVector,
    trace: FitTrace,
    report: LossReport,
}

fn grids_at(u: &ParamVector, cfg: &FitConfig, rng: &mut ChaCha8Rng) -> Result<Vec<AngleGrid>> {
    let grids = Objective::grids_for(u, &cfg.alpha_bounds, cfg.k, cfg.sampling_mode)?;
    Ok(if cfg.resample_each_iter {
        grids.iter().map(|g| g.jittered(rng)).collect()
    } else {
        grids
    })
}

fn run_restart(cloud: &PointCloud, cfg: &FitConfig, restart: usize) -> Result<RestartResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let mut target = subsample_cloud(cloud, cfg.n, &mut rng);
    let mut u = init_for_restart(&target, cfg.max_prims, &cfg.alpha_bounds, restart, &mut rng)?;
    let gamma_mask: Vec<bool> = (0..u.len())
        .map(|i| ParamVector::coord(i).field == Field::ExistenceLogit)
        .collect();

    let mut adam = AdamState::new(u.len());
    let mut trace = FitTrace::default();
    let total = cfg.iters_main + cfg.iters_gamma;
    for iter in 0..total {
        if cfg.redraw_target && iter > 0 && cloud.len() > cfg.n {
            target = subsample_cloud(cloud, cfg.n, &mut rng);
        }
        let objective = Objective::new(&target, cfg.loss, cfg.alpha_bounds, grids_at(&u, cfg, &mut rng)?)?;
        let (report, mut grad) = objective.value_and_gradient(&u)?;
        if iter % cfg.trace_every == 0 {
            trace.records.push(TraceRecord::new(iter, &report, &gamma_of(&u)));
        }
        let gamma_only = iter >= cfg.iters_main;
        if gamma_only {
            for (g, &keep) in grad.0.iter_mut().zip(&gamma_mask) {
                if !keep {
                    *g = 0.0;
                }
            }
        }
        let update = adam_step_in_place(&mut adam, &grad.0, &cfg.adam)?;
        for ((p, d), &keep) in u.0.iter_mut().zip(&update).zip(&gamma_mask) {
            if !gamma_only || keep {
                *p += d;
            }
        }
        if !u.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
    }
    let objective = Objective::new(
        cloud,
        cfg.loss,
        cfg.alpha_bounds,
        Objective::grids_for(&u, &cfg.alpha_bounds, cfg.k, cfg.sampling_mode)?,
    )?;
    let report = objective.value(&u)?;
    trace.records.push(TraceRecord::new(total, &report, &gamma_of(&u)));
    Ok(RestartResult { params: u, trace, report })
}

/// Fits `cfg.max_prims` primitives to `cloud`, returning the restart with
/// the lowest final total loss.
pub fn fit(cloud: &PointCloud, cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let results = par::map_range(cfg.restarts, |r| run_restart(cloud, cfg, r));
    let mut failed = Vec::new();
    let mut best: Option<(usize, RestartResult)> = None;
    for (r, result) in results.into_iter().enumerate() {
        match result {
            Ok(res) => {
                if best.as_ref().is_none_or(|(_, b)| res.report.l_total < b.report.l_total) {
                    best = Some((r, res));
                }
            }
            Err(Error::NonFiniteLoss) => failed.push(r),
            Err(e) => return Err(e),
        }
    }
    let (restart, res) = best.ok_or(Error::AllRestartsFailed(cfg.restarts))?;
    Ok(FitOutcome {
        ensemble: reparam_forward(&res.params, &cfg.alpha_bounds)?,
        params: res.params,
        trace: res.trace,
        report: res.report,
        restart,
        failed_restarts: failed,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::geometry::quat_to_rotmat;

    #[test]
    fn reparam_midpoints_and_limits() {
        let mut u = ParamVector::zeros(1);
        u.field_mut(0, Field::Quaternion)[0] = 1.0;
        let e = reparam_forward(&u, &AlphaBounds::default()).unwrap();
        assert_eq!(e.primitives[0].shape.epsilon, [1.0, 1.0]);
        assert_eq!(e.gamma, vec![0.5]);
        u.field_mut(0, Field::Epsilon).copy_from_slice(&[60.0, -60.0]);
        let e = reparam_forward(&u, &AlphaBounds::default()).unwrap();
        let [e1, e2] = e.primitives[0].shape.epsilon;
        assert!((e1 - 1.9).abs() < 1e-12 && (e2 - 0.1).abs() < 1e-12);
        u.field_mut(0, Field::Quaternion).fill(0.0);
        assert!(matches!(reparam_forward(&u, &AlphaBounds::default()), Err(Error::ZeroQuaternion)));
    }

    proptest! {
        #[test]
        fn reparam_is_always_valid(values in prop::collection::vec(-30.0f64..30.0, 13..=39)) {
            let m = values.len() / PARAMS_PER_PRIMITIVE;
            let mut u = ParamVector(values[..m * PARAMS_PER_PRIMITIVE].to_vec());
            for j in 0..m {
                u.field_mut(j, Field::Quaternion)[0] += 50.0;
            }
            let e = reparam_forward(&u, &AlphaBounds::default()).unwrap();
            prop_assert!(e.validate().is_ok());
        }
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let cfg = AdamConfig::default();
        let grad = [3.0, -0.01, 1e-4, -250.0];
        let (state, update) = adam_step(&AdamState::new(4), &grad, &cfg).unwrap();
        assert_eq!(state.step, 1);
        for (d, g) in update.iter().zip(grad) {
            let expected = -cfg.lr * g.signum();
            assert!(((d - expected) / expected).abs() < 1e-3, "{d} vs {expected}");
        }
    }

    #[test]
    fn adam_zero_gradient_never_moves() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(3);
        for step in 1..=50 {
            let (next, update) = adam_step(&state, &[0.0; 3], &cfg).unwrap();
            assert_eq!(next.step, step);
            assert!(update.iter().all(|&d| d == 0.0));
            state = next;
        }
        assert!(adam_step(&state, &[0.0; 2], &cfg).is_err());
    }

    #[test]
    fn adam_matches_hand_recurrence() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(1);
        let grads = [1.0, -2.0, 0.5];
        let (mut m, mut v) = (0.0, 0.0);
        for (t, g) in grads.iter().enumerate() {
            let (next, update) = adam_step(&state, &[*g], &cfg).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let t = (t + 1) as i32;
            let expected = -cfg.lr * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((update[0] - expected).abs() <= 1e-12 * expected.abs());
            state = next;
        }
    }

    fn blob(n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        PointCloud::new(
            (0..n)
                .map(|_| Vec3::new(rng.random_range(-0.5..0.5f64), rng.random_range(-0.2..0.2f64), rng.random_range(-0.1..0.1f64)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn init_uses_farthest_point_and_unit_epsilon() {
        let cloud = blob(300);
        let bounds = AlphaBounds::default();
        let u = init_ensemble(&cloud, 1, &bounds).unwrap();
        let e = reparam_forward(&u, &bounds).unwrap();
        e.validate().unwrap();
        let far = cloud.points[farthest_from_centroid(&cloud)];
        assert!((e.primitives[0].pose.center().unwrap() - far).norm() < 1e-12);
        assert_eq!(e.primitives[0].shape.epsilon, [1.0, 1.0]);
        assert_eq!(e.gamma, vec![0.5]);
        let expected = 0.1 * cloud.bbox_diagonal();
        for a in e.primitives[0].shape.alpha {
            assert!((a - expected).abs() < 1e-9);
        }

        let u5 = init_ensemble(&cloud, 5, &bounds).unwrap();
        let e5 = reparam_forward(&u5, &bounds).unwrap();
        let centers: Vec<Vec3> = e5.primitives.iter().map(|p| p.pose.center().unwrap()).collect();
        for a in 0..5 {
            for b in a + 1..5 {
                assert!((centers[a] - centers[b]).norm() > 0.1);
            }
        }
        assert!(matches!(
            init_ensemble(&blob(3), 4, &bounds),
            Err(Error::TooFewPoints { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn seeded_init_is_deterministic_and_rotated() {
        let cloud = blob(100);
        let bounds = AlphaBounds::default();
        let a = init_ensemble_seeded(&cloud, 2, &bounds, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = init_ensemble_seeded(&cloud, 2, &bounds, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let e = reparam_forward(&a, &bounds).unwrap();
        let r = quat_to_rotmat(e.primitives[0].pose.q).unwrap();
        assert!((r - crate::geometry::Mat3::identity()).norm() > 1e-3);
    }

    #[test]
    fn principal_frames_align_local_axes() {
        let cloud = blob(500);
        let frames = principal_frames(&cloud);
        // the blob is longest along world x, then y, then z
        let expected_local_of_x = [0, 2, 1];
        for (shift, q) in frames.iter().enumerate() {
            let r = quat_to_rotmat(*q).unwrap();
            assert!((r * r.transpose() - Mat3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            let local = r * Vec3::x();
            assert!(local[expected_local_of_x[shift]].abs() > 0.99, "{shift}: {local:?}");
        }
    }

    #[test]
    fn fps_spreads_points() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(farthest_point_sampling(&pts, 3, 0), vec![0, 9, 4]);
    }

    fn quick_config() -> FitConfig {
        FitConfig {
            max_prims: 2,
            iters_main: 30,
            iters_gamma: 10,
            restarts: 2,
            seed: 11,
            k: 40,
            n: 150,
            trace_every: 5,
            ..FitConfig::default()
        }
    }

    #[test]
    fn fit_is_reproducible_and_traces_finite_losses() {
        let cloud = blob(400);
        let cfg = quick_config();
        let a = fit(&cloud, &cfg).unwrap();
        let b = fit(&cloud, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
        let iters: Vec<usize> = a.trace.records.iter().map(|r| r.iter).collect();
        assert!(iters.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*iters.last().unwrap(), 40);
        assert!(a.trace.records.iter().all(|r| r.l_total.is_finite()));
        assert_eq!(a.report.l_total, a.trace.records.last().unwrap().l_total);
    }

    #[test]
    fn gamma_phase_leaves_shape_and_pose_untouched() {
        let cloud = blob(200);
        let phase1 = FitConfig {
            iters_gamma: 0,
            restarts: 1,
            ..quick_config()
        };
        let both = FitConfig {
            iters_gamma: 25,
            restarts: 1,
            ..quick_config()
        };
        let a = fit(&cloud, &phase1).unwrap().params;
        let b = fit(&cloud, &both).unwrap().params;
        let mut gamma_moved = false;
        for (i, (x, y)) in a.0.iter().zip(&b.0).enumerate() {
            if ParamVector::coord(i).field == Field::ExistenceLogit {
                gamma_moved |= x != y;
            } else {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert!(gamma_moved);
    }

    #[test]
    fn fit_reduces_loss_on_a_blob() {
        let cloud = blob(500);
        let cfg = FitConfig {
            max_prims: 1,
            iters_main: 300,
            iters_gamma: 0,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            k: 60,
            n: 300,
            ..FitConfig::default()
        };
        let out = fit(&cloud, &cfg).unwrap();
        let first = out.trace.records.first().unwrap().l_total;
        assert!(out.report.l_total < 0.5 * first, "{first} -> {}", out.report.l_total);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cloud = blob(10);
        for cfg in [
            FitConfig { restarts: 0, ..FitConfig::default() },
            FitConfig { iters_main: 0, ..FitConfig::default() },
            FitConfig {
                alpha_bounds: AlphaBounds { min: 0.5, max: 0.1 },
                ..FitConfig::default()
            },
            FitConfig {
                adam: AdamConfig { lr: 0.0, ..AdamConfig::default() },
                ..FitConfig::default()
            },
        ] {
            assert!(matches!(fit(&cloud, &cfg), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn subsample_without_replacement() {
        let cloud = blob(50);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sub = subsample_cloud(&cloud, 20, &mut rng);
        assert_eq!(sub.len(), 20);
        let mut seen = std::collections::HashSet::new();
        for p in &sub.points {
            assert!(seen.insert(p.map(f64::to_bits).as_slice().to_vec()));
            assert!(cloud.points.contains(p));
        }
        assert_eq!(subsample_cloud(&cloud, 80, &mut rng).len(), 50);
    }
}
