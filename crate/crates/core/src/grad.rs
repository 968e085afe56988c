//! Closed-form reverse-mode gradient of the total loss with respect to the
//! unconstrained parameter vector, and a central-difference oracle.
//!
//! Angle grids are held fixed while differentiating, so the surface samples
//! are smooth functions of `(α, ε)`. Nearest-neighbour minima and the
//! per-point sort route the gradient to the selected branch, lowest index
//! first on ties.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{epsilon_from_logit, reparam_forward, AlphaBounds};
use crate::geometry::{cos_sin, normalize_quat, rotmat_unit, rotmat_unit_partials, signed_pow, Mat3, Vec3, EPSILON_MAX, EPSILON_MIN};
use crate::io::PointCloud;
use crate::loss::{
    nearest_maps, point_expectation, point_expectation_grad, report_from_deltas, DistanceMatrix,
    DistanceRole, LossConfig, LossReport, NearestMaps,
};
use crate::par;
use crate::sampler::{angle_grid, AngleGrid, SamplingMode};

pub const PARAMS_PER_PRIMITIVE: usize = 13;

/// Parameter groups within one primitive's slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Alpha,
    Epsilon,
    Translation,
    Quaternion,
    ExistenceLogit,
}

impl Field {
    pub const ALL: [Field; 5] = [
        Field::Alpha,
        Field::Epsilon,
        Field::Translation,
        Field::Quaternion,
        Field::ExistenceLogit,
    ];

    pub const fn offset(self) -> usize {
        match self {
            Field::Alpha => 0,
            Field::Epsilon => 3,
            Field::Translation => 5,
            Field::Quaternion => 8,
            Field::ExistenceLogit => 12,
        }
    }

    pub const fn width(self) -> usize {
        match self {
            Field::Alpha | Field::Translation => 3,
            Field::Epsilon => 2,
            Field::Quaternion => 4,
            Field::ExistenceLogit => 1,
        }
    }
}

/// Location of one entry of a [`ParamVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCoord {
    pub primitive: usize,
    pub field: Field,
    pub component: usize,
}

/// Flat unconstrained parameters, 13 per primitive:
/// size logits (3), shape logits (2), translation (3), quaternion (4),
/// existence logit (1).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(primitives: usize) -> Self {
        Self(vec![0.0; primitives * PARAMS_PER_PRIMITIVE])
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(PARAMS_PER_PRIMITIVE) {
            return Err(Error::InvalidArgument(format!(
                "parameter length {} is not a positive multiple of {PARAMS_PER_PRIMITIVE}",
                values.len()
            )));
        }
        Ok(Self(values))
    }

    pub fn primitives(&self) -> usize {
        self.0.len() / PARAMS_PER_PRIMITIVE
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index(primitive: usize, field: Field, component: usize) -> usize {
        debug_assert!(component < field.width());
        primitive * PARAMS_PER_PRIMITIVE + field.offset() + component
    }

    pub fn coord(index: usize) -> ParamCoord {
        let primitive = index / PARAMS_PER_PRIMITIVE;
        let local = index % PARAMS_PER_PRIMITIVE;
        let field = *Field::ALL
            .iter()
            .rev()
            .find(|f| f.offset() <= local)
            .expect("offset 0 exists");
        ParamCoord {
            primitive,
            field,
            component: local - field.offset(),
        }
    }

    pub fn field(&self, primitive: usize, field: Field) -> &[f64] {
        let start = Self::index(primitive, field, 0);
        &self.0[start..start + field.width()]
    }

    pub fn field_mut(&mut self, primitive: usize, field: Field) -> &mut [f64] {
        let start = Self::index(primitive, field, 0);
        &mut self.0[start..start + field.width()]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn ln_abs(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.abs().ln()
    }
}

/// Loss as a function of the parameter vector for fixed target points and
/// fixed per-primitive angle grids.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub cloud: &'a PointCloud,
    pub loss: LossConfig,
    pub bounds: AlphaBounds,
    pub grids: Vec<AngleGrid>,
}

struct PrimitiveTape {
    quat: [f64; 4],
    quat_norm: f64,
    gamma: f64,
    local: Vec<Vec3>,
    samples: Vec<Vec3>,
    maps: NearestMaps,
}

struct Tape {
    prims: Vec<PrimitiveTape>,
    report: LossReport,
    /// `(Δ, m)` pairs per point, sorted as in the forward pass.
    orders: Vec<Vec<(f64, usize)>>,
}

/// Which branch every min, sort and hinge took; equal signatures mean the
/// loss is one smooth piece between the two parameter vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchSignature {
    nearest: Vec<(Vec<usize>, Vec<usize>)>,
    orders: Vec<Vec<usize>>,
    hinge_active: bool,
}

impl<'a> Objective<'a> {
    pub fn new(cloud: &'a PointCloud, loss: LossConfig, bounds: AlphaBounds, grids: Vec<AngleGrid>) -> Result<Self> {
        loss.validate()?;
        let k = grids.first().map_or(0, AngleGrid::len);
        if k == 0 || grids.iter().any(|g| g.len() != k) {
            return Err(Error::InvalidArgument("grids must be non-empty and equally sized".into()));
        }
        Ok(Self {
            cloud,
            loss,
            bounds,
            grids,
        })
    }

    /// Arc-length grids built from the shapes encoded in `u`.
    pub fn grids_for(u: &ParamVector, bounds: &AlphaBounds, k: usize, mode: SamplingMode) -> Result<Vec<AngleGrid>> {
        let ensemble = reparam_forward(u, bounds)?;
        ensemble
            .primitives
            .iter()
            .map(|sq| angle_grid(&sq.shape, k, mode))
            .collect()
    }

    fn check(&self, u: &ParamVector) -> Result<()> {
        if u.primitives() != self.grids.len() || !u.len().is_multiple_of(PARAMS_PER_PRIMITIVE) {
            return Err(Error::InvalidArgument(format!(
                "{} primitives in parameters but {} grids",
                u.primitives(),
                self.grids.len()
            )));
        }
        if !u.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok(())
    }

    fn forward(&self, u: &ParamVector) -> Result<Tape> {
        self.check(u)?;
        let ensemble = reparam_forward(u, &self.bounds)?;
        let m = ensemble.len();
        let n = self.cloud.len();
        let k = self.grids[0].len();

        let prims = par::map_range(m, |j| -> Result<PrimitiveTape> {
            let sq = &ensemble.primitives[j];
            let raw = u.field(j, Field::Quaternion);
            let quat_norm = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
            let quat = normalize_quat([raw[0], raw[1], raw[2], raw[3]])?;
            let rotation = rotmat_unit(quat[0], quat[1], quat[2], quat[3]);
            let t = sq.pose.t;
            let local: Vec<Vec3> = self.cloud.points.iter().map(|x| rotation * x + t).collect();
            let samples = self.grids[j].points(&sq.shape);
            let maps = nearest_maps(&local, &samples);
            Ok(PrimitiveTape {
                quat,
                quat_norm,
                gamma: ensemble.gamma[j],
                local,
                samples,
                maps,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let to_cloud = DistanceMatrix::new(
            m,
            k,
            prims.iter().flat_map(|p| p.maps.to_cloud.iter().map(|e| e.1)).collect(),
            DistanceRole::PrimToCloud,
        )?;
        let to_prim = DistanceMatrix::new(
            m,
            n,
            prims.iter().flat_map(|p| p.maps.to_samples.iter().map(|e| e.1)).collect(),
            DistanceRole::CloudToPrim,
        )?;
        let report = report_from_deltas(&to_cloud, &to_prim, &ensemble.gamma, &self.loss)?;
        let gamma = &ensemble.gamma;
        let orders = par::map_range(n, |i| {
            let mut pairs: Vec<(f64, usize)> = (0..m).map(|j| (to_prim.get(j, i), j)).collect();
            point_expectation(&mut pairs, gamma);
            pairs
        });
        Ok(Tape { prims, report, orders })
    }

    pub fn value(&self, u: &ParamVector) -> Result<LossReport> {
        Ok(self.forward(u)?.report)
    }

    pub fn branch_signature(&self, u: &ParamVector) -> Result<BranchSignature> {
        let tape = self.forward(u)?;
        let sum_gamma: f64 = tape.prims.iter().map(|p| p.gamma).sum();
        Ok(BranchSignature {
            nearest: tape
                .prims
                .iter()
                .map(|p| {
                    (
                        p.maps.to_cloud.iter().map(|e| e.0).collect(),
                        p.maps.to_samples.iter().map(|e| e.0).collect(),
                    )
                })
                .collect(),
            orders: tape.orders.iter().map(|o| o.iter().map(|e| e.1).collect()).collect(),
            hinge_active: self.loss.alpha - self.loss.alpha * sum_gamma > 0.0,
        })
    }

    pub fn value_and_gradient(&self, u: &ParamVector) -> Result<(LossReport, ParamVector)> {
        let tape = self.forward(u)?;
        let cfg = &self.loss;
        let m = tape.prims.len();
        let n = self.cloud.len();
        let k = self.grids[0].len();
        let gamma: Vec<f64> = tape.prims.iter().map(|p| p.gamma).collect();

        // Cloud-to-primitive: per-point weights on Δᵐ_i and γ.
        let xp_scale = cfg.w_xp * if cfg.normalize_by_counts { 1.0 / n as f64 } else { 1.0 };
        let point_grads = par::map_slice(&tape.orders, |pairs| {
            let mut d_delta = vec![0.0; m];
            let mut d_gamma = vec![0.0; m];
            point_expectation_grad(pairs, &gamma, xp_scale, &mut d_delta, &mut d_gamma);
            (d_delta, d_gamma)
        });

        // Loss gradient wrt γ.
        let mut d_gamma: Vec<f64> = tape
            .report
            .per_primitive_px
            .iter()
            .map(|l| cfg.w_px * l)
            .collect();
        for (_, dg) in &point_grads {
            for j in 0..m {
                d_gamma[j] += dg[j];
            }
        }
        let sum_gamma: f64 = gamma.iter().sum();
        let hinge = if cfg.alpha - cfg.alpha * sum_gamma > 0.0 { -cfg.alpha } else { 0.0 };
        let sparsity = if sum_gamma > 0.0 { cfg.beta / (2.0 * sum_gamma.sqrt()) } else { 0.0 };
        for g in &mut d_gamma {
            *g += hinge + sparsity;
        }

        let grads = par::map_range(m, |j| {
            self.primitive_gradient(u, j, &tape.prims[j], &point_grads, d_gamma[j], cfg.w_px * gamma[j] / k as f64)
        });
        let mut out = ParamVector::zeros(m);
        for (j, g) in grads.into_iter().enumerate() {
            out.0[j * PARAMS_PER_PRIMITIVE..(j + 1) * PARAMS_PER_PRIMITIVE].copy_from_slice(&g);
        }
        Ok((tape.report, out))
    }

    fn primitive_gradient(
        &self,
        u: &ParamVector,
        j: usize,
        prim: &PrimitiveTape,
        point_grads: &[(Vec<f64>, Vec<f64>)],
        d_gamma: f64,
        px_weight: f64,
    ) -> [f64; PARAMS_PER_PRIMITIVE] {
        let n = prim.local.len();
        let mut g_local = vec![Vec3::zeros(); n];
        let mut g_sample = vec![Vec3::zeros(); prim.samples.len()];

        for (kk, &(i, d)) in prim.maps.to_cloud.iter().enumerate() {
            if d > 0.0 {
                let dir = (prim.local[i] - prim.samples[kk]) / d;
                g_local[i] += dir * px_weight;
                g_sample[kk] -= dir * px_weight;
            }
        }
        for (i, &(kk, d)) in prim.maps.to_samples.iter().enumerate() {
            let w = point_grads[i].0[j];
            if d > 0.0 && w != 0.0 {
                let dir = (prim.local[i] - prim.samples[kk]) / d;
                g_local[i] += dir * w;
                g_sample[kk] -= dir * w;
            }
        }

        // local = R·x + t
        let mut g_t = Vec3::zeros();
        let mut g_rot = Mat3::zeros();
        for (g, x) in g_local.iter().zip(&self.cloud.points) {
            g_t += g;
            g_rot += g * x.transpose();
        }

        // samples = r(η, ω; α, ε) on the fixed grid
        let alpha_eps = {
            let ua = u.field(j, Field::Alpha);
            let ue = u.field(j, Field::Epsilon);
            (ua, ue)
        };
        let (ua, ue) = alpha_eps;
        let (e1, e2) = (epsilon_from_logit(ue[0]), epsilon_from_logit(ue[1]));
        let grid = &self.grids[j];
        let mut g_alpha = [0.0; 3];
        let mut g_eps = [0.0; 2];
        for (kk, g) in g_sample.iter().enumerate() {
            if g.x == 0.0 && g.y == 0.0 && g.z == 0.0 {
                continue;
            }
            let (eta, omega) = (grid.etas[kk], grid.omegas[kk]);
            let ((ce, se), (cw, sw)) = (cos_sin(eta), cos_sin(omega));
            let (pce, pse) = (signed_pow(ce, e1), signed_pow(se, e1));
            let (pcw, psw) = (signed_pow(cw, e2), signed_pow(sw, e2));
            let y = prim.samples[kk];
            g_alpha[0] += g.x * pce * pcw;
            g_alpha[1] += g.y * pce * psw;
            g_alpha[2] += g.z * pse;
            let (lce, lse, lcw, lsw) = (ln_abs(ce), ln_abs(se), ln_abs(cw), ln_abs(sw));
            g_eps[0] += (g.x * y.x + g.y * y.y) * lce + g.z * y.z * lse;
            g_eps[1] += g.x * y.x * lcw + g.y * y.y * lsw;
        }

        let mut out = [0.0; PARAMS_PER_PRIMITIVE];
        let span = self.bounds.max - self.bounds.min;
        for c in 0..3 {
            let s = sigmoid(ua[c]);
            out[Field::Alpha.offset() + c] = g_alpha[c] * span * s * (1.0 - s);
        }
        for c in 0..2 {
            let s = sigmoid(ue[c]);
            out[Field::Epsilon.offset() + c] = g_eps[c] * (EPSILON_MAX - EPSILON_MIN) * s * (1.0 - s);
        }
        for c in 0..3 {
            out[Field::Translation.offset() + c] = g_t[c];
        }

        let q = prim.quat;
        let partials = rotmat_unit_partials(q[0], q[1], q[2], q[3]);
        let g_qhat: [f64; 4] = std::array::from_fn(|c| g_rot.component_mul(&partials[c]).sum());
        let radial: f64 = (0..4).map(|c| g_qhat[c] * q[c]).sum();
        for c in 0..4 {
            out[Field::Quaternion.offset() + c] = (g_qhat[c] - q[c] * radial) / prim.quat_norm;
        }
        let ug = u.field(j, Field::ExistenceLogit)[0];
        let s = sigmoid(ug);
        out[Field::ExistenceLogit.offset()] = d_gamma * s * (1.0 - s);
        out
    }

    /// Central differences of [`Objective::value`], coordinate by coordinate.
    pub fn finite_difference_gradient(&self, u: &ParamVector, h: f64) -> Result<ParamVector> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("step {h} must be positive")));
        }
        let parts = par::map_range(u.len(), |c| -> Result<f64> {
            let mut plus = u.clone();
            let mut minus = u.clone();
            plus.0[c] += h;
            minus.0[c] -= h;
            let fp = self.value(&plus)?.l_total;
            let fm = self.value(&minus)?.l_total;
            Ok((fp - fm) / (2.0 * h))
        });
        Ok(ParamVector(parts.into_iter().collect::<Result<Vec<_>>>()?))
    }

    /// Whether every coordinate can move by `±radius` without any min,
    /// sort or hinge switching branch.
    pub fn is_smooth_at(&self, u: &ParamVector, radius: f64) -> Result<bool> {
        let base = self.branch_signature(u)?;
        let same = par::map_range(u.len(), |c| -> Result<bool> {
            for sign in [-1.0, 1.0] {
                let mut v = u.clone();
                v.0[c] += sign * radius;
                if self.branch_signature(&v)? != base {
                    return Ok(false);
                }
            }
            Ok(true)
        });
        Ok(same.into_iter().collect::<Result<Vec<_>>>()?.into_iter().all(|b| b))
    }
}

/// Gradient of the total loss at `u`.
pub fn loss_gradient(
    u: &ParamVector,
    cloud: &PointCloud,
    cfg: &LossConfig,
    bounds: &AlphaBounds,
    grids: &[AngleGrid],
) -> Result<ParamVector> {
    let objective = Objective::new(cloud, *cfg, *bounds, grids.to_vec())?;
    Ok(objective.value_and_gradient(u)?.1)
}

/// Central-difference gradient of the same forward function.
pub fn finite_difference_gradient(
    u: &ParamVector,
    cloud: &PointCloud,
    cfg: &LossConfig,
    bounds: &AlphaBounds,
    grids: &[AngleGrid],
    h: f64,
) -> Result<ParamVector> {
    Objective::new(cloud, *cfg, *bounds, grids.to_vec())?.finite_difference_gradient(u, h)
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
    pub worst_index: ParamCoord,
}

/// Relative error `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

pub fn gradient_check(objective: &Objective<'_>, u: &ParamVector, h: f64) -> Result<GradReport> {
    let (_, analytic) = objective.value_and_gradient(u)?;
    let numeric = objective.finite_difference_gradient(u, h)?;
    let (worst, max_rel_err) = analytic
        .0
        .iter()
        .zip(&numeric.0)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradReport {
        analytic: analytic.0,
        numeric: numeric.0,
        max_rel_err,
        worst_index: ParamVector::coord(worst),
    })
}

/// A random, well-conditioned gradient-check instance.
#[derive(Debug, Clone)]
pub struct GradTrial {
    pub params: ParamVector,
    pub cloud: PointCloud,
    pub grids: Vec<AngleGrid>,
    pub loss: LossConfig,
    pub bounds: AlphaBounds,
}

impl GradTrial {
    pub fn objective(&self) -> Objective<'_> {
        Objective {
            cloud: &self.cloud,
            loss: self.loss,
            bounds: self.bounds,
            grids: self.grids.clone(),
        }
    }
}

/// Draws `primitives` superquadrics with `ε ∈ (0.3, 1.7)` around the origin,
/// a uniform cloud of `points` in the unit cube, and `k`-point grids.
pub fn random_trial<R: Rng>(rng: &mut R, primitives: usize, points: usize, k: usize) -> Result<GradTrial> {
    let bounds = AlphaBounds::default();
    let mut u = ParamVector::zeros(primitives);
    for j in 0..primitives {
        for v in u.field_mut(j, Field::Alpha) {
            *v = rng.random_range(-1.5..0.5);
        }
        for v in u.field_mut(j, Field::Epsilon) {
            *v = rng.random_range(-2.0..2.0);
        }
        for v in u.field_mut(j, Field::Translation) {
            *v = rng.random_range(-0.3..0.3);
        }
        let q = u.field_mut(j, Field::Quaternion);
        loop {
            for v in q.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            if q.iter().map(|c| c * c).sum::<f64>() > 0.25 {
                break;
            }
        }
        u.field_mut(j, Field::ExistenceLogit)[0] = rng.random_range(-2.0..2.0);
    }
    let cloud = PointCloud::new(
        (0..points)
            .map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
            .collect(),
    )?;
    let grids = Objective::grids_for(&u, &bounds, k, SamplingMode::UniformArc)?;
    Ok(GradTrial {
        params: u,
        cloud,
        grids,
        loss: LossConfig::default(),
        bounds,
    })
}

/// Outcome of a batch of gradient checks on smooth random instances.
#[derive(Debug, Clone, Serialize)]
pub struct GradSuiteReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst: Option<ParamCoord>,
}

/// Draws instances until `trials` smooth ones have been checked (or
/// `max_attempts` drawn). Instances within `10·h` of a branch switch are
/// skipped and counted.
pub fn gradient_check_suite<R: Rng>(
    rng: &mut R,
    trials: usize,
    max_primitives: usize,
    points: usize,
    k: usize,
    h: f64,
    max_attempts: usize,
) -> Result<GradSuiteReport> {
    let mut report = GradSuiteReport {
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut attempts = 0;
    while report.checked < trials && attempts < max_attempts {
        attempts += 1;
        let m = rng.random_range(1..=max_primitives.max(1));
        let trial = random_trial(rng, m, points, k)?;
        let objective = trial.objective();
        if !objective.is_smooth_at(&trial.params, 10.0 * h)? {
            report.skipped += 1;
            continue;
        }
        let r = gradient_check(&objective, &trial.params, h)?;
        report.checked += 1;
        if r.max_rel_err >= report.max_rel_err {
            report.max_rel_err = r.max_rel_err;
            report.worst = Some(r.worst_index);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn layout_covers_every_slot_once() {
        let mut seen = [false; PARAMS_PER_PRIMITIVE];
        for f in Field::ALL {
            for c in 0..f.width() {
                let i = ParamVector::index(0, f, c);
                assert!(!seen[i]);
                seen[i] = true;
                assert_eq!(ParamVector::coord(i + 2 * PARAMS_PER_PRIMITIVE), ParamCoord {
                    primitive: 2,
                    field: f,
                    component: c
                });
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert!(ParamVector::from_vec(vec![0.0; 12]).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn matches_finite_differences_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let report = gradient_check_suite(&mut rng, 5, 3, 60, 30, DEFAULT_FD_STEP, 200).unwrap();
        assert_eq!(report.checked, 5);
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }

    fn parsimony_only(sum_target: f64) -> (PointCloud, ParamVector, Objective<'static>) {
        let cloud: &'static PointCloud =
            Box::leak(Box::new(PointCloud::new(vec![Vec3::new(0.1, 0.2, 0.3)]).unwrap()));
        let mut u = ParamVector::zeros(2);
        // two primitives with γ = sum_target / 2 each
        let g = sum_target / 2.0;
        for j in 0..2 {
            u.field_mut(j, Field::Quaternion)[0] = 1.0;
            u.field_mut(j, Field::ExistenceLogit)[0] = (g / (1.0 - g)).ln();
        }
        let loss = LossConfig {
            w_px: 0.0,
            w_xp: 0.0,
            beta: 0.0,
            ..LossConfig::default()
        };
        let bounds = AlphaBounds::default();
        let grids = Objective::grids_for(&u, &bounds, 20, SamplingMode::UniformArc).unwrap();
        (cloud.clone(), u, Objective::new(cloud, loss, bounds, grids).unwrap())
    }

    #[test]
    fn hinge_gradient_chains_through_sigmoid() {
        let (_, u, obj) = parsimony_only(0.5);
        let (_, g) = obj.value_and_gradient(&u).unwrap();
        let fd = obj.finite_difference_gradient(&u, DEFAULT_FD_STEP).unwrap();
        for j in 0..2 {
            let s = sigmoid(u.field(j, Field::ExistenceLogit)[0]);
            let expected = -s * (1.0 - s);
            let idx = ParamVector::index(j, Field::ExistenceLogit, 0);
            assert!((g.0[idx] - expected).abs() < 1e-15);
            assert!((fd.0[idx] - expected).abs() < 1e-9);
        }
        // shape and pose do not enter a parsimony-only loss
        assert!(g.0.iter().enumerate().all(|(i, v)| {
            ParamVector::coord(i).field == Field::ExistenceLogit || *v == 0.0
        }));
    }

    #[test]
    fn hinge_kink_takes_flat_side() {
        let (_, mut u, obj) = parsimony_only(0.5);
        for j in 0..2 {
            u.field_mut(j, Field::ExistenceLogit)[0] = 0.0; // Σγ = 1 exactly
        }
        let (_, g) = obj.value_and_gradient(&u).unwrap();
        assert!(g.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_gradient_of_px_term_is_primitive_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let trial = random_trial(&mut rng, 3, 40, 25).unwrap();
        let mut obj = trial.objective();
        obj.loss = LossConfig {
            w_px: 1.0,
            w_xp: 0.0,
            alpha: 0.0,
            beta: 0.0,
            normalize_by_counts: true,
        };
        let (report, g) = obj.value_and_gradient(&trial.params).unwrap();
        for j in 0..3 {
            let s = sigmoid(trial.params.field(j, Field::ExistenceLogit)[0]);
            let d_gamma = g.0[ParamVector::index(j, Field::ExistenceLogit, 0)] / (s * (1.0 - s));
            assert!((d_gamma - report.per_primitive_px[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_gradient_points_away_from_target() {
        let cloud = PointCloud::new(vec![Vec3::new(3.0, 0.0, 0.0)]).unwrap();
        let mut u = ParamVector::zeros(1);
        u.field_mut(0, Field::Quaternion)[0] = 1.0;
        u.field_mut(0, Field::ExistenceLogit)[0] = 2.0;
        let bounds = AlphaBounds::default();
        let grids = Objective::grids_for(&u, &bounds, 50, SamplingMode::UniformArc).unwrap();
        let obj = Objective::new(&cloud, LossConfig::default(), bounds, grids).unwrap();
        let (_, g) = obj.value_and_gradient(&u).unwrap();
        let fd = obj.finite_difference_gradient(&u, DEFAULT_FD_STEP).unwrap();
        // local = x + t, so moving the primitive toward +x means t_x < 0:
        // the loss grows with t_x.
        let gt = g.field(0, Field::Translation);
        assert!(gt[0] > 0.0);
        assert!(gt[0].abs() > 10.0 * gt[1].abs().max(gt[2].abs()));
        for c in 0..3 {
            let i = ParamVector::index(0, Field::Translation, c);
            assert!(relative_error(g.0[i], fd.0[i]) < 1e-6 || (g.0[i] - fd.0[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn quaternion_gradient_is_orthogonal_to_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let trial = random_trial(&mut rng, 2, 50, 30).unwrap();
            let obj = trial.objective();
            let (_, g) = obj.value_and_gradient(&trial.params).unwrap();
            for j in 0..2 {
                let q = trial.params.field(j, Field::Quaternion);
                let gq = g.field(j, Field::Quaternion);
                let dot: f64 = q.iter().zip(gq).map(|(a, b)| a * b).sum();
                let scale = q.iter().map(|c| c * c).sum::<f64>().sqrt()
                    * gq.iter().map(|c| c * c).sum::<f64>().sqrt();
                assert!(dot.abs() <= 1e-6 * scale.max(1e-300), "{dot} vs {scale}");
            }
            // rescaling q does not change the loss
            let mut scaled = trial.params.clone();
            for v in scaled.field_mut(0, Field::Quaternion) {
                *v *= 1.7;
            }
            let a = obj.value(&trial.params).unwrap().l_total;
            let b = obj.value(&scaled).unwrap().l_total;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rescale_direction_has_zero_fd_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let trial = random_trial(&mut rng, 1, 50, 30).unwrap();
        let obj = trial.objective();
        let u = &trial.params;
        let q: Vec<f64> = u.field(0, Field::Quaternion).to_vec();
        let h = DEFAULT_FD_STEP;
        let shift = |sign: f64| {
            let mut v = u.clone();
            for (dst, c) in v.field_mut(0, Field::Quaternion).iter_mut().zip(&q) {
                *dst = c * (1.0 + sign * h);
            }
            obj.value(&v).unwrap().l_total
        };
        let slope = (shift(1.0) - shift(-1.0)) / (2.0 * h);
        assert!(slope.abs() < 1e-6, "{slope}");
    }

    #[test]
    fn gradient_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trial = random_trial(&mut rng, 4, 80, 40).unwrap();
        let obj = trial.objective();
        let a = obj.value_and_gradient(&trial.params).unwrap();
        let b = obj.value_and_gradient(&trial.params).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trial = random_trial(&mut rng, 1, 10, 10).unwrap();
        let mut u = trial.params.clone();
        u.0[0] = f64::NAN;
        assert!(matches!(trial.objective().value(&u), Err(Error::NonFiniteLoss)));
        let mut z = trial.params.clone();
        z.field_mut(0, Field::Quaternion).fill(0.0);
        assert!(matches!(trial.objective().value(&z), Err(Error::ZeroQuaternion)));
    }
}
