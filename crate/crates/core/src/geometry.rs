//! Superquadric surfaces, the inside-outside function and rigid poses.
//!
//! A superquadric in its canonical frame is
//!
//! ```text
//! r(η, ω) = [ α1 · cos^ε1(η) · cos^ε2(ω),
//!             α2 · cos^ε1(η) · sin^ε2(ω),
//!             α3 · sin^ε1(η) ]          η ∈ [-π/2, π/2], ω ∈ [-π, π]
//! ```
//!
//! where every fractional power is a signed power `sign(x)·|x|^p`. The pose
//! maps world points into that frame with `T(x) = R(q)·x + t`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const EPSILON_MIN: f64 = 0.1;
pub const EPSILON_MAX: f64 = 1.9;

/// `sign(x)·|x|^p`, with `0^p = 0`.
#[inline]
pub fn signed_pow(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(p)
    }
}

/// Size and shape exponents of one superquadric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    pub alpha: [f64; 3],
    pub epsilon: [f64; 2],
}

impl ShapeParams {
    pub fn new(alpha: [f64; 3], epsilon: [f64; 2]) -> Result<Self> {
        let shape = Self { alpha, epsilon };
        shape.validate()?;
        Ok(shape)
    }

    pub fn sphere(radius: f64) -> Self {
        Self {
            alpha: [radius; 3],
            epsilon: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::InvalidShape(format!("alpha {a} must be positive")));
        }
        if let Some(e) = self
            .epsilon
            .iter()
            .find(|e| !(EPSILON_MIN..=EPSILON_MAX).contains(*e))
        {
            return Err(Error::InvalidShape(format!(
                "epsilon {e} outside [{EPSILON_MIN}, {EPSILON_MAX}]"
            )));
        }
        Ok(())
    }
}

/// `(cos θ, sin θ)` with rounding residue at multiples of π/2 flushed to 0.
#[inline]
pub(crate) fn cos_sin(theta: f64) -> (f64, f64) {
    let flush = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
    (flush(theta.cos()), flush(theta.sin()))
}

/// Point on the surface in the primitive's local frame.
pub fn surface_point(shape: &ShapeParams, eta: f64, omega: f64) -> Vec3 {
    let [a1, a2, a3] = shape.alpha;
    let [e1, e2] = shape.epsilon;
    let (c_eta, s_eta) = cos_sin(eta);
    let (c_omega, s_omega) = cos_sin(omega);
    let ce = signed_pow(c_eta, e1);
    let se = signed_pow(s_eta, e1);
    let cw = signed_pow(c_omega, e2);
    let sw = signed_pow(s_omega, e2);
    Vec3::new(a1 * ce * cw, a2 * ce * sw, a3 * se)
}

/// Inside-outside function: `< 1` inside, `1` on the surface, `> 1` outside.
pub fn implicit_value(shape: &ShapeParams, p: &Vec3) -> f64 {
    let [a1, a2, a3] = shape.alpha;
    let [e1, e2] = shape.epsilon;
    let xy = (p.x / a1).abs().powf(2.0 / e2) + (p.y / a2).abs().powf(2.0 / e2);
    xy.powf(e2 / e1) + (p.z / a3).abs().powf(2.0 / e1)
}

/// Unit quaternion `(w, x, y, z)` to rotation matrix.
pub fn quat_to_rotmat(q: [f64; 4]) -> Result<Mat3> {
    let [w, x, y, z] = normalize_quat(q)?;
    Ok(rotmat_unit(w, x, y, z))
}

pub(crate) fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(n >= 1e-12) {
        return Err(Error::ZeroQuaternion);
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

#[inline]
pub(crate) fn rotmat_unit(w: f64, x: f64, y: f64, z: f64) -> Mat3 {
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of [`rotmat_unit`] with respect to `w, x, y, z`.
pub(crate) fn rotmat_unit_partials(w: f64, x: f64, y: f64, z: f64) -> [Mat3; 4] {
    let dw = Mat3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Mat3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Mat3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Mat3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    [dw, dx, dy, dz]
}

/// Rigid pose. `q` need not be normalised; it is normalised on use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub q: [f64; 4],
    pub t: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            q: [1.0, 0.0, 0.0, 0.0],
            t: Vec3::zeros(),
        }
    }

    /// Pose of a primitive whose canonical frame sits at `center` in world
    /// coordinates with rotation `q`.
    pub fn centered_at(center: Vec3, q: [f64; 4]) -> Result<Self> {
        let r = quat_to_rotmat(q)?;
        Ok(Self { q, t: -(r * center) })
    }

    pub fn rotation(&self) -> Result<Mat3> {
        quat_to_rotmat(self.q)
    }

    /// World-space position of the local origin.
    pub fn center(&self) -> Result<Vec3> {
        local_to_world(self, &Vec3::zeros())
    }
}

/// `T(x) = R(q)·x + t`.
pub fn world_to_local(pose: &Pose, x: &Vec3) -> Result<Vec3> {
    Ok(pose.rotation()? * x + pose.t)
}

/// Inverse of [`world_to_local`]: `Rᵀ·(y − t)`.
pub fn local_to_world(pose: &Pose, y: &Vec3) -> Result<Vec3> {
    Ok(pose.rotation()?.transpose() * (y - pose.t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Superquadric {
    pub shape: ShapeParams,
    pub pose: Pose,
}

impl Superquadric {
    pub fn new(shape: ShapeParams, pose: Pose) -> Result<Self> {
        shape.validate()?;
        normalize_quat(pose.q)?;
        if !pose.t.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidShape("translation is not finite".into()));
        }
        Ok(Self { shape, pose })
    }

    /// Whether a world-space point lies inside or on the surface.
    pub fn contains(&self, rotation: &Mat3, x: &Vec3) -> bool {
        implicit_value(&self.shape, &(rotation * x + self.pose.t)) <= 1.0
    }

    /// Axis-aligned world bounds of the local box `[-α, α]³`.
    pub fn world_aabb(&self) -> Result<(Vec3, Vec3)> {
        let [a1, a2, a3] = self.shape.alpha;
        let r_t = self.pose.rotation()?.transpose();
        let center = -(r_t * self.pose.t);
        // |Rᵀ| applied to the half extents gives the world half extents.
        let half = r_t.abs() * Vec3::new(a1, a2, a3);
        Ok((center - half, center + half))
    }
}

/// Superquadrics together with their existence probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub primitives: Vec<Superquadric>,
    pub gamma: Vec<f64>,
}

impl Ensemble {
    pub fn new(primitives: Vec<Superquadric>, gamma: Vec<f64>) -> Result<Self> {
        let ensemble = Self { primitives, gamma };
        ensemble.validate()?;
        Ok(ensemble)
    }

    pub fn single(sq: Superquadric) -> Self {
        Self {
            primitives: vec![sq],
            gamma: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::InvalidEnsemble("no primitives".into()));
        }
        if self.primitives.len() != self.gamma.len() {
            return Err(Error::InvalidEnsemble(format!(
                "{} primitives but {} existence probabilities",
                self.primitives.len(),
                self.gamma.len()
            )));
        }
        if let Some(g) = self.gamma.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return Err(Error::InvalidEnsemble(format!("gamma {g} outside [0, 1]")));
        }
        for sq in &self.primitives {
            sq.shape.validate()?;
            normalize_quat(sq.pose.q)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn sum_gamma(&self) -> f64 {
        self.gamma.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn signed_pow_examples() {
        assert_eq!(signed_pow(0.5, 1.0), 0.5);
        assert_eq!(signed_pow(-1.0, 0.3), -1.0);
        assert_relative_eq!(signed_pow(-0.25, 0.5), -0.5, epsilon = 1e-15);
        assert_eq!(signed_pow(0.0, 0.2), 0.0);
        assert_eq!(signed_pow(-0.0, 1.7), 0.0);
    }

    #[test]
    fn surface_point_examples() {
        let sphere = ShapeParams::sphere(1.0);
        assert_relative_eq!(surface_point(&sphere, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0));

        let sq = ShapeParams::new([0.3, 0.7, 1.3], [0.4, 1.6]).unwrap();
        let pole = surface_point(&sq, FRAC_PI_2, 0.7);
        assert!(pole.x.abs() < 1e-12 && pole.y.abs() < 1e-12);
        assert_relative_eq!(pole.z, 1.3, epsilon = 1e-12);

        let ell = ShapeParams::new([2.0, 1.0, 1.0], [1.0, 1.0]).unwrap();
        for i in 0..=20 {
            for j in 0..=40 {
                let eta = -FRAC_PI_2 + PI * i as f64 / 20.0;
                let omega = -PI + 2.0 * PI * j as f64 / 40.0;
                let p = surface_point(&ell, eta, omega);
                let v = (p.x / 2.0).powi(2) + p.y * p.y + p.z * p.z;
                assert!((v - 1.0).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn implicit_value_examples() {
        let sphere = ShapeParams::sphere(1.0);
        assert_relative_eq!(implicit_value(&sphere, &Vec3::new(1.0, 0.0, 0.0)), 1.0);
        let sq = ShapeParams::new([0.2, 0.3, 0.4], [0.2, 1.8]).unwrap();
        assert_eq!(implicit_value(&sq, &Vec3::zeros()), 0.0);
        assert_relative_eq!(implicit_value(&sphere, &Vec3::new(2.0, 0.0, 0.0)), 4.0);
    }

    #[test]
    fn quaternion_examples() {
        assert_relative_eq!(quat_to_rotmat([1.0, 0.0, 0.0, 0.0]).unwrap(), Mat3::identity());
        assert_relative_eq!(
            quat_to_rotmat([0.0, 0.0, 0.0, 1.0]).unwrap(),
            Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0))
        );
        assert_relative_eq!(quat_to_rotmat([2.0, 0.0, 0.0, 0.0]).unwrap(), Mat3::identity());
        assert!(matches!(quat_to_rotmat([0.0; 4]), Err(Error::ZeroQuaternion)));
    }

    #[test]
    fn pose_examples() {
        let x = Vec3::new(0.3, 0.1, -0.2);
        assert_eq!(world_to_local(&Pose::identity(), &x).unwrap(), x);
        assert_eq!(local_to_world(&Pose::identity(), &x).unwrap(), x);
        let shifted = Pose {
            q: [1.0, 0.0, 0.0, 0.0],
            t: Vec3::new(-1.0, 0.0, 0.0),
        };
        assert_eq!(world_to_local(&shifted, &Vec3::new(1.0, 0.0, 0.0)).unwrap(), Vec3::zeros());
        assert_eq!(local_to_world(&shifted, &Vec3::zeros()).unwrap(), Vec3::new(1.0, 0.0, 0.0));
        let zero = Pose {
            q: [0.0; 4],
            t: Vec3::zeros(),
        };
        assert!(matches!(world_to_local(&zero, &x), Err(Error::ZeroQuaternion)));
    }

    #[test]
    fn rotmat_partials_match_finite_differences() {
        let q = [0.3, -0.5, 0.7, 0.2];
        let parts = rotmat_unit_partials(q[0], q[1], q[2], q[3]);
        let h = 1e-6;
        for c in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[c] += h;
            qm[c] -= h;
            let fd = (rotmat_unit(qp[0], qp[1], qp[2], qp[3]) - rotmat_unit(qm[0], qm[1], qm[2], qm[3]))
                / (2.0 * h);
            assert_relative_eq!(fd, parts[c], epsilon = 1e-8);
        }
    }

    #[test]
    fn world_aabb_contains_surface() {
        let sq = Superquadric::new(
            ShapeParams::new([0.3, 0.1, 0.2], [0.3, 1.2]).unwrap(),
            Pose::centered_at(Vec3::new(0.1, 0.2, 0.3), [0.9, 0.2, -0.3, 0.1]).unwrap(),
        )
        .unwrap();
        let (lo, hi) = sq.world_aabb().unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let eta = -FRAC_PI_2 + PI * i as f64 / 29.0;
                let omega = -PI + 2.0 * PI * j as f64 / 29.0;
                let w = local_to_world(&sq.pose, &surface_point(&sq.shape, eta, omega)).unwrap();
                for a in 0..3 {
                    assert!(w[a] >= lo[a] - 1e-12 && w[a] <= hi[a] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn ensemble_invariants() {
        let sq = Superquadric::new(ShapeParams::sphere(1.0), Pose::identity()).unwrap();
        assert!(Ensemble::new(vec![sq], vec![0.5]).is_ok());
        assert!(Ensemble::new(vec![sq], vec![1.5]).is_err());
        assert!(Ensemble::new(vec![sq], vec![]).is_err());
        assert!(Ensemble::new(vec![], vec![]).is_err());
        assert!(ShapeParams::new([1.0, 0.0, 1.0], [1.0, 1.0]).is_err());
        assert!(ShapeParams::new([1.0, 1.0, 1.0], [0.05, 1.0]).is_err());
    }

    fn quat() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-1.0f64..1.0).prop_filter("non-zero", |q| {
            q.iter().map(|c| c * c).sum::<f64>() > 1e-3
        })
    }

    fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-r..r).prop_map(Vec3::from)
    }

    proptest! {
        #[test]
        fn surface_points_lie_on_implicit_surface(
            a in prop::array::uniform3(0.01f64..1.0),
            e in prop::array::uniform2(0.1f64..1.9),
            eta in (-FRAC_PI_2 + 1e-3)..(FRAC_PI_2 - 1e-3),
            omega in -PI..PI,
        ) {
            let shape = ShapeParams::new(a, e).unwrap();
            let p = surface_point(&shape, eta, omega);
            prop_assert!((implicit_value(&shape, &p) - 1.0).abs() < 1e-8);
            for i in 0..3 {
                prop_assert!(p[i].abs() <= a[i] + 1e-12);
            }
        }

        #[test]
        fn rotation_is_scale_invariant_and_orthonormal(q in quat(), s in 0.01f64..100.0) {
            let r = quat_to_rotmat(q).unwrap();
            let rs = quat_to_rotmat([q[0] * s, q[1] * s, q[2] * s, q[3] * s]).unwrap();
            prop_assert!((r - rs).abs().max() < 1e-12);
            prop_assert!((r * r.transpose() - Mat3::identity()).abs().max() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn pose_is_isometry_with_exact_inverse(q in quat(), t in vec3(2.0), a in vec3(2.0), b in vec3(2.0)) {
            let pose = Pose { q, t };
            let ta = world_to_local(&pose, &a).unwrap();
            let tb = world_to_local(&pose, &b).unwrap();
            prop_assert!(((ta - tb).norm() - (a - b).norm()).abs() < 1e-12);
            let back = local_to_world(&pose, &ta).unwrap();
            prop_assert!((back - a).norm() < 1e-12);
        }
    }
}
