//! Quaternion and rotation helpers.
//!
//! Quaternions are Hamilton, scalar-first `(w, x, y, z)`. The generic `*_g`
//! functions operate on plain arrays so that the same code runs on `f64` and on
//! dual numbers when the integrator differentiates through the dynamics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::Real;

pub type Vec3 = Vector3<f64>;

/// Norm below which a 4-vector cannot be normalized.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("cannot normalize quaternion with norm {0:e}")]
pub struct DegenerateQuaternion(pub f64);

/// Unit quaternion, scalar first, canonicalized to `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Normalizes an arbitrary 4-vector `(w, x, y, z)`.
    pub fn normalize(q: [f64; 4]) -> Result<Self, DegenerateQuaternion> {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if !(n > DEGENERATE_NORM) {
            return Err(DegenerateQuaternion(n));
        }
        let s = if q[0] < 0.0 { -1.0 / n } else { 1.0 / n };
        Ok(Self { w: q[0] * s, x: q[1] * s, y: q[2] * s, z: q[3] * s })
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n < DEGENERATE_NORM {
            return Self::identity();
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n * s;
        Self::normalize([c, a.x, a.y, a.z]).unwrap_or_default()
    }

    pub fn from_yaw(yaw: f64) -> Self {
        Self::from_axis_angle(Vec3::z(), yaw)
    }

    /// Builds the quaternion of a proper rotation matrix (columns = body axes in world).
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            [0.25 * s, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            [(m[(2, 1)] - m[(1, 2)]) / s, 0.25 * s, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            [(m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, 0.25 * s, (m[(1, 2)] + m[(2, 1)]) / s]
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            [(m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, 0.25 * s]
        };
        Self::normalize(q).unwrap_or_default()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_slice_unchecked(q: &[f64]) -> Self {
        Self { w: q[0], x: q[1], y: q[2], z: q[3] }
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conjugate(self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn mul(self, other: Self) -> Self {
        quat_multiply(self, other)
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        quat_rotate(self, v)
    }

    pub fn rotation_matrix(self) -> Matrix3<f64> {
        let m = rotation_matrix_g(&self.to_array());
        Matrix3::from_fn(|r, c| m[r][c])
    }

    /// Spherical linear interpolation along the shortest arc.
    pub fn slerp(self, other: Self, s: f64) -> Self {
        let mut b = other.to_array();
        let mut d = self.dot(other);
        if d < 0.0 {
            d = -d;
            b.iter_mut().for_each(|c| *c = -*c);
        }
        let a = self.to_array();
        let (wa, wb) = if d > 1.0 - 1e-9 {
            (1.0 - s, s)
        } else {
            let th = d.clamp(-1.0, 1.0).acos();
            let st = th.sin();
            (((1.0 - s) * th).sin() / st, (s * th).sin() / st)
        };
        let q = [0, 1, 2, 3].map(|i| wa * a[i] + wb * b[i]);
        Self::normalize(q).unwrap_or(self)
    }
}

/// Hamilton product `a ⊗ b`, renormalized.
pub fn quat_multiply(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion {
    let p = quat_mul_g(&a.to_array(), &b.to_array());
    UnitQuaternion::normalize(p).unwrap_or_default()
}

/// `R(q) v`.
pub fn quat_rotate(q: UnitQuaternion, v: Vec3) -> Vec3 {
    let r = rotate_g(&q.to_array(), &[v.x, v.y, v.z]);
    Vec3::new(r[0], r[1], r[2])
}

/// `½ q ⊗ (0, ω)` as a raw 4-vector.
pub fn quat_derivative(q: UnitQuaternion, omega: Vec3) -> [f64; 4] {
    quat_derivative_g(&q.to_array(), &[omega.x, omega.y, omega.z])
}

pub fn normalize(q: [f64; 4]) -> Result<UnitQuaternion, DegenerateQuaternion> {
    UnitQuaternion::normalize(q)
}

/// Renormalizes a quaternion block stored inside a state slice in place.
pub fn renormalize_block(q: &mut [f64]) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n > DEGENERATE_NORM {
        let s = if q[0] < 0.0 { -1.0 / n } else { 1.0 / n };
        q.iter_mut().for_each(|c| *c *= s);
    }
}

pub fn quat_mul_g<D: Real>(a: &[D; 4], b: &[D; 4]) -> [D; 4] {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn quat_derivative_g<D: Real>(q: &[D; 4], omega: &[D; 3]) -> [D; 4] {
    let zero = D::from(0.0);
    let p = quat_mul_g(q, &[zero, omega[0], omega[1], omega[2]]);
    p.map(|c| c * 0.5)
}

/// Rotation matrix of a (not necessarily unit) quaternion, using the
/// homogeneous form that is exact for unit quaternions.
pub fn rotation_matrix_g<D: Real>(q: &[D; 4]) -> [[D; 3]; 3] {
    let [w, x, y, z] = *q;
    let one = D::from(1.0);
    [
        [one - (y * y + z * z) * 2.0, (x * y - w * z) * 2.0, (x * z + w * y) * 2.0],
        [(x * y + w * z) * 2.0, one - (x * x + z * z) * 2.0, (y * z - w * x) * 2.0],
        [(x * z - w * y) * 2.0, (y * z + w * x) * 2.0, one - (x * x + y * y) * 2.0],
    ]
}

pub fn rotate_g<D: Real>(q: &[D; 4], v: &[D; 3]) -> [D; 3] {
    let r = rotation_matrix_g(q);
    [0, 1, 2].map(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
}

/// `R(q)^T v`.
pub fn rotate_inv_g<D: Real>(q: &[D; 4], v: &[D; 3]) -> [D; 3] {
    let r = rotation_matrix_g(q);
    [0, 1, 2].map(|i| r[0][i] * v[0] + r[1][i] * v[1] + r[2][i] * v[2])
}

pub fn cross_g<D: Real>(a: &[D; 3], b: &[D; 3]) -> [D; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("non-degenerate", |q| q.iter().map(|c| c * c).sum::<f64>() > 1e-3)
            .prop_map(|q| UnitQuaternion::normalize(q).unwrap())
    }

    fn arb_vec() -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-10.0f64..10.0).prop_map(|v| Vec3::new(v[0], v[1], v[2]))
    }

    /// Rotation matrix built from axis-angle (Rodrigues), independent of the quaternion formula.
    fn rodrigues(q: UnitQuaternion) -> Matrix3<f64> {
        let v = Vec3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < 1e-15 {
            return Matrix3::identity();
        }
        let angle = 2.0 * s.atan2(q.w);
        let k = v / s;
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
    }

    #[test]
    fn identity_is_neutral() {
        let q = UnitQuaternion::normalize([0.3, -0.2, 0.5, 0.1]).unwrap();
        let p = quat_multiply(UnitQuaternion::identity(), q);
        assert_abs_diff_eq!(p.w, q.w, epsilon = 1e-15);
        assert_abs_diff_eq!(p.x, q.x, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, q.y, epsilon = 1e-15);
        assert_abs_diff_eq!(p.z, q.z, epsilon = 1e-15);
    }

    #[test]
    fn two_quarter_turns_about_z_compose_to_half_turn() {
        let h = std::f64::consts::FRAC_PI_4;
        let q = UnitQuaternion { w: h.cos(), x: 0.0, y: 0.0, z: h.sin() };
        let p = quat_multiply(q, q);
        assert_abs_diff_eq!(p.w, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rotate_examples() {
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(quat_rotate(UnitQuaternion::identity(), v), v);
        let half = UnitQuaternion { w: 0.0, x: 0.0, y: 0.0, z: 1.0 };
        let r = quat_rotate(half, Vec3::x());
        assert_abs_diff_eq!(r.x, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn derivative_examples() {
        let q = UnitQuaternion::normalize([0.4, 0.1, -0.7, 0.2]).unwrap();
        assert_eq!(quat_derivative(q, Vec3::zeros()), [0.0; 4]);
        let d = quat_derivative(UnitQuaternion::identity(), Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(d, [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize([2.0, 0.0, 0.0, 0.0]).unwrap(), UnitQuaternion::identity());
        assert_eq!(normalize([-1.0, 0.0, 0.0, 0.0]).unwrap(), UnitQuaternion::identity());
        assert!(normalize([0.0; 4]).is_err());
    }

    #[test]
    fn rk4_integration_keeps_unit_norm() {
        let omega = Vec3::new(0.7, -1.3, 2.1);
        let mut q = UnitQuaternion::normalize([0.9, 0.1, 0.2, -0.3]).unwrap();
        let dt = 1e-3;
        let f = |q: [f64; 4]| quat_derivative_g(&q, &[omega.x, omega.y, omega.z]);
        let add = |a: [f64; 4], b: [f64; 4], s: f64| [0, 1, 2, 3].map(|i| a[i] + s * b[i]);
        for _ in 0..1000 {
            let a = q.to_array();
            let k1 = f(a);
            let k2 = f(add(a, k1, dt / 2.0));
            let k3 = f(add(a, k2, dt / 2.0));
            let k4 = f(add(a, k3, dt));
            let next = [0, 1, 2, 3].map(|i| a[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
            q = normalize(next).unwrap();
            assert!((q.norm() - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn product_of_units_is_unit(a in arb_quat(), b in arb_quat()) {
            prop_assert!((quat_multiply(a, b).norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn multiply_is_associative(a in arb_quat(), b in arb_quat(), c in arb_quat()) {
            let l = quat_mul_g(&quat_mul_g(&a.to_array(), &b.to_array()), &c.to_array());
            let r = quat_mul_g(&a.to_array(), &quat_mul_g(&b.to_array(), &c.to_array()));
            for i in 0..4 {
                prop_assert!((l[i] - r[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn rotate_matches_rodrigues_and_preserves_norm(q in arb_quat(), v in arb_vec()) {
            let r = quat_rotate(q, v);
            let expected = rodrigues(q) * v;
            prop_assert!((r - expected).norm() < 1e-12 * (1.0 + v.norm()));
            prop_assert!((r.norm() - v.norm()).abs() <= 1e-12 * v.norm().max(1.0));
        }

        #[test]
        fn derivative_is_orthogonal_to_q(q in arb_quat(), w in arb_vec()) {
            let d = quat_derivative(q, w);
            let dot: f64 = q.to_array().iter().zip(d).map(|(a, b)| a * b).sum();
            prop_assert!(dot.abs() < 1e-12);
        }

        #[test]
        fn rotation_matrix_round_trip(q in arb_quat()) {
            let back = UnitQuaternion::from_rotation_matrix(&q.rotation_matrix());
            prop_assert!((back.dot(q).abs() - 1.0).abs() < 1e-12);
        }
    }
}
