//! Rigid transforms in the six-parameter `[tx ty tz rx ry rz]` form.
//!
//! Rotations are intrinsic z-y-x (yaw, pitch, roll): `R = Rz(rz) * Ry(ry) * Rx(rx)`.
//! Every module in the crate shares this convention.

use core::ops::Index;

use nalgebra::{Matrix3, Vector3, Vector6};

use crate::math::{atan2, hypot, sin_cos, wrap_angle};

pub type Point3 = nalgebra::Point3<f64>;

/// Below this value of `cos(ry)` the Euler extraction takes the gimbal-lock branch.
const GIMBAL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose6D {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl Pose6D {
    pub const IDENTITY: Pose6D = Pose6D {
        tx: 0.0,
        ty: 0.0,
        tz: 0.0,
        rx: 0.0,
        ry: 0.0,
        rz: 0.0,
    };

    /// Builds a pose; angles are wrapped into (-pi, pi].
    pub fn new(tx: f64, ty: f64, tz: f64, rx: f64, ry: f64, rz: f64) -> Self {
        Self {
            tx,
            ty,
            tz,
            rx: wrap_angle(rx),
            ry: wrap_angle(ry),
            rz: wrap_angle(rz),
        }
    }

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    pub fn from_translation(tx: f64, ty: f64, tz: f64) -> Self {
        Self::new(tx, ty, tz, 0.0, 0.0, 0.0)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.tx, self.ty, self.tz, self.rx, self.ry, self.rz)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.tx, self.ty, self.tz)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_zyx(self.rx, self.ry, self.rz)
    }

    /// Recovers the six parameters from a rotation matrix and translation.
    pub fn from_parts(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        let (rx, ry, rz) = euler_zyx(rotation);
        Self::new(translation.x, translation.y, translation.z, rx, ry, rz)
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        let ra = self.rotation();
        let r = ra * other.rotation();
        let t = ra * other.translation() + self.translation();
        Pose6D::from_parts(&r, &t)
    }

    pub fn inverse(&self) -> Pose6D {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        Pose6D::from_parts(&rt, &t)
    }

    /// Rotates, then translates.
    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation() * p.coords + self.translation())
    }

    pub fn translation_norm(&self) -> f64 {
        self.translation().norm()
    }

    pub fn rotation_norm(&self) -> f64 {
        Vector3::new(self.rx, self.ry, self.rz).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// `Rz(rz) * Ry(ry) * Rx(rx)`.
pub fn rotation_zyx(rx: f64, ry: f64, rz: f64) -> Matrix3<f64> {
    let (sx, cx) = sin_cos(rx);
    let (sy, cy) = sin_cos(ry);
    let (sz, cz) = sin_cos(rz);
    Matrix3::new(
        cz * cy,
        cz * sy * sx - sz * cx,
        cz * sy * cx + sz * sx,
        sz * cy,
        sz * sy * sx + cz * cx,
        sz * sy * cx - cz * sx,
        -sy,
        cy * sx,
        cy * cx,
    )
}

/// Partial derivatives of [`rotation_zyx`] with respect to `rx`, `ry` and `rz`.
pub fn rotation_zyx_derivatives(rx: f64, ry: f64, rz: f64) -> [Matrix3<f64>; 3] {
    let (sx, cx) = sin_cos(rx);
    let (sy, cy) = sin_cos(ry);
    let (sz, cz) = sin_cos(rz);
    let rot_x = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let rot_y = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rot_z = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    let d_x = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sx, -cx, 0.0, cx, -sx);
    let d_y = Matrix3::new(-sy, 0.0, cy, 0.0, 0.0, 0.0, -cy, 0.0, -sy);
    let d_z = Matrix3::new(-sz, -cz, 0.0, cz, -sz, 0.0, 0.0, 0.0, 0.0);
    [
        rot_z * rot_y * d_x,
        rot_z * d_y * rot_x,
        d_z * rot_y * rot_x,
    ]
}

/// Euler angles `(rx, ry, rz)` of a rotation matrix, `ry` in [-pi/2, pi/2].
pub fn euler_zyx(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let cy = hypot(r[(0, 0)], r[(1, 0)]);
    let ry = atan2(-r[(2, 0)], cy);
    if cy > GIMBAL_EPS {
        let rx = atan2(r[(2, 1)], r[(2, 2)]);
        let rz = atan2(r[(1, 0)], r[(0, 0)]);
        (rx, ry, rz)
    } else {
        // Gimbal lock: roll and yaw are coupled, fold everything into yaw.
        let rz = atan2(-r[(0, 1)], r[(1, 1)]);
        (0.0, ry, rz)
    }
}

/// Six-vector edge residual: translation (m) followed by wrapped rotation (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError6(pub Vector6<f64>);

impl PoseError6 {
    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn as_vector(&self) -> &Vector6<f64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl Index<usize> for PoseError6 {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Residual of `zij^-1 * (xi^-1 * xj)`. Zero iff the relative pose of the
/// two nodes equals the measurement.
pub fn edge_error(xi: &Pose6D, xj: &Pose6D, zij: &Pose6D) -> PoseError6 {
    let relative = xi.inverse().compose(xj);
    let e = zij.inverse().compose(&relative);
    PoseError6(Vector6::new(
        e.tx,
        e.ty,
        e.tz,
        wrap_angle(e.rx),
        wrap_angle(e.ry),
        wrap_angle(e.rz),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI};
    use proptest::prelude::*;

    fn close(a: &Pose6D, b: &Pose6D, tol: f64) -> bool {
        let d = a.to_vector() - b.to_vector();
        (0..3).all(|i| d[i].abs() < tol) && (3..6).all(|i| wrap_angle(d[i]).abs() < tol)
    }

    #[test]
    fn compose_identity_and_translation() {
        let p = Pose6D::new(1.0, -2.0, 0.5, 0.1, -0.2, 2.9);
        let q = Pose6D::identity().compose(&p);
        for i in 0..6 {
            assert!((q.to_vector()[i] - p.to_vector()[i]).abs() < 1e-12);
        }
        let r = p.compose(&Pose6D::identity());
        assert!(close(&r, &p, 1e-12));
        let s = Pose6D::from_translation(1.0, 0.0, 0.0).compose(&Pose6D::from_translation(2.0, 0.0, 0.0));
        assert_eq!(s, Pose6D::from_translation(3.0, 0.0, 0.0));
        assert!(close(&p.compose(&p.inverse()), &Pose6D::identity(), 1e-9));
    }

    #[test]
    fn invert_cases() {
        assert_eq!(Pose6D::identity().inverse(), Pose6D::identity());
        let t = Pose6D::from_translation(1.0, 2.0, 3.0).inverse();
        assert!(close(&t, &Pose6D::from_translation(-1.0, -2.0, -3.0), 1e-15));
    }

    #[test]
    fn apply_cases() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose6D::identity().apply(&p), p);
        let q = Pose6D::new(0.0, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2).apply(&Point3::new(1.0, 0.0, 0.0));
        assert!((q - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
        let r = Pose6D::from_translation(5.0, 0.0, 0.0).apply(&p);
        assert_eq!(r, Point3::new(6.0, 2.0, 3.0));
    }

    #[test]
    fn edge_error_cases() {
        let z = Pose6D::new(0.3, 0.1, 0.0, 0.0, 0.0, 0.4);
        assert!(edge_error(&Pose6D::identity(), &z, &z).norm() < 1e-12);
        let e = edge_error(
            &Pose6D::identity(),
            &Pose6D::from_translation(2.0, 0.0, 0.0),
            &Pose6D::from_translation(1.0, 0.0, 0.0),
        );
        assert!((e.translation() - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(e.rotation().norm() < 1e-12);
    }

    #[test]
    fn edge_error_wraps_near_pi() {
        let xi = Pose6D::new(0.0, 0.0, 0.0, 0.0, 0.0, PI - 0.01);
        let xj = Pose6D::new(0.0, 0.0, 0.0, 0.0, 0.0, -PI + 0.01);
        let z = Pose6D::identity();
        let e = edge_error(&xi, &xj, &z);
        assert!((e[5] - 0.02).abs() < 1e-9);
    }

    #[test]
    fn rotation_derivatives_match_finite_differences() {
        let (rx, ry, rz) = (0.3, -0.4, 1.2);
        let d = rotation_zyx_derivatives(rx, ry, rz);
        let h = 1e-6;
        let fd = [
            (rotation_zyx(rx + h, ry, rz) - rotation_zyx(rx - h, ry, rz)) / (2.0 * h),
            (rotation_zyx(rx, ry + h, rz) - rotation_zyx(rx, ry - h, rz)) / (2.0 * h),
            (rotation_zyx(rx, ry, rz + h) - rotation_zyx(rx, ry, rz - h)) / (2.0 * h),
        ];
        for k in 0..3 {
            assert!((d[k] - fd[k]).norm() < 1e-8);
        }
    }

    #[test]
    fn gimbal_lock_is_accepted() {
        let p = Pose6D::new(0.0, 0.0, 0.0, 0.2, FRAC_PI_2, 0.3);
        let q = Pose6D::from_parts(&p.rotation(), &p.translation());
        assert!((q.rotation() - p.rotation()).norm() < 1e-9);
        assert!((q.ry - FRAC_PI_2).abs() < 1e-6);
    }

    fn pose_strategy() -> impl Strategy<Value = Pose6D> {
        (
            -50.0..50.0f64,
            -50.0..50.0f64,
            -10.0..10.0f64,
            -3.1..3.1f64,
            -1.5..1.5f64,
            -3.1..3.1f64,
        )
            .prop_map(|(a, b, c, d, e, f)| Pose6D::new(a, b, c, d, e, f))
    }

    fn point_strategy() -> impl Strategy<Value = Point3> {
        (-100.0..100.0f64, -100.0..100.0f64, -100.0..100.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn compose_invert_round_trip(p in pose_strategy(), q in pose_strategy()) {
            prop_assert!(close(&p.compose(&p.inverse()), &Pose6D::identity(), 1e-9));
            prop_assert!(close(&p.inverse().inverse(), &p, 1e-9));
            prop_assert!(close(&p.compose(&q).compose(&q.inverse()), &p, 1e-9));
        }

        #[test]
        fn compose_is_associative(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!((left.rotation() - right.rotation()).norm() < 1e-9);
            prop_assert!((left.translation() - right.translation()).norm() < 1e-9);
        }

        #[test]
        fn apply_preserves_distances(p in pose_strategy(), a in point_strategy(), b in point_strategy()) {
            let d0 = (a - b).norm();
            let d1 = (p.apply(&a) - p.apply(&b)).norm();
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn consistent_edge_has_zero_error(xi in pose_strategy(), z in pose_strategy()) {
            let xj = xi.compose(&z);
            prop_assert!(edge_error(&xi, &xj, &z).norm() < 1e-9);
        }

        #[test]
        fn composed_angles_are_wrapped(a in pose_strategy(), b in pose_strategy()) {
            let c = a.compose(&b);
            for v in [c.rx, c.ry, c.rz] {
                prop_assert!(v > -PI && v <= PI);
            }
        }
    }
}
