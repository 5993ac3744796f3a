//! Rotation and wrench algebra shared by every other module.
//!
//! Conventions: a [`FramedTransform`] from frame `a` to frame `b` maps a
//! point expressed in `a` into `b` as `p_b = R p_a + t`. Wrenches are
//! force/torque pairs referred to the origin of their frame.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating rotations.
pub const ROTATION_TOL: f64 = 1e-9;

/// Coordinate frames: world, body (vehicle COM), end-effector (pen tip),
/// sensor (arm root) and contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    W,
    B,
    E,
    S,
    C,
}

/// Skew-symmetric matrix with `hat(v) * w == v.cross(&w)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Rejects matrices whose symmetric part exceeds 1e-6.
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let asym = (m + m.transpose()).norm();
    if asym >= 1e-6 || !asym.is_finite() {
        return Err(Error::NotSkew(asym));
    }
    Ok(Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    ))
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and `det = +1` to [`ROTATION_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if !(ortho <= ROTATION_TOL && (det - 1.0).abs() <= ROTATION_TOL) {
            return Err(Error::NotProjectable(format!(
                "orthogonality error {ortho:.3e}, det {det:.12}"
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without validation; callers guarantee it is a rotation.
    pub(crate) fn new_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Builds a rotation from row-major entries and validates it.
    pub fn from_row_major(r: &[f64; 9]) -> Result<Self> {
        Rotation::new(Matrix3::from_row_slice(r))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn rz(angle: f64) -> Rotation {
        exp_so3(&Vector3::new(0.0, 0.0, angle))
    }

    /// Orthonormality and determinant residuals, for diagnostics.
    pub fn residuals(&self) -> (f64, f64) {
        let ortho = (self.0.transpose() * self.0 - Matrix3::identity()).amax();
        (ortho, (self.0.determinant() - 1.0).abs())
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = <[f64; 9]>::deserialize(d)?;
        Rotation::from_row_major(&r).map_err(serde::de::Error::custom)
    }
}

/// Rigid transform tagged with the frames it maps between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramedTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub from: Frame,
    pub to: Frame,
}

impl FramedTransform {
    pub fn new(rotation: Rotation, translation: Vector3<f64>, from: Frame, to: Frame) -> Self {
        FramedTransform {
            rotation,
            translation,
            from,
            to,
        }
    }

    pub fn identity(from: Frame, to: Frame) -> Self {
        Self::new(Rotation::identity(), Vector3::zeros(), from, to)
    }

    /// `self ∘ inner`: first `inner` (a → b), then `self` (b → c).
    pub fn compose(&self, inner: &FramedTransform) -> Result<FramedTransform> {
        if inner.to != self.from {
            return Err(Error::FrameMismatch {
                expected: self.from,
                found: inner.to,
            });
        }
        Ok(FramedTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
            from: inner.from,
            to: self.to,
        })
    }

    pub fn inverse(&self) -> FramedTransform {
        let rt = self.rotation.transpose();
        FramedTransform {
            rotation: rt,
            translation: -(rt * self.translation),
            from: self.to,
            to: self.from,
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * *p + self.translation
    }

    /// 6×6 wrench adjoint acting on `[force; torque]`.
    pub fn wrench_adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation.matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(hat(&self.translation) * r));
        ad
    }
}

/// Force/torque pair referred to the origin of `frame`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
    pub frame: Frame,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>, frame: Frame) -> Self {
        Wrench { force, torque, frame }
    }

    pub fn zero(frame: Frame) -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros(), frame)
    }

    pub fn from_vector(v: &Vector6<f64>, frame: Frame) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into(), frame)
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.force);
        v.fixed_rows_mut::<3>(3).copy_from(&self.torque);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|x| x.is_finite())
    }
}

/// Re-expresses `w` (given in `t.from`) as the equivalent wrench in `t.to`.
pub fn ad_wrench(t: &FramedTransform, w: &Wrench) -> Result<Wrench> {
    if w.frame != t.from {
        return Err(Error::FrameMismatch {
            expected: t.from,
            found: w.frame,
        });
    }
    let force = t.rotation * w.force;
    let torque = t.rotation * w.torque + t.translation.cross(&force);
    Ok(Wrench::new(force, torque, t.to))
}

/// Nearest rotation in Frobenius norm (orthogonal polar factor).
pub fn project_so3(m: &Matrix3<f64>) -> Result<Rotation> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NotProjectable("non-finite entries".into()));
    }
    let det = m.determinant();
    if det <= 0.0 {
        return Err(Error::NotProjectable(format!("determinant {det:.3e} is not positive")));
    }
    let svd = m.svd(true, true);
    let smin = svd.singular_values.min();
    if smin <= 1e-12 * svd.singular_values.max().max(1.0) {
        return Err(Error::NotProjectable("matrix is singular".into()));
    }
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let r = u * vt;
    // det(m) > 0 and full rank make u * vt proper; guard against roundoff anyway.
    if r.determinant() <= 0.0 {
        return Err(Error::NotProjectable("reflection".into()));
    }
    Ok(Rotation(r))
}

/// Rodrigues exponential map.
pub fn exp_so3(v: &Vector3<f64>) -> Rotation {
    let theta2 = v.norm_squared();
    let k = hat(v);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::identity() + a * k + b * k * k)
}

/// Rotation vector of `r`; fails when the angle is within ~1e-4 rad of pi.
pub fn log_so3(r: &Rotation) -> Result<Vector3<f64>> {
    let m = r.matrix();
    let tr = m.trace();
    if tr <= -1.0 + 1e-9 {
        return Err(Error::LogSingular);
    }
    let cos = ((tr - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let w = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let scale = if theta < 1e-6 {
        0.5 + theta * theta / 12.0
    } else {
        theta / (2.0 * theta.sin())
    };
    Ok(w * scale)
}

/// Right Jacobian of the exponential map: `exp(v + d) ≈ exp(v) exp(J_r(v) d)`.
pub fn right_jacobian(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let k = hat(v);
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() - a * k + b * k * k
}

/// Rotation whose columns are the given axes, projected onto SO(3).
pub fn rotation_from_axes(x: &Vector3<f64>, y: &Vector3<f64>, z: &Vector3<f64>) -> Result<Rotation> {
    project_so3(&Matrix3::from_columns(&[*x, *y, *z]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn rz90() -> Matrix3<f64> {
        Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn hat_examples() {
        let v = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(hat(&v), Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        assert_eq!(hat(&v) * v, Vector3::zeros());
    }

    #[test]
    fn vee_examples() {
        let v = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(vee(&hat(&v)).unwrap(), v);
        assert_eq!(vee(&Matrix3::zeros()).unwrap(), Vector3::zeros());
        let m = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(vee(&m).unwrap(), Vector3::new(0.0, 0.0, 1.0));
        assert!(matches!(vee(&Matrix3::identity()), Err(Error::NotSkew(_))));
    }

    #[test]
    fn ad_wrench_examples() {
        let w = Wrench::new(Vector3::new(0.3, -1.0, 2.0), Vector3::new(1.0, 0.5, 0.0), Frame::E);
        let id = FramedTransform::identity(Frame::E, Frame::B);
        let out = ad_wrench(&id, &w).unwrap();
        assert_eq!((out.force, out.torque), (w.force, w.torque));
        assert_eq!(out.frame, Frame::B);

        let t = FramedTransform::new(Rotation::identity(), Vector3::x(), Frame::E, Frame::B);
        let w = Wrench::new(Vector3::z(), Vector3::zeros(), Frame::E);
        let out = ad_wrench(&t, &w).unwrap();
        assert_eq!(out.force, Vector3::z());
        assert_eq!(out.torque, Vector3::new(0.0, -1.0, 0.0));

        let t = FramedTransform::new(Rotation::new(rz90()).unwrap(), Vector3::zeros(), Frame::E, Frame::B);
        let w = Wrench::new(Vector3::x(), Vector3::z(), Frame::E);
        let out = ad_wrench(&t, &w).unwrap();
        assert_relative_eq!(out.force, Vector3::y(), epsilon = 1e-15);
        assert_relative_eq!(out.torque, Vector3::z(), epsilon = 1e-15);

        let bad = Wrench::zero(Frame::S);
        assert!(matches!(ad_wrench(&t, &bad), Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn project_examples() {
        let r = exp_so3(&Vector3::new(0.3, -0.2, 0.9));
        let p = project_so3(r.matrix()).unwrap();
        assert_relative_eq!(p.matrix(), r.matrix(), epsilon = 1e-12);

        let p = project_so3(&(Matrix3::identity() * 1.1)).unwrap();
        assert_relative_eq!(p.matrix(), &Matrix3::identity(), epsilon = 1e-12);

        let m = Matrix3::identity() + 0.01 * hat(&Vector3::z());
        let p = project_so3(&m).unwrap();
        let (ortho, det) = p.residuals();
        assert!(ortho < 1e-12 && det < 1e-12);
        // Independent oracle: the polar factor is m (m^T m)^{-1/2}; for this m,
        // m^T m = (1 + 1e-4) I on the xy block, so the factor is m / sqrt(1 + 1e-4).
        let s = (1.0f64 + 1e-4).sqrt();
        let expected = Matrix3::new(1.0 / s, -0.01 / s, 0.0, 0.01 / s, 1.0 / s, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(p.matrix(), &expected, epsilon = 1e-12);

        assert!(project_so3(&Matrix3::zeros()).is_err());
        assert!(project_so3(&Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0))).is_err());
    }

    #[test]
    fn exp_log_examples() {
        assert_eq!(exp_so3(&Vector3::zeros()).matrix(), &Matrix3::identity());
        assert_relative_eq!(
            exp_so3(&Vector3::new(0.0, 0.0, FRAC_PI_2)).matrix(),
            &rz90(),
            epsilon = 1e-15
        );
        let v = Vector3::new(0.1, 0.2, 0.3);
        assert_relative_eq!(log_so3(&exp_so3(&v)).unwrap(), v, epsilon = 1e-9);
        let half_turn = exp_so3(&Vector3::new(std::f64::consts::PI, 0.0, 0.0));
        assert!(matches!(log_so3(&half_turn), Err(Error::LogSingular)));
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        let v = Vector3::new(0.4, -0.7, 0.2);
        let jr = right_jacobian(&v);
        let r0 = exp_so3(&v);
        let eps = 1e-6;
        for i in 0..3 {
            let mut d = Vector3::zeros();
            d[i] = eps;
            let rp = exp_so3(&(v + d));
            let rm = exp_so3(&(v - d));
            let lp = log_so3(&(r0.transpose() * rp)).unwrap();
            let lm = log_so3(&(r0.transpose() * rm)).unwrap();
            let col = (lp - lm) / (2.0 * eps);
            assert_relative_eq!(col, jr.column(i).into_owned(), epsilon = 1e-8);
        }
    }

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    fn transform(from: Frame, to: Frame) -> impl Strategy<Value = FramedTransform> {
        (vec3(), vec3()).prop_map(move |(r, t)| FramedTransform::new(exp_so3(&(r * 0.7)), t, from, to))
    }

    proptest! {
        #[test]
        fn vee_inverts_hat(v in vec3()) {
            let n = v.norm();
            prop_assume!(n > 1e-6);
            let u = v / n;
            let h = hat(&u);
            prop_assert_eq!(h + h.transpose(), Matrix3::zeros());
            prop_assert_eq!(vee(&h).unwrap(), u);
        }

        #[test]
        fn adjoint_composes(t1 in transform(Frame::B, Frame::W), t2 in transform(Frame::E, Frame::B)) {
            let lhs = t1.compose(&t2).unwrap().wrench_adjoint();
            let rhs = t1.wrench_adjoint() * t2.wrench_adjoint();
            prop_assert!((lhs - rhs).amax() < 1e-9);
        }

        #[test]
        fn ad_wrench_matches_adjoint(t in transform(Frame::E, Frame::B), f in vec3(), tq in vec3()) {
            let w = Wrench::new(f, tq, Frame::E);
            let out = ad_wrench(&t, &w).unwrap().to_vector();
            prop_assert!((out - t.wrench_adjoint() * w.to_vector()).amax() < 1e-12);
        }

        #[test]
        fn projection_yields_rotation(a in proptest::array::uniform9(-1.0..1.0f64)) {
            let m = Matrix3::from_row_slice(&a) + Matrix3::identity() * 2.0;
            if let Ok(r) = project_so3(&m) {
                let (ortho, det) = r.residuals();
                prop_assert!(ortho < 1e-9 && det < 1e-9);
                let again = project_so3(r.matrix()).unwrap();
                prop_assert!((again.matrix() - r.matrix()).amax() < 1e-12);
            }
        }

        #[test]
        fn exp_log_round_trip(v in vec3()) {
            prop_assume!(v.norm() < 3.0);
            let r = exp_so3(&v);
            let back = exp_so3(&log_so3(&r).unwrap());
            prop_assert!((back.matrix() - r.matrix()).amax() < 1e-9);
        }
    }
}
