//! SE(3) and SO(3) primitives.
//!
//! Twists are ordered rotation first, `(phi, rho)`. Poses map body-frame
//! points into the world frame, `p_w = C p_b + r`. Rotations are carried as
//! matrices; quaternions (scalar-first, Hamilton) only appear at file
//! boundaries through [`Rotation::from_quaternion`] and
//! [`Rotation::to_quaternion`].

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::scalar::{lit, to_f64, Real};

/// Below this rotation angle the closed-form exponential switches to its
/// second-order Taylor expansion.
pub const SMALL_ANGLE: f64 = 1.0e-6;

/// Below this angle the Jacobian coefficient functions are evaluated from
/// their power series, where the closed forms lose precision to cancellation.
const SERIES_ANGLE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LieError {
    #[error("rotation angle {angle} is numerically indistinguishable from pi; logarithm branch is ambiguous")]
    BranchAmbiguity { angle: f64 },
    #[error("matrix is not a rotation (orthonormality deviation {deviation:e}, determinant {determinant})")]
    NotOrthonormal { deviation: f64, determinant: f64 },
    #[error("quaternion has norm {norm}, expected unit norm")]
    NonUnitQuaternion { norm: f64 },
    #[error("non-finite value in Lie group input")]
    NonFinite,
}

/// Skew-symmetric cross-product matrix `v^x`.
pub fn skew<S: Real>(v: &Vector3<S>) -> Matrix3<S> {
    let z = S::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// Inverse of [`skew`]; reads the off-diagonal entries of a skew matrix.
pub fn unskew<S: Real>(m: &Matrix3<S>) -> Vector3<S> {
    let h: S = lit(0.5);
    Vector3::new(
        (m[(2, 1)] - m[(1, 2)]) * h,
        (m[(0, 2)] - m[(2, 0)]) * h,
        (m[(1, 0)] - m[(0, 1)]) * h,
    )
}

/// Element of se(3) in `(phi, rho)` order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist<S: Real> {
    pub phi: Vector3<S>,
    pub rho: Vector3<S>,
}

impl<S: Real> Twist<S> {
    pub fn new(phi: Vector3<S>, rho: Vector3<S>) -> Self {
        Self { phi, rho }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(v: &Vector6<S>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned())
    }

    pub fn to_vector(&self) -> Vector6<S> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.phi);
        v.fixed_rows_mut::<3>(3).copy_from(&self.rho);
        v
    }

    /// 4x4 matrix form `[[phi^x, rho], [0, 0]]`.
    pub fn wedge(&self) -> Matrix4<S> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.phi));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.rho);
        m
    }

    /// Inverse of [`Twist::wedge`].
    pub fn vee(m: &Matrix4<S>) -> Self {
        let phi = unskew(&m.fixed_view::<3, 3>(0, 0).into_owned());
        Self::new(phi, m.fixed_view::<3, 1>(0, 3).into_owned())
    }

    pub fn scale(&self, s: S) -> Self {
        Self::new(self.phi * s, self.rho * s)
    }

    pub fn norm(&self) -> S {
        self.to_vector().norm()
    }
}

impl<S: Real> Add for Twist<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.phi + o.phi, self.rho + o.rho)
    }
}

impl<S: Real> Sub for Twist<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.phi - o.phi, self.rho - o.rho)
    }
}

impl<S: Real> Neg for Twist<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.phi, -self.rho)
    }
}

/// Element of SO(3) stored as an orthonormal matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation<S: Real> {
    m: Matrix3<S>,
}

impl<S: Real> Rotation<S> {
    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    /// Validates orthonormality and a positive determinant.
    pub fn from_matrix(m: Matrix3<S>) -> Result<Self, LieError> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(LieError::NonFinite);
        }
        let dev = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if dev > S::orthonormal_tolerance() || det <= S::zero() {
            return Err(LieError::NotOrthonormal {
                deviation: to_f64(dev),
                determinant: to_f64(det),
            });
        }
        Ok(Self { m })
    }

    /// Wraps a matrix without checking it.
    pub fn from_matrix_unchecked(m: Matrix3<S>) -> Self {
        Self { m }
    }

    pub fn matrix(&self) -> &Matrix3<S> {
        &self.m
    }

    pub fn inverse(&self) -> Self {
        Self { m: self.m.transpose() }
    }

    /// Exponential map from a rotation vector.
    pub fn exp(phi: &Vector3<S>) -> Self {
        let theta2 = phi.norm_squared();
        let theta = theta2.sqrt();
        let k = skew(phi);
        let (a, b) = if theta < lit(SMALL_ANGLE) {
            (S::one() - theta2 / lit(6.0), lit::<S>(0.5) - theta2 / lit(24.0))
        } else {
            let h = theta * lit(0.5);
            let s = h.sin();
            (theta.sin() / theta, lit::<S>(2.0) * s * s / theta2)
        };
        Self { m: Matrix3::identity() + k * a + k * k * b }
    }

    /// Logarithm map, computed through the unit quaternion so that the angle
    /// is recovered with `atan2` across the whole range.
    pub fn log(&self) -> Result<Vector3<S>, LieError> {
        let q = self.to_quaternion();
        let (w, v) = (q[0], Vector3::new(q[1], q[2], q[3]));
        let n = v.norm();
        if w < S::default_epsilon().sqrt() {
            let angle = lit::<S>(2.0) * n.atan2(w);
            return Err(LieError::BranchAmbiguity { angle: to_f64(angle) });
        }
        let scale = if n < lit(SMALL_ANGLE) {
            let r = n / w;
            lit::<S>(2.0) / w * (S::one() - r * r / lit(3.0))
        } else {
            lit::<S>(2.0) * n.atan2(w) / n
        };
        Ok(v * scale)
    }

    /// Unit quaternion `[w, x, y, z]` (Hamilton, scalar first) with `w >= 0`.
    pub fn to_quaternion(&self) -> [S; 4] {
        let m = &self.m;
        let one = S::one();
        let two: S = lit(2.0);
        let quarter: S = lit(0.25);
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if tr > S::zero() {
            let s = (tr + one).sqrt() * two;
            [s * quarter, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (one + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * two;
            [(m[(2, 1)] - m[(1, 2)]) / s, s * quarter, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (one + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * two;
            [(m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, s * quarter, (m[(1, 2)] + m[(2, 1)]) / s]
        } else {
            let s = (one + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * two;
            [(m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, s * quarter]
        };
        let sign = if q[0] < S::zero() { -one } else { one };
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        let f = sign / norm;
        [q[0] * f, q[1] * f, q[2] * f, q[3] * f]
    }

    /// Builds a rotation from a unit quaternion `[w, x, y, z]`. Quaternions
    /// off unit norm by more than `1e-6` are rejected; smaller deviations
    /// are normalized away.
    pub fn from_quaternion(q: [S; 4]) -> Result<Self, LieError> {
        if q.iter().any(|x| !x.is_finite()) {
            return Err(LieError::NonFinite);
        }
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if (norm - S::one()).abs() > lit(1.0e-6) {
            return Err(LieError::NonUnitQuaternion { norm: to_f64(norm) });
        }
        let [w, x, y, z] = [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm];
        let one = S::one();
        let two: S = lit(2.0);
        let m = Matrix3::new(
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        );
        Ok(Self { m })
    }

    /// `C = Cz(yaw) Cy(pitch) Cx(roll)`.
    pub fn from_euler(roll: S, pitch: S, yaw: S) -> Self {
        let ex = Self::exp(&Vector3::new(roll, S::zero(), S::zero()));
        let ey = Self::exp(&Vector3::new(S::zero(), pitch, S::zero()));
        let ez = Self::exp(&Vector3::new(S::zero(), S::zero(), yaw));
        ez * ey * ex
    }

    /// Inverse of [`Rotation::from_euler`], returning `(roll, pitch, yaw)`.
    pub fn to_euler(&self) -> (S, S, S) {
        let m = &self.m;
        let pitch = (-m[(2, 0)]).max(-S::one()).min(S::one()).asin();
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        (roll, pitch, yaw)
    }
}

impl<S: Real> Mul for Rotation<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self { m: self.m * o.m }
    }
}

impl<S: Real> Mul<Vector3<S>> for Rotation<S> {
    type Output = Vector3<S>;
    fn mul(self, v: Vector3<S>) -> Vector3<S> {
        self.m * v
    }
}

/// Element of SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<S: Real> {
    rotation: Rotation<S>,
    translation: Vector3<S>,
}

impl<S: Real> Pose<S> {
    pub fn new(rotation: Rotation<S>, translation: Vector3<S>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<S>) -> Self {
        Self::new(Rotation::identity(), translation)
    }

    /// Validates the rotation block and the homogeneous last row.
    pub fn from_matrix(m: &Matrix4<S>) -> Result<Self, LieError> {
        let last = m.fixed_view::<1, 4>(3, 0);
        let tol = S::orthonormal_tolerance();
        if (last[0].abs() > tol) || (last[1].abs() > tol) || (last[2].abs() > tol) || ((last[3] - S::one()).abs() > tol) {
            return Err(LieError::NotOrthonormal { deviation: f64::NAN, determinant: f64::NAN });
        }
        let rotation = Rotation::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(Self::new(rotation, m.fixed_view::<3, 1>(0, 3).into_owned()))
    }

    pub fn matrix(&self) -> Matrix4<S> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Rotation<S> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<S> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let ct = self.rotation.inverse();
        Self::new(ct, -(ct * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<S>) -> Vector3<S> {
        self.rotation.m * p + self.translation
    }

    pub fn exp(xi: &Twist<S>) -> Self {
        Self::new(Rotation::exp(&xi.phi), so3_jac_left(&xi.phi) * xi.rho)
    }

    pub fn log(&self) -> Result<Twist<S>, LieError> {
        let phi = self.rotation.log()?;
        Ok(Twist::new(phi, so3_jac_left_inv(&phi) * self.translation))
    }

    /// Adjoint matrix `[[C, 0], [r^x C, C]]`.
    pub fn adjoint(&self) -> Matrix6<S> {
        let c = self.rotation.matrix();
        let mut a = Matrix6::zeros();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(c);
        a.fixed_view_mut::<3, 3>(3, 3).copy_from(c);
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&self.translation) * c));
        a
    }

    /// Applies the state perturbation convention `T = T_bar exp(-delta)`.
    pub fn perturb(&self, delta: &Twist<S>) -> Self {
        *self * Self::exp(&-*delta)
    }

    /// Geodesic interpolation `T_i exp(alpha log(T_i^-1 T_k))`.
    pub fn interpolate(&self, other: &Self, alpha: S) -> Result<Self, LieError> {
        let d = (self.inverse() * *other).log()?;
        Ok(*self * Self::exp(&d.scale(alpha)))
    }
}

impl<S: Real> Mul for Pose<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.rotation * o.rotation, self.rotation.m * o.translation + self.translation)
    }
}

impl<S: Real + fmt::Display> fmt::Display for Pose<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pose(r={}, C={})", self.translation.transpose(), self.rotation.m)
    }
}

/// Adjoint of a pose; see [`Pose::adjoint`].
pub fn adjoint<S: Real>(t: &Pose<S>) -> Matrix6<S> {
    t.adjoint()
}

/// Small adjoint `adj(xi) = [[phi^x, 0], [rho^x, phi^x]]`.
pub fn small_adjoint<S: Real>(xi: &Twist<S>) -> Matrix6<S> {
    let p = skew(&xi.phi);
    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&p);
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&p);
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&xi.rho));
    a
}

fn horner<S: Real>(x: S, coeffs: &[f64]) -> S {
    coeffs.iter().rev().fold(S::zero(), |acc, &c| acc * x + lit(c))
}

/// `(1 - cos t) / t^2`
fn coef_one_minus_cos<S: Real>(theta: S) -> S {
    let t2 = theta * theta;
    if theta < lit(SERIES_ANGLE) {
        horner(t2, &[1.0 / 2.0, -1.0 / 24.0, 1.0 / 720.0, -1.0 / 40320.0, 1.0 / 3628800.0])
    } else {
        let s = (theta * lit(0.5)).sin();
        lit::<S>(2.0) * s * s / t2
    }
}

/// `(t - sin t) / t^3`
fn coef_t_minus_sin<S: Real>(theta: S) -> S {
    let t2 = theta * theta;
    if theta < lit(SERIES_ANGLE) {
        horner(t2, &[1.0 / 6.0, -1.0 / 120.0, 1.0 / 5040.0, -1.0 / 362880.0, 1.0 / 39916800.0])
    } else {
        (theta - theta.sin()) / (t2 * theta)
    }
}

/// `(t^2 + 2 cos t - 2) / (2 t^4)`
fn coef_b<S: Real>(theta: S) -> S {
    let t2 = theta * theta;
    if theta < lit(SERIES_ANGLE) {
        horner(t2, &[1.0 / 24.0, -1.0 / 720.0, 1.0 / 40320.0, -1.0 / 3628800.0, 1.0 / 479001600.0])
    } else {
        (t2 + lit::<S>(2.0) * theta.cos() - lit(2.0)) / (lit::<S>(2.0) * t2 * t2)
    }
}

/// `(2 t - 3 sin t + t cos t) / (2 t^5)`
fn coef_c<S: Real>(theta: S) -> S {
    let t2 = theta * theta;
    if theta < lit(SERIES_ANGLE) {
        horner(t2, &[1.0 / 120.0, -2.0 / 5040.0, 3.0 / 362880.0, -4.0 / 39916800.0, 5.0 / 6227020800.0])
    } else {
        (lit::<S>(2.0) * theta - lit::<S>(3.0) * theta.sin() + theta * theta.cos()) / (lit::<S>(2.0) * t2 * t2 * theta)
    }
}

/// `(1 - (t/2) cot(t/2)) / t^2`
fn coef_inv<S: Real>(theta: S) -> S {
    let t2 = theta * theta;
    if theta < lit(SERIES_ANGLE) {
        horner(t2, &[1.0 / 12.0, 1.0 / 720.0, 1.0 / 30240.0, 1.0 / 1209600.0, 1.0 / 47900160.0])
    } else {
        let h = theta * lit(0.5);
        (S::one() - h * h.cos() / h.sin()) / t2
    }
}

/// Left Jacobian of SO(3).
pub fn so3_jac_left<S: Real>(phi: &Vector3<S>) -> Matrix3<S> {
    let theta = phi.norm();
    let k = skew(phi);
    Matrix3::identity() + k * coef_one_minus_cos(theta) + k * k * coef_t_minus_sin(theta)
}

/// Inverse left Jacobian of SO(3).
pub fn so3_jac_left_inv<S: Real>(phi: &Vector3<S>) -> Matrix3<S> {
    let theta = phi.norm();
    let k = skew(phi);
    Matrix3::identity() - k * lit::<S>(0.5) + k * k * coef_inv(theta)
}

/// Right Jacobian of SO(3), `J_r(phi) = J_l(-phi)`.
pub fn so3_jac_right<S: Real>(phi: &Vector3<S>) -> Matrix3<S> {
    so3_jac_left(&-phi)
}

/// Coupling block of the SE(3) left Jacobian.
fn q_block<S: Real>(phi: &Vector3<S>, rho: &Vector3<S>) -> Matrix3<S> {
    let theta = phi.norm();
    let p = skew(phi);
    let r = skew(rho);
    let prp = p * r * p;
    let pp = p * p;
    r * lit::<S>(0.5)
        + (p * r + r * p + prp) * coef_t_minus_sin(theta)
        + (pp * r + r * pp - prp * lit::<S>(3.0)) * coef_b(theta)
        + (prp * p + p * prp) * coef_c(theta)
}

/// Left Jacobian of SE(3), `sum adj(xi)^n / (n+1)!`.
pub fn jac_left<S: Real>(xi: &Twist<S>) -> Matrix6<S> {
    let j = so3_jac_left(&xi.phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&q_block(&xi.phi, &xi.rho));
    out
}

/// Inverse left Jacobian of SE(3).
pub fn jac_left_inv<S: Real>(xi: &Twist<S>) -> Matrix6<S> {
    let ji = so3_jac_left_inv(&xi.phi);
    let q = q_block(&xi.phi, &xi.rho);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&ji);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&ji);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-(ji * q * ji)));
    out
}

/// Right Jacobian of SE(3), `J_r(xi) = J_l(-xi)`.
pub fn jac_right<S: Real>(xi: &Twist<S>) -> Matrix6<S> {
    jac_left(&-*xi)
}

/// Inverse right Jacobian of SE(3).
pub fn jac_right_inv<S: Real>(xi: &Twist<S>) -> Matrix6<S> {
    jac_left_inv(&-*xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn expm_series(m: &Matrix4<f64>, terms: usize) -> Matrix4<f64> {
        let mut out = Matrix4::identity();
        let mut term = Matrix4::identity();
        for n in 1..terms {
            term = term * m / n as f64;
            out += term;
        }
        out
    }

    fn jr_series(xi: &Twist<f64>, terms: usize) -> Matrix6<f64> {
        let a = -small_adjoint(xi);
        let mut out = Matrix6::identity();
        let mut term = Matrix6::identity();
        for n in 1..terms {
            term = term * a / (n + 1) as f64;
            out += term;
        }
        out
    }

    fn twist_strategy(max_angle: f64) -> impl Strategy<Value = Twist<f64>> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            0.0..max_angle,
            prop::array::uniform3(-3.0f64..3.0),
        )
            .prop_filter("axis", |(a, _, _)| Vector3::from(*a).norm() > 1e-3)
            .prop_map(|(axis, angle, rho)| {
                let axis = Vector3::from(axis).normalize();
                Twist::new(axis * angle, Vector3::from(rho))
            })
    }

    #[test]
    fn exp_matches_matrix_series() {
        let xi = Twist::new(Vector3::new(0.3, -0.7, 1.1), Vector3::new(1.0, 2.0, -0.5));
        let closed = Pose::exp(&xi).matrix();
        let series = expm_series(&xi.wedge(), 40);
        assert_relative_eq!(closed, series, epsilon = 1e-12);
    }

    #[test]
    fn jacobians_match_series() {
        for xi in [
            Twist::new(Vector3::new(0.3, -0.7, 1.1), Vector3::new(1.0, 2.0, -0.5)),
            Twist::new(Vector3::new(1e-4, 2e-5, -3e-5), Vector3::new(4.0, -1.0, 0.5)),
            Twist::new(Vector3::new(0.05, 0.02, 0.0), Vector3::new(-2.0, 1.0, 3.0)),
        ] {
            let jr = jr_series(&xi, 60);
            assert_relative_eq!(jac_right(&xi), jr, epsilon = 1e-12);
            assert_relative_eq!(jac_left(&xi), jr_series(&-xi, 60), epsilon = 1e-12);
            assert_relative_eq!(jac_right_inv(&xi) * jr, Matrix6::identity(), epsilon = 1e-12);
            assert_relative_eq!(jac_left_inv(&xi) * jac_left(&xi), Matrix6::identity(), epsilon = 1e-12);
        }
    }

    #[test]
    fn adjoint_is_left_times_right_inverse() {
        let xi = Twist::new(Vector3::new(-0.4, 0.9, 0.2), Vector3::new(0.5, -2.0, 1.5));
        let lhs = Pose::exp(&xi).adjoint();
        let rhs = jac_left(&xi) * jac_right_inv(&xi);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn quaternion_roundtrip_and_hamilton_convention() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let r = Rotation::from_quaternion([h, 0.0, 0.0, h]).unwrap();
        assert_relative_eq!(r * Vector3::x(), Vector3::y(), epsilon = 1e-15);
        let c = Rotation::exp(&Vector3::new(0.2, -1.3, 2.9));
        let back = Rotation::from_quaternion(c.to_quaternion()).unwrap();
        assert_relative_eq!(back.matrix(), c.matrix(), epsilon = 1e-14);
        assert!(matches!(
            Rotation::from_quaternion([1.1, 0.0, 0.0, 0.0]),
            Err(LieError::NonUnitQuaternion { .. })
        ));
    }

    #[test]
    fn log_near_pi_is_ambiguous() {
        let c = Rotation::exp(&Vector3::new(0.0, 0.0, std::f64::consts::PI));
        assert!(matches!(c.log(), Err(LieError::BranchAmbiguity { .. })));
        let c = Rotation::exp(&Vector3::new(0.0, std::f64::consts::PI - 1e-6, 0.0));
        let phi = c.log().unwrap();
        assert_relative_eq!(phi.y, std::f64::consts::PI - 1e-6, epsilon = 1e-9);
    }

    #[test]
    fn rejects_non_rotation() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0;
        assert!(Rotation::from_matrix(m).is_err());
        m[(0, 0)] = 1.0 + 1e-6;
        assert!(Rotation::from_matrix(m).is_err());
    }

    #[test]
    fn euler_roundtrip() {
        let c = Rotation::from_euler(0.3, -0.4, 2.0);
        let (r, p, y) = c.to_euler();
        assert_relative_eq!(r, 0.3, epsilon = 1e-12);
        assert_relative_eq!(p, -0.4, epsilon = 1e-12);
        assert_relative_eq!(y, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn f32_kernel_runs() {
        let xi = Twist::<f32>::new(Vector3::new(0.1, 0.2, -0.3), Vector3::new(1.0, 0.0, 2.0));
        let back = Pose::exp(&xi).log().unwrap();
        assert!((back - xi).norm() < 1e-5);
    }

    proptest! {
        #[test]
        fn exp_log_roundtrip(xi in twist_strategy(std::f64::consts::PI - 1e-6)) {
            let back = Pose::exp(&xi).log().unwrap();
            prop_assert!((back - xi).norm() <= 1e-9 * (1.0 + xi.norm()));
        }

        #[test]
        fn adjoint_identity(xi in twist_strategy(3.0), z in twist_strategy(3.0)) {
            let t = Pose::exp(&xi);
            let lhs = t * Pose::exp(&z) * t.inverse();
            let rhs = Pose::exp(&Twist::from_vector(&(t.adjoint() * z.to_vector())));
            prop_assert!((lhs.matrix() - rhs.matrix()).abs().max() <= 1e-12 * (1.0 + xi.rho.norm()).powi(2) * 10.0);
        }

        #[test]
        fn bracket_identity(a in twist_strategy(3.0), b in twist_strategy(3.0)) {
            let lhs = small_adjoint(&a) * b.to_vector();
            let (aw, bw) = (a.wedge(), b.wedge());
            let rhs = Twist::vee(&(aw * bw - bw * aw)).to_vector();
            prop_assert!((lhs - rhs).abs().max() <= 1e-12);
        }

        #[test]
        fn left_jacobian_is_reflected_right(xi in twist_strategy(3.0)) {
            prop_assert!((jac_left(&xi) - jac_right(&-xi)).abs().max() <= 1e-12);
            prop_assert!((xi.phi - so3_jac_left(&xi.phi) * xi.phi).norm() <= 1e-12);
        }
    }
}
