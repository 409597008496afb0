//! White-noise-on-acceleration motion prior on SE(3) with body-centric
//! velocity.
//!
//! The mean follows `T' = T varpi^`, with `varpi = (omega, nu)` constant
//! between knots, so `T_k = T_{k-1} exp(dt varpi_{k-1})`. The linearized error
//! state `(delta xi, delta varpi)` obeys `d/dt x = A x + L w` with
//! `A = [[-adj(varpi), -I], [0, 0]]` and `L = [0; I]`.

use nalgebra::{Cholesky, Matrix6, SMatrix, SymmetricEigen, Vector6};

use crate::lie::{jac_right, small_adjoint, Pose, Twist};
use crate::scalar::{lit, Real};

pub type Matrix12<S> = SMatrix<S, 12, 12>;
pub type Vector12<S> = SMatrix<S, 12, 1>;

/// Number of series terms after which [`process_covariance`] stops even if
/// the increments have not fallen below machine precision.
const MAX_SERIES_TERMS: usize = 40;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WnoaError {
    #[error("time step must be positive and finite, got {0}")]
    NonPositiveStep(f64),
    #[error("power spectral density must be positive, got {0}")]
    NonPositivePsd(f64),
    #[error("process covariance is not positive definite")]
    Singular,
}

/// Pose and body-centric velocity at a knot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NavState<S: Real> {
    pub pose: Pose<S>,
    pub velocity: Twist<S>,
}

impl<S: Real> NavState<S> {
    pub fn new(pose: Pose<S>, velocity: Twist<S>) -> Self {
        Self { pose, velocity }
    }

    /// Applies an error-state step: `T <- T exp(-dxi)`, `varpi <- varpi + dvarpi`.
    pub fn update(&self, delta: &Vector12<S>) -> Self {
        let dxi = Twist::from_vector(&delta.fixed_rows::<6>(0).into_owned());
        let dw = Twist::from_vector(&delta.fixed_rows::<6>(6).into_owned());
        Self::new(self.pose.perturb(&dxi), self.velocity + dw)
    }
}

/// Diagonal power spectral density `diag(q_omega I, q_nu I)` of the
/// acceleration noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WnoaPsd<S: Real> {
    /// Angular acceleration PSD, rad^2 s^-3.
    pub q_omega: S,
    /// Linear acceleration PSD, m^2 s^-3.
    pub q_nu: S,
}

impl<S: Real> WnoaPsd<S> {
    pub fn new(q_omega: S, q_nu: S) -> Result<Self, WnoaError> {
        for q in [q_omega, q_nu] {
            if !(q > S::zero()) || !q.is_finite() {
                return Err(WnoaError::NonPositivePsd(crate::scalar::to_f64(q)));
            }
        }
        Ok(Self { q_omega, q_nu })
    }

    pub fn matrix(&self) -> Matrix6<S> {
        Matrix6::from_diagonal(&Vector6::new(
            self.q_omega,
            self.q_omega,
            self.q_omega,
            self.q_nu,
            self.q_nu,
            self.q_nu,
        ))
    }

    /// `L Q L^T`.
    pub fn upsilon(&self) -> Matrix12<S> {
        let mut u = Matrix12::zeros();
        u.fixed_view_mut::<6, 6>(6, 6).copy_from(&self.matrix());
        u
    }
}

fn check_step<S: Real>(dt: S) -> Result<(), WnoaError> {
    if dt > S::zero() && dt.is_finite() {
        Ok(())
    } else {
        Err(WnoaError::NonPositiveStep(crate::scalar::to_f64(dt)))
    }
}

/// Error-kinematics matrix `A` about the operating velocity.
pub fn error_kinematics<S: Real>(varpi: &Twist<S>) -> Matrix12<S> {
    let mut a = Matrix12::zeros();
    a.fixed_view_mut::<6, 6>(0, 0).copy_from(&-small_adjoint(varpi));
    a.fixed_view_mut::<6, 6>(0, 6).copy_from(&-Matrix6::identity());
    a
}

/// Closed-form transition `exp(A dt) = [[Adj(exp(-dt varpi)), -dt J_r(dt varpi)], [0, I]]`.
pub fn transition<S: Real>(varpi: &Twist<S>, dt: S) -> Result<Matrix12<S>, WnoaError> {
    check_step(dt)?;
    let step = varpi.scale(dt);
    let mut phi = Matrix12::identity();
    phi.fixed_view_mut::<6, 6>(0, 0).copy_from(&Pose::exp(&-step).adjoint());
    phi.fixed_view_mut::<6, 6>(0, 6).copy_from(&(jac_right(&step) * -dt));
    Ok(phi)
}

/// Process covariance over one interval, `int_0^dt exp(As) L Q L^T exp(As)^T ds`,
/// summed from its power series `sum_n dt^n/n! sum_j C(n-1, j) A^j U (A^T)^(n-1-j)`
/// until the increments vanish. The result is symmetrized and any
/// negative eigenvalues from round-off are clamped to zero.
pub fn process_covariance<S: Real>(
    varpi: &Twist<S>,
    dt: S,
    psd: &WnoaPsd<S>,
) -> Result<Matrix12<S>, WnoaError> {
    process_covariance_terms(varpi, dt, psd, MAX_SERIES_TERMS)
}

/// [`process_covariance`] truncated after `terms` powers of `dt`.
pub fn process_covariance_terms<S: Real>(
    varpi: &Twist<S>,
    dt: S,
    psd: &WnoaPsd<S>,
    terms: usize,
) -> Result<Matrix12<S>, WnoaError> {
    check_step(dt)?;
    // M_n = [[X, Y], [Y^T, Z]]; Z vanishes after the first term, and
    // A M + M A^T only needs the 6x6 blocks since A = [[-adj, -I], [0, 0]].
    let adj = small_adjoint(varpi);
    let (mut x, mut y, mut z) = (Matrix6::zeros(), Matrix6::zeros(), psd.matrix());
    let mut coef = dt;
    let (mut qx, mut qy, qz) = (Matrix6::zeros(), Matrix6::zeros(), z * coef);
    for n in 2..=terms {
        let u = -(adj * x) - y.transpose();
        let v = -(adj * y) - z;
        x = u + u.transpose();
        y = v;
        z = Matrix6::zeros();
        coef *= dt / lit(n as f64);
        let (ix, iy) = (x * coef, y * coef);
        qx += ix;
        qy += iy;
        let scale = qx.abs().max().max(qy.abs().max()).max(qz.abs().max());
        if ix.abs().max().max(iy.abs().max()) <= S::default_epsilon() * scale * lit(1.0e-2) {
            break;
        }
    }
    let mut q = Matrix12::zeros();
    q.fixed_view_mut::<6, 6>(0, 0).copy_from(&qx);
    q.fixed_view_mut::<6, 6>(0, 6).copy_from(&qy);
    q.fixed_view_mut::<6, 6>(6, 0).copy_from(&qy.transpose());
    q.fixed_view_mut::<6, 6>(6, 6).copy_from(&qz);
    Ok(clamp_psd(&q))
}

fn clamp_psd<S: Real>(q: &Matrix12<S>) -> Matrix12<S> {
    let sym = (q + q.transpose()) * lit::<S>(0.5);
    if Cholesky::new(sym).is_some() {
        return sym;
    }
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| if v < S::zero() { S::zero() } else { v });
    &eig.eigenvectors * Matrix12::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Inverse of the process covariance, used as the WNOA factor weight.
pub fn process_information<S: Real>(
    varpi: &Twist<S>,
    dt: S,
    psd: &WnoaPsd<S>,
) -> Result<Matrix12<S>, WnoaError> {
    let q = process_covariance(varpi, dt, psd)?;
    let chol = Cholesky::new(q).ok_or(WnoaError::Singular)?;
    let inv = chol.inverse();
    Ok((inv + inv.transpose()) * lit::<S>(0.5))
}

/// Mean propagation `(T exp(dt varpi), varpi)`.
pub fn propagate<S: Real>(state: &NavState<S>, dt: S) -> NavState<S> {
    NavState::new(state.pose * Pose::exp(&state.velocity.scale(dt)), state.velocity)
}
