//! Error terms of the smoothing objective and their analytic Jacobians.
//!
//! Every factor linearizes under the state perturbation
//! `T = T_bar exp(-dxi)`, `varpi = varpi_bar + dvarpi`, so each Jacobian block
//! spans the 12-dimensional error state of one node. Pose-only factors carry
//! zeros in the velocity columns.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Matrix6, SMatrix, Vector3};

use crate::lie::{jac_left_inv, jac_right, jac_right_inv, so3_jac_left, so3_jac_left_inv, LieError, Pose, Twist};
use crate::scalar::{lit, Real};
use crate::wnoa::{process_information, transition, Matrix12, NavState, WnoaError, WnoaPsd};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FactorError {
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Wnoa(#[from] WnoaError),
    #[error("{0} covariance is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("loop closure must satisfy idx_l1 < idx_l2, got ({0}, {1})")]
    BadClosureOrder(usize, usize),
}

/// Gaussian belief on the first node.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorBelief<S: Real> {
    pub pose_prior: Pose<S>,
    pub varpi_prior: Twist<S>,
    pub cov: Matrix12<S>,
}

/// Relative pose `Xi = T_l1^-1 T_l2` measured by aligning two submaps.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopClosureMeasurement<S: Real> {
    pub idx_l1: usize,
    pub idx_l2: usize,
    pub xi_meas: Pose<S>,
    pub cov: Matrix6<S>,
}

impl<S: Real> LoopClosureMeasurement<S> {
    pub fn validate(&self) -> Result<(), FactorError> {
        if self.idx_l1 >= self.idx_l2 {
            return Err(FactorError::BadClosureOrder(self.idx_l1, self.idx_l2));
        }
        information(&self.cov, "loop closure").map(|_| ())
    }
}

/// Evaluated factor: error, Jacobian blocks keyed by node index, and the
/// information matrix weighting the error.
#[derive(Clone, Debug, PartialEq)]
pub struct Linearization<S: Real> {
    pub error: DVector<S>,
    pub blocks: Vec<(usize, DMatrix<S>)>,
    pub weight: DMatrix<S>,
}

impl<S: Real> Linearization<S> {
    pub fn dim(&self) -> usize {
        self.error.len()
    }

    /// `0.5 e^T W e`.
    pub fn cost(&self) -> S {
        (self.error.transpose() * &self.weight * &self.error)[(0, 0)] * lit(0.5)
    }
}

/// Inverts a covariance through its Cholesky factor, rejecting matrices that
/// are not symmetric positive definite.
pub fn information<S: Real, const D: usize>(
    cov: &SMatrix<S, D, D>,
    what: &'static str,
) -> Result<SMatrix<S, D, D>, FactorError> {
    let asym = (cov - cov.transpose()).abs().max();
    if asym > cov.abs().max() * lit(1.0e-9) || cov.iter().any(|x| !x.is_finite()) {
        return Err(FactorError::NotPositiveDefinite(what));
    }
    let chol = Cholesky::new(*cov).ok_or(FactorError::NotPositiveDefinite(what))?;
    let inv = chol.inverse();
    Ok((inv + inv.transpose()) * lit::<S>(0.5))
}

fn dyn_mat<S: Real, const R: usize, const C: usize>(m: &SMatrix<S, R, C>) -> DMatrix<S> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

fn pose_block<S: Real, const R: usize>(m: &SMatrix<S, R, 6>) -> DMatrix<S> {
    let mut out = DMatrix::zeros(R, 12);
    out.view_mut((0, 0), (R, 6)).copy_from(m);
    out
}

/// `[log(T_0^-1 Y_0); varpi_0 - psi_0]` with `F = blkdiag(J_l(e)^-1, I)` and
/// weight `(M S M^T)^-1`, `M = blkdiag(-J_r(e)^-1, -I)`.
pub fn prior_error<S: Real>(state0: &NavState<S>, prior: &PriorBelief<S>) -> Result<Linearization<S>, FactorError> {
    let e = (state0.pose.inverse() * prior.pose_prior).log()?;
    let ev = state0.velocity - prior.varpi_prior;
    let mut f = Matrix12::identity();
    f.fixed_view_mut::<6, 6>(0, 0).copy_from(&jac_left_inv(&e));
    let mut m_inv = Matrix12::identity();
    m_inv.fixed_view_mut::<6, 6>(0, 0).copy_from(&jac_right(&e));
    let s_inv = information(&prior.cov, "prior")?;
    let w = m_inv.transpose() * s_inv * m_inv;
    let mut error = DVector::zeros(12);
    error.rows_mut(0, 6).copy_from(&e.to_vector());
    error.rows_mut(6, 6).copy_from(&ev.to_vector());
    Ok(Linearization {
        error,
        blocks: vec![(0, dyn_mat(&f))],
        weight: dyn_mat(&w),
    })
}

/// Raw WNOA error and its two Jacobian blocks `(F^k_{k-1}, F^k_k)`.
pub fn wnoa_terms<S: Real>(
    x0: &NavState<S>,
    x1: &NavState<S>,
    dt: S,
) -> Result<(SMatrix<S, 12, 1>, Matrix12<S>, Matrix12<S>), FactorError> {
    let step = x0.velocity.scale(dt);
    let e = (x1.pose.inverse() * x0.pose * Pose::exp(&step)).log()?;
    let ev = x1.velocity - x0.velocity;
    let jri = jac_right_inv(&e);
    let mut f0 = Matrix12::zeros();
    f0.fixed_view_mut::<6, 6>(0, 0).copy_from(&(-jri * Pose::exp(&-step).adjoint()));
    f0.fixed_view_mut::<6, 6>(0, 6).copy_from(&(jri * jac_right(&step) * dt));
    f0.fixed_view_mut::<6, 6>(6, 6).copy_from(&-Matrix6::identity());
    let mut f1 = Matrix12::identity();
    f1.fixed_view_mut::<6, 6>(0, 0).copy_from(&jac_left_inv(&e));
    let mut err = SMatrix::<S, 12, 1>::zeros();
    err.fixed_rows_mut::<6>(0).copy_from(&e.to_vector());
    err.fixed_rows_mut::<6>(6).copy_from(&ev.to_vector());
    Ok((err, f0, f1))
}

/// WNOA process factor between nodes `idx[0] = k-1` and `idx[1] = k`,
/// weighted by the inverse process covariance about `varpi_{k-1}`.
pub fn wnoa_error<S: Real>(
    idx: [usize; 2],
    state_km1: &NavState<S>,
    state_k: &NavState<S>,
    dt: S,
    psd: &WnoaPsd<S>,
) -> Result<Linearization<S>, FactorError> {
    transition(&state_km1.velocity, dt)?;
    let (e, f0, f1) = wnoa_terms(state_km1, state_k, dt)?;
    let w = process_information(&state_km1.velocity, dt, psd)?;
    Ok(Linearization {
        error: DVector::from_column_slice(e.as_slice()),
        blocks: vec![(idx[0], dyn_mat(&f0)), (idx[1], dyn_mat(&f1))],
        weight: dyn_mat(&w),
    })
}

/// Raw `log(T_2^-1 T_1 Xi)` with blocks `(H_1, H_2)` and the right Jacobian
/// `J_r(e)` that maps the measurement covariance into error space.
pub fn relative_terms<S: Real>(
    t1: &Pose<S>,
    t2: &Pose<S>,
    xi: &Pose<S>,
) -> Result<(Twist<S>, Matrix6<S>, Matrix6<S>, Matrix6<S>), FactorError> {
    let e = (t2.inverse() * *t1 * *xi).log()?;
    let jri = jac_right_inv(&e);
    let h1 = -jri * xi.inverse().adjoint();
    let h2 = jac_left_inv(&e);
    Ok((e, h1, h2, jac_right(&e)))
}

fn relative_linearization<S: Real>(
    idx: [usize; 2],
    t1: &Pose<S>,
    t2: &Pose<S>,
    xi: &Pose<S>,
    info: &Matrix6<S>,
) -> Result<Linearization<S>, FactorError> {
    let (e, h1, h2, jr) = relative_terms(t1, t2, xi)?;
    let w = jr.transpose() * info * jr;
    Ok(Linearization {
        error: DVector::from_column_slice(e.to_vector().as_slice()),
        blocks: vec![(idx[0], pose_block(&h1)), (idx[1], pose_block(&h2))],
        weight: dyn_mat(&w),
    })
}

/// Loop-closure factor `log(T_l2^-1 T_l1 Xi)` weighted by
/// `(M R M^T)^-1`, `M = -J_r(e)^-1`.
pub fn loop_closure_error<S: Real>(
    state_l1: &NavState<S>,
    state_l2: &NavState<S>,
    meas: &LoopClosureMeasurement<S>,
) -> Result<Linearization<S>, FactorError> {
    meas.validate()?;
    let info = information(&meas.cov, "loop closure")?;
    relative_linearization(
        [meas.idx_l1, meas.idx_l2],
        &state_l1.pose,
        &state_l2.pose,
        &meas.xi_meas,
        &info,
    )
}

/// Relative-pose factor between consecutive nodes against the increment
/// `xi_rel` of the initializing trajectory, weighted by `R_rel^-1` carried
/// through `J_r(e)` like the loop closures.
pub fn relative_pose_error<S: Real>(
    idx: [usize; 2],
    state_km1: &NavState<S>,
    state_k: &NavState<S>,
    xi_rel: &Pose<S>,
    info: &Matrix6<S>,
) -> Result<Linearization<S>, FactorError> {
    relative_linearization(idx, &state_km1.pose, &state_k.pose, xi_rel, info)
}

/// Roll, pitch and depth error `D E log(T_k^-1 T_check_k)`.
///
/// The depth row reduces to `z_check - z`, whose derivative is the third
/// row of `C_bar` in the translation columns. The attitude rows are the
/// first two rows of `J_so3_l(e_phi)^-1`.
pub fn observable_error<S: Real>(
    idx: usize,
    state_k: &NavState<S>,
    prior_pose_k: &Pose<S>,
    info: &Matrix3<S>,
) -> Result<Linearization<S>, FactorError> {
    let c = state_k.pose.rotation().matrix();
    let e = (state_k.pose.inverse() * *prior_pose_k).log()?;
    let ez = (c * so3_jac_left(&e.phi) * e.rho)[2];
    let error = DVector::from_column_slice(&[e.phi[0], e.phi[1], ez]);
    let jphi = so3_jac_left_inv(&e.phi);
    let mut h = DMatrix::zeros(3, 12);
    h.view_mut((0, 0), (2, 3)).copy_from(&jphi.fixed_view::<2, 3>(0, 0));
    h.view_mut((2, 3), (1, 3)).copy_from(&c.fixed_view::<1, 3>(2, 0));
    Ok(Linearization {
        error,
        blocks: vec![(idx, h)],
        weight: dyn_mat(info),
    })
}

/// Depth and attitude covariance `diag(s_rp^2, s_rp^2, s_z^2)`.
pub fn observable_covariance<S: Real>(sigma_rp: S, sigma_z: S) -> Matrix3<S> {
    Matrix3::from_diagonal(&Vector3::new(sigma_rp * sigma_rp, sigma_rp * sigma_rp, sigma_z * sigma_z))
}

/// Isotropic pose covariance `diag(s_phi^2 I, s_rho^2 I)`.
pub fn pose_covariance<S: Real>(sigma_phi: S, sigma_rho: S) -> Matrix6<S> {
    let (a, b) = (sigma_phi * sigma_phi, sigma_rho * sigma_rho);
    Matrix6::from_diagonal(&nalgebra::Vector6::new(a, a, a, b, b, b))
}
