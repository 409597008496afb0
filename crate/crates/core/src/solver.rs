//! Batch Gauss-Newton over the smoothing factor graph.
//!
//! The objective stacks, in order, the prior on the first node, WNOA
//! process factors, loop closures, relative-pose factors and roll/pitch/depth
//! factors. Loop closures are reweighted each iteration by a Cauchy weight on
//! their Mahalanobis distance, and Levenberg-Marquardt damping keeps the
//! objective non-increasing across accepted steps.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Matrix6, Vector6};

use crate::factors::{
    information, loop_closure_error, observable_covariance, observable_error, pose_covariance, prior_error,
    relative_pose_error, wnoa_error, FactorError, Linearization, LoopClosureMeasurement, PriorBelief,
};
use crate::lie::{Pose, Twist};
use crate::scalar::{lit, to_f64, Real};
use crate::wnoa::{Matrix12, NavState, Vector12, WnoaPsd};

const MAX_DAMPING: f64 = 1.0e8;
const FIRST_DAMPING: f64 = 1.0e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("{kind} factor {index}: {source}")]
    Factor {
        kind: FactorKind,
        index: usize,
        #[source]
        source: FactorError,
    },
    #[error("normal equations are not positive definite at node {node} (damping {damping:e})")]
    Indefinite { node: usize, damping: f64 },
    #[error("step vector has length {got}, expected {expected}")]
    StepDimension { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Prior,
    Wnoa,
    LoopClosure,
    Relative,
    Observable,
}

impl std::fmt::Display for FactorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FactorKind::Prior => "prior",
            FactorKind::Wnoa => "WNOA",
            FactorKind::LoopClosure => "loop-closure",
            FactorKind::Relative => "relative-pose",
            FactorKind::Observable => "observable",
        };
        f.write_str(s)
    }
}

/// Motion-prior and pseudo-measurement tuning.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparameters<S: Real> {
    /// Angular acceleration PSD, rad^2 s^-3.
    pub q_omega: S,
    /// Linear acceleration PSD, m^2 s^-3.
    pub q_nu: S,
    /// Relative-pose attitude standard deviation, rad.
    pub sigma_phi: S,
    /// Relative-pose displacement standard deviation, m.
    pub sigma_rho: S,
    /// Roll and pitch standard deviation, rad.
    pub sigma_rp: S,
    /// Depth standard deviation, m.
    pub sigma_z: S,
}

impl<S: Real> Hyperparameters<S> {
    /// Values tuned for the simulated survey.
    pub fn simulated() -> Self {
        Self {
            q_omega: lit(1e-2),
            q_nu: lit(9e-4),
            sigma_phi: lit(1e-3),
            sigma_rho: lit(1e-4),
            sigma_rp: lit(5f64.to_radians()),
            sigma_z: lit(0.25),
        }
    }

    /// Values tuned for field data; the pipeline default.
    pub fn field() -> Self {
        Self {
            q_omega: lit(1e-2),
            q_nu: lit(1e-4),
            sigma_phi: lit(1e-3),
            sigma_rho: lit(1e-3),
            sigma_rp: lit(5f64.to_radians()),
            sigma_z: lit(0.25),
        }
    }
}

impl<S: Real> Default for Hyperparameters<S> {
    fn default() -> Self {
        Self::field()
    }
}

/// Prior covariance on the first node: 1e-3 rad attitude, 1 cm position,
/// 1e-2 rad/s angular and 0.1 m/s linear velocity (standard deviations).
pub fn default_prior_covariance<S: Real>() -> Matrix12<S> {
    let sd = [1e-3, 1e-3, 1e-3, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2, 1e-1, 1e-1, 1e-1];
    Matrix12::from_diagonal(&Vector12::from_fn(|i, _| lit(sd[i] * sd[i])))
}

/// Nodes, timestamps and factors of the smoothing problem.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorGraph<S: Real> {
    pub times: Vec<S>,
    pub nodes: Vec<NavState<S>>,
    /// Prior on node 0. Without it at least one node must be frozen.
    pub prior: Option<PriorBelief<S>>,
    pub psd: WnoaPsd<S>,
    /// `T_check_{k-1}^-1 T_check_k` for `k = 1..n`; empty disables the factors.
    pub relative: Vec<Pose<S>>,
    pub rel_cov: Matrix6<S>,
    /// Initializing poses `T_check_k`; empty disables the factors. Node 0
    /// never carries one.
    pub observable: Vec<Pose<S>>,
    pub obs_cov: Matrix3<S>,
    pub loop_closures: Vec<LoopClosureMeasurement<S>>,
    /// Nodes held fixed during the solve.
    pub frozen: Vec<usize>,
}

impl<S: Real> FactorGraph<S> {
    /// Builds the graph around an initializing trajectory: nodes start at
    /// the given states, the prior anchors node 0 at its initial value with
    /// covariance `prior_cov`, and relative-pose and observable factors are
    /// taken from the initializing poses.
    pub fn from_initial(
        times: Vec<S>,
        nodes: Vec<NavState<S>>,
        hyper: &Hyperparameters<S>,
        prior_cov: Matrix12<S>,
    ) -> Result<Self, SolverError> {
        if nodes.is_empty() {
            return Err(SolverError::InvalidGraph("no nodes".into()));
        }
        let psd = WnoaPsd::new(hyper.q_omega, hyper.q_nu)
            .map_err(|e| SolverError::InvalidGraph(e.to_string()))?;
        let poses: Vec<Pose<S>> = nodes.iter().map(|n| n.pose).collect();
        let relative = poses.windows(2).map(|w| w[0].inverse() * w[1]).collect();
        let graph = Self {
            prior: Some(PriorBelief { pose_prior: nodes[0].pose, varpi_prior: nodes[0].velocity, cov: prior_cov }),
            times,
            nodes,
            psd,
            relative,
            rel_cov: pose_covariance(hyper.sigma_phi, hyper.sigma_rho),
            observable: poses,
            obs_cov: observable_covariance(hyper.sigma_rp, hyper.sigma_z),
            loop_closures: Vec::new(),
            frozen: Vec::new(),
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn poses(&self) -> Vec<Pose<S>> {
        self.nodes.iter().map(|n| n.pose).collect()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.nodes.len();
        let bad = |m: String| Err(SolverError::InvalidGraph(m));
        if n == 0 {
            return bad("no nodes".into());
        }
        if self.times.len() != n {
            return bad(format!("{} timestamps for {} nodes", self.times.len(), n));
        }
        if let Some(k) = self.times.windows(2).position(|w| !(w[1] > w[0])) {
            return bad(format!("timestamps not strictly increasing at node {}", k + 1));
        }
        if !self.relative.is_empty() && self.relative.len() != n - 1 {
            return bad(format!("{} relative-pose measurements for {} nodes", self.relative.len(), n));
        }
        if !self.observable.is_empty() && self.observable.len() != n {
            return bad(format!("{} observable priors for {} nodes", self.observable.len(), n));
        }
        if self.prior.is_none() && self.frozen.is_empty() {
            return bad("a graph without a prior needs a frozen node".into());
        }
        if let Some(&f) = self.frozen.iter().find(|&&f| f >= n) {
            return bad(format!("frozen node {f} out of range"));
        }
        for (i, lc) in self.loop_closures.iter().enumerate() {
            if lc.idx_l2 >= n {
                return bad(format!("loop closure {i} references node {} of {n}", lc.idx_l2));
            }
            lc.validate().map_err(|source| SolverError::Factor { kind: FactorKind::LoopClosure, index: i, source })?;
        }
        Ok(())
    }

    /// Applies a stacked error-state step to every node.
    pub fn update_states(&self, delta: &DVector<S>) -> Result<Self, SolverError> {
        let expected = 12 * self.nodes.len();
        if delta.len() != expected {
            return Err(SolverError::StepDimension { got: delta.len(), expected });
        }
        let mut out = self.clone();
        for (k, node) in out.nodes.iter_mut().enumerate() {
            let d = Vector12::from_column_slice(&delta.as_slice()[12 * k..12 * k + 12]);
            *node = node.update(&d);
        }
        Ok(out)
    }
}

/// Robust-cost settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustCost<S: Real> {
    pub enabled: bool,
    /// Attitude scale of the outlier Mahalanobis distance, rad.
    pub sigma_phi_out: S,
    /// Position scale of the outlier Mahalanobis distance, m.
    pub sigma_rho_out: S,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig<S: Real> {
    pub max_iterations: usize,
    /// Convergence threshold on the infinity norm of the step.
    pub step_tolerance: S,
    pub robust: RobustCost<S>,
    /// Initial Levenberg-Marquardt damping; zero starts as pure Gauss-Newton.
    pub damping: S,
}

impl<S: Real> Default for SolverConfig<S> {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: lit(1e-8),
            robust: RobustCost { enabled: true, sigma_phi_out: lit(1f64.to_radians()), sigma_rho_out: lit(1.0) },
            damping: S::zero(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    /// Step fell below the tolerance.
    Converged,
    /// No damping level produced a decrease; the iterate is a local minimum
    /// to within round-off.
    Stalled,
    MaxIterations,
    /// Normal equations could not be factored at any damping level.
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport<S: Real> {
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: S,
    /// Objective at the initial iterate followed by every accepted step.
    pub objective_trace: Vec<S>,
    pub weights: Vec<S>,
}

impl<S: Real> SolveReport<S> {
    pub fn succeeded(&self) -> bool {
        matches!(self.status, SolveStatus::Converged | SolveStatus::Stalled)
    }
}

/// Cauchy weight `1 / (1 + eps^2)` with `eps` the Mahalanobis distance of
/// `error` under `blkdiag(s_phi^2 I, s_rho^2 I)`.
pub fn robust_weight<S: Real>(error: &Vector6<S>, sigma_phi_out: S, sigma_rho_out: S) -> S {
    let a = error.fixed_rows::<3>(0).norm_squared() / (sigma_phi_out * sigma_phi_out);
    let b = error.fixed_rows::<3>(3).norm_squared() / (sigma_rho_out * sigma_rho_out);
    S::one() / (S::one() + a + b)
}

/// One evaluated factor with its position in the stacked system.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorRow<S: Real> {
    pub kind: FactorKind,
    pub index: usize,
    pub lin: Linearization<S>,
}

/// Stacked linear system `(e, Gamma, W)` in block-row order.
#[derive(Clone, Debug, PartialEq)]
pub struct Assembly<S: Real> {
    pub nodes: usize,
    pub rows: Vec<FactorRow<S>>,
}

impl<S: Real> Assembly<S> {
    pub fn row_count(&self) -> usize {
        self.rows.iter().map(|r| r.lin.dim()).sum()
    }

    pub fn error(&self) -> DVector<S> {
        let mut e = DVector::zeros(self.row_count());
        let mut off = 0;
        for r in &self.rows {
            e.rows_mut(off, r.lin.dim()).copy_from(&r.lin.error);
            off += r.lin.dim();
        }
        e
    }

    pub fn jacobian(&self) -> DMatrix<S> {
        let mut g = DMatrix::zeros(self.row_count(), 12 * self.nodes);
        let mut off = 0;
        for r in &self.rows {
            for (node, b) in &r.lin.blocks {
                g.view_mut((off, 12 * node), (r.lin.dim(), 12)).copy_from(b);
            }
            off += r.lin.dim();
        }
        g
    }

    pub fn weight(&self) -> DMatrix<S> {
        let n = self.row_count();
        let mut w = DMatrix::zeros(n, n);
        let mut off = 0;
        for r in &self.rows {
            let d = r.lin.dim();
            w.view_mut((off, off), (d, d)).copy_from(&r.lin.weight);
            off += d;
        }
        w
    }

    pub fn objective(&self) -> S {
        self.rows.iter().fold(S::zero(), |acc, r| acc + r.lin.cost())
    }
}

fn factor_err<S: Real>(kind: FactorKind, index: usize) -> impl Fn(FactorError) -> SolverError {
    move |source| SolverError::Factor { kind, index, source }
}

/// Robust loop-closure weights at the current states; all ones when the
/// robust cost is disabled.
pub fn loop_closure_weights<S: Real>(graph: &FactorGraph<S>, robust: &RobustCost<S>) -> Result<Vec<S>, SolverError> {
    graph
        .loop_closures
        .iter()
        .enumerate()
        .map(|(i, lc)| {
            if !robust.enabled {
                return Ok(S::one());
            }
            let (a, b) = (&graph.nodes[lc.idx_l1].pose, &graph.nodes[lc.idx_l2].pose);
            let e = (b.inverse() * *a * lc.xi_meas)
                .log()
                .map_err(|e| factor_err::<S>(FactorKind::LoopClosure, i)(e.into()))?;
            Ok(robust_weight(&e.to_vector(), robust.sigma_phi_out, robust.sigma_rho_out))
        })
        .collect()
}

/// Linearizes every factor. `weights` scales the loop-closure information
/// matrices and must hold one entry per closure.
pub fn assemble<S: Real>(graph: &FactorGraph<S>, weights: &[S]) -> Result<Assembly<S>, SolverError> {
    graph.validate()?;
    if weights.len() != graph.loop_closures.len() {
        return Err(SolverError::InvalidGraph(format!(
            "{} robust weights for {} loop closures",
            weights.len(),
            graph.loop_closures.len()
        )));
    }
    let n = graph.nodes.len();
    let mut rows = Vec::with_capacity(4 * n + graph.loop_closures.len());
    if let Some(prior) = &graph.prior {
        let lin = prior_error(&graph.nodes[0], prior).map_err(factor_err::<S>(FactorKind::Prior, 0))?;
        rows.push(FactorRow { kind: FactorKind::Prior, index: 0, lin });
    }
    for k in 1..n {
        let dt = graph.times[k] - graph.times[k - 1];
        let lin = wnoa_error([k - 1, k], &graph.nodes[k - 1], &graph.nodes[k], dt, &graph.psd)
            .map_err(factor_err::<S>(FactorKind::Wnoa, k))?;
        rows.push(FactorRow { kind: FactorKind::Wnoa, index: k, lin });
    }
    for (i, lc) in graph.loop_closures.iter().enumerate() {
        let mut lin = loop_closure_error(&graph.nodes[lc.idx_l1], &graph.nodes[lc.idx_l2], lc)
            .map_err(factor_err::<S>(FactorKind::LoopClosure, i))?;
        lin.weight *= weights[i];
        rows.push(FactorRow { kind: FactorKind::LoopClosure, index: i, lin });
    }
    if !graph.relative.is_empty() {
        let info = information(&graph.rel_cov, "relative-pose").map_err(factor_err::<S>(FactorKind::Relative, 0))?;
        for k in 1..n {
            let lin = relative_pose_error([k - 1, k], &graph.nodes[k - 1], &graph.nodes[k], &graph.relative[k - 1], &info)
                .map_err(factor_err::<S>(FactorKind::Relative, k))?;
            rows.push(FactorRow { kind: FactorKind::Relative, index: k, lin });
        }
    }
    if !graph.observable.is_empty() {
        let info = information(&graph.obs_cov, "observable").map_err(factor_err::<S>(FactorKind::Observable, 0))?;
        for k in 1..n {
            let lin = observable_error(k, &graph.nodes[k], &graph.observable[k], &info)
                .map_err(factor_err::<S>(FactorKind::Observable, k))?;
            rows.push(FactorRow { kind: FactorKind::Observable, index: k, lin });
        }
    }
    Ok(Assembly { nodes: n, rows })
}

/// Symmetric block matrix with 12x12 blocks stored by rows from each row's
/// first nonzero block to the diagonal. Cholesky factorization fills only
/// inside this envelope.
#[derive(Clone, Debug)]
pub struct BlockEnvelope<S: Real> {
    first: Vec<usize>,
    rows: Vec<Vec<Matrix12<S>>>,
}

impl<S: Real> BlockEnvelope<S> {
    /// Allocates the envelope for a set of coupled node pairs.
    pub fn new(n: usize, couplings: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (a, b) in couplings {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            first[hi] = first[hi].min(lo);
        }
        let rows = (0..n).map(|i| vec![Matrix12::zeros(); i - first[i] + 1]).collect();
        Self { first, rows }
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    /// Adds `m` to block `(i, j)`; only the lower triangle (`i >= j`) is stored.
    pub fn add(&mut self, i: usize, j: usize, m: &Matrix12<S>) {
        if i >= j {
            self.rows[i][j - self.first[i]] += m;
        } else {
            self.rows[j][i - self.first[j]] += m.transpose();
        }
    }

    pub fn block(&self, i: usize, j: usize) -> Matrix12<S> {
        let (i, j, t) = if i >= j { (i, j, false) } else { (j, i, true) };
        let b = if j >= self.first[i] { self.rows[i][j - self.first[i]] } else { Matrix12::zeros() };
        if t {
            b.transpose()
        } else {
            b
        }
    }

    /// Full symmetric product `H v`.
    pub fn mul_vec(&self, v: &DVector<S>) -> DVector<S> {
        let seg = |i: usize| Vector12::from_column_slice(&v.as_slice()[12 * i..12 * i + 12]);
        let mut out = DVector::zeros(v.len());
        for (i, row) in self.rows.iter().enumerate() {
            let fi = self.first[i];
            for (off, b) in row.iter().enumerate() {
                let j = fi + off;
                let mut oi = out.rows_mut(12 * i, 12);
                oi += b * seg(j);
                if j != i {
                    let mut oj = out.rows_mut(12 * j, 12);
                    oj += b.transpose() * seg(i);
                }
            }
        }
        out
    }

    /// Replaces row and column `i` by the identity.
    pub fn pin(&mut self, i: usize) {
        for b in self.rows[i].iter_mut() {
            *b = Matrix12::zeros();
        }
        *self.rows[i].last_mut().unwrap() = Matrix12::identity();
        for r in i + 1..self.rows.len() {
            if self.first[r] <= i {
                self.rows[r][i - self.first[r]] = Matrix12::zeros();
            }
        }
    }

    /// In-place block Cholesky `H = L L^T`. Fails with the offending row.
    pub fn factor(mut self) -> Result<EnvelopeCholesky<S>, usize> {
        let n = self.rows.len();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let mut s = self.rows[i][j - fi];
                for k in fi.max(fj)..j {
                    s -= self.rows[i][k - fi] * self.rows[j][k - fj].transpose();
                }
                if j < i {
                    let ljj = &self.rows[j][j - fj];
                    let x = ljj
                        .solve_lower_triangular(&s.transpose())
                        .ok_or(j)?;
                    self.rows[i][j - fi] = x.transpose();
                } else {
                    let sym = (s + s.transpose()) * lit::<S>(0.5);
                    let chol = Cholesky::new(sym).ok_or(i)?;
                    self.rows[i][i - fi] = chol.l();
                }
            }
        }
        Ok(EnvelopeCholesky { env: self })
    }
}

/// Lower-triangular factor produced by [`BlockEnvelope::factor`].
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky<S: Real> {
    env: BlockEnvelope<S>,
}

impl<S: Real> EnvelopeCholesky<S> {
    pub fn solve(&self, b: &DVector<S>) -> DVector<S> {
        let n = self.env.rows.len();
        let seg = |v: &DVector<S>, i: usize| Vector12::from_column_slice(&v.as_slice()[12 * i..12 * i + 12]);
        let mut y = b.clone();
        for i in 0..n {
            let fi = self.env.first[i];
            let mut r = seg(&y, i);
            for k in fi..i {
                r -= self.env.rows[i][k - fi] * seg(&y, k);
            }
            let yi = self.env.rows[i][i - fi].solve_lower_triangular(&r).unwrap_or(r);
            y.rows_mut(12 * i, 12).copy_from(&yi);
        }
        let mut x = y;
        for i in (0..n).rev() {
            let fi = self.env.first[i];
            let xi = self.env.rows[i][i - fi]
                .transpose()
                .solve_upper_triangular(&seg(&x, i))
                .unwrap_or_else(|| seg(&x, i));
            x.rows_mut(12 * i, 12).copy_from(&xi);
            for k in fi..i {
                let upd = self.env.rows[i][k - fi].transpose() * xi;
                let cur = seg(&x, k) - upd;
                x.rows_mut(12 * k, 12).copy_from(&cur);
            }
        }
        x
    }
}

/// Normal equations `H = Gamma^T W Gamma`, `g = Gamma^T W e`.
#[derive(Clone, Debug)]
pub struct NormalEquations<S: Real> {
    pub hessian: BlockEnvelope<S>,
    pub gradient: DVector<S>,
}

impl<S: Real> NormalEquations<S> {
    pub fn build(asm: &Assembly<S>, frozen: &[usize]) -> Self {
        let couplings = asm.rows.iter().flat_map(|r| {
            let b = &r.lin.blocks;
            (0..b.len()).flat_map(move |i| (0..b.len()).map(move |j| (b[i].0, b[j].0)))
        });
        let mut h = BlockEnvelope::new(asm.nodes, couplings);
        let mut g = DVector::zeros(12 * asm.nodes);
        for r in &asm.rows {
            let we = &r.lin.weight * &r.lin.error;
            let wj: Vec<DMatrix<S>> = r.lin.blocks.iter().map(|(_, b)| &r.lin.weight * b).collect();
            for (na, ja) in r.lin.blocks.iter() {
                let ga = ja.transpose() * &we;
                let mut seg = g.rows_mut(12 * na, 12);
                seg += ga;
                for (b, (nb, _)) in r.lin.blocks.iter().enumerate() {
                    if nb > na {
                        continue;
                    }
                    let blk = ja.transpose() * &wj[b];
                    h.add(*na, *nb, &Matrix12::from_column_slice(blk.as_slice()));
                }
            }
        }
        for &f in frozen {
            h.pin(f);
            g.rows_mut(12 * f, 12).fill(S::zero());
        }
        Self { hessian: h, gradient: g }
    }

    /// Solves `(H + lambda diag(H)) dx = -g`.
    pub fn step(&self, lambda: S) -> Result<DVector<S>, usize> {
        let mut h = self.hessian.clone();
        if lambda > S::zero() {
            for i in 0..h.size() {
                let d = h.block(i, i);
                let mut damp = Matrix12::zeros();
                for k in 0..12 {
                    damp[(k, k)] = d[(k, k)] * lambda;
                }
                h.add(i, i, &damp);
            }
        }
        let chol = h.factor()?;
        Ok(chol.solve(&-&self.gradient))
    }
}

/// Quadratic model value `J + g^T dx + 0.5 dx^T H dx`.
fn predicted_objective<S: Real>(j0: S, ne: &NormalEquations<S>, dx: &DVector<S>) -> S {
    j0 + ne.gradient.dot(dx) + dx.dot(&ne.hessian.mul_vec(dx)) * lit(0.5)
}

/// One damped Gauss-Newton step from the current states with robust
/// weights evaluated there. Returns the step and the quadratic model's
/// objective after it.
pub fn gauss_newton_step<S: Real>(
    graph: &FactorGraph<S>,
    config: &SolverConfig<S>,
) -> Result<(DVector<S>, S), SolverError> {
    let w = loop_closure_weights(graph, &config.robust)?;
    let asm = assemble(graph, &w)?;
    let ne = NormalEquations::build(&asm, &graph.frozen);
    let dx = ne
        .step(config.damping)
        .map_err(|node| SolverError::Indefinite { node, damping: to_f64(config.damping) })?;
    let pred = predicted_objective(asm.objective(), &ne, &dx);
    Ok((dx, pred))
}

fn evaluate<S: Real>(graph: &FactorGraph<S>, robust: &RobustCost<S>) -> Result<(Assembly<S>, Vec<S>), SolverError> {
    let w = loop_closure_weights(graph, robust)?;
    let asm = assemble(graph, &w)?;
    Ok((asm, w))
}

/// Iterates linearize, step and update until the step falls below the
/// tolerance. The objective is evaluated with robust weights at each
/// iterate; a step that would raise it is retried with more damping.
pub fn solve<S: Real>(graph: &FactorGraph<S>, config: &SolverConfig<S>) -> Result<(FactorGraph<S>, SolveReport<S>), SolverError> {
    graph.validate()?;
    let mut x = graph.clone();
    let (mut asm, mut weights) = evaluate(&x, &config.robust)?;
    let mut j = asm.objective();
    let mut trace = vec![j];
    let mut lambda = config.damping;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    'outer: while iterations < config.max_iterations {
        iterations += 1;
        let ne = NormalEquations::build(&asm, &x.frozen);
        loop {
            let dx = match ne.step(lambda) {
                Ok(dx) => dx,
                Err(node) => {
                    lambda = escalate(lambda);
                    if lambda > lit(MAX_DAMPING) {
                        status = SolveStatus::Failed(format!("normal equations indefinite at node {node}"));
                        break 'outer;
                    }
                    continue;
                }
            };
            if dx.iter().any(|v| !v.is_finite()) {
                status = SolveStatus::Failed("non-finite step".into());
                break 'outer;
            }
            if dx.amax() < config.step_tolerance {
                status = SolveStatus::Converged;
                break 'outer;
            }
            let candidate = x.update_states(&dx)?;
            let trial = evaluate(&candidate, &config.robust);
            let accepted = match &trial {
                Ok((a, _)) => {
                    let jc = a.objective();
                    jc.is_finite() && jc <= j
                }
                Err(_) => false,
            };
            if accepted {
                let (a, w) = trial?;
                x = candidate;
                asm = a;
                weights = w;
                j = asm.objective();
                trace.push(j);
                lambda /= lit(10.0);
                if lambda < lit(1e-12) {
                    lambda = S::zero();
                }
                break;
            }
            lambda = escalate(lambda);
            if lambda > lit(MAX_DAMPING) {
                status = SolveStatus::Stalled;
                break 'outer;
            }
        }
    }
    log::debug!("solve finished after {iterations} iterations: {:?}", status);
    let report = SolveReport { status, iterations, objective: j, objective_trace: trace, weights };
    Ok((x, report))
}

fn escalate<S: Real>(lambda: S) -> S {
    if lambda > S::zero() {
        lambda * lit(10.0)
    } else {
        lit(FIRST_DAMPING)
    }
}

/// Convenience for building node states from poses with velocities
/// estimated by finite differences, `varpi_k = log(T_k^-1 T_{k+1}) / dt`.
pub fn states_from_poses<S: Real>(times: &[S], poses: &[Pose<S>]) -> Result<Vec<NavState<S>>, SolverError> {
    let n = poses.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let v = if n < 2 {
            Twist::zero()
        } else {
            let (a, b) = if k + 1 < n { (k, k + 1) } else { (k - 1, k) };
            let d = (poses[a].inverse() * poses[b])
                .log()
                .map_err(|e| SolverError::InvalidGraph(format!("velocity at node {k}: {e}")))?;
            d.scale(S::one() / (times[b] - times[a]))
        };
        out.push(NavState::new(poses[k], v));
    }
    Ok(out)
}
