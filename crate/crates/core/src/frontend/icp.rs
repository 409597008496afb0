//! Iterative closest point with mixed point-to-point / point-to-plane errors
//! and fractional-RMSD inlier selection.

use nalgebra::{Matrix6, Vector3, Vector6};

use super::cloud::Submap;
use super::kdtree::KdTree;
use super::FrontendError;
use crate::lie::skew;
use crate::{Pose, Twist};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    PointToPoint,
    PointToPlane,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub inlier: bool,
    pub weight: f64,
    pub kind: ErrorKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpParams {
    pub max_iterations: usize,
    pub tol_phi: f64,
    pub tol_rho: f64,
    /// Associations farther than this are never inliers.
    pub max_correspondence: f64,
    /// Targets with surface variation below this use point-to-plane errors.
    pub plane_threshold: f64,
    /// Exponent of the fraction in `RMSD(f) / f^lambda`.
    pub frmsd_lambda: f64,
    pub frmsd_min_fraction: f64,
    pub frmsd_step: f64,
    /// Alignment fails when the selected inlier fraction falls below this.
    pub min_inlier_fraction: f64,
    pub divergence_limit: usize,
    /// Isotropic per-point standard deviation.
    pub point_sigma: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            tol_phi: 1e-2,
            tol_rho: 1e-3,
            max_correspondence: 1.0,
            plane_threshold: 3e-2,
            frmsd_lambda: 3.0,
            frmsd_min_fraction: 0.2,
            frmsd_step: 0.05,
            min_inlier_fraction: 0.2,
            divergence_limit: 3,
            point_sigma: 0.025,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpReport {
    pub iterations: usize,
    pub converged: bool,
    pub inlier_fraction: f64,
    /// RMS residual over the selected inliers at the last association.
    pub rmsd: f64,
    /// Objective before and after each pose update, at fixed correspondences.
    pub inner_objectives: Vec<(f64, f64)>,
    pub correspondences: Vec<Correspondence>,
}

struct Assoc {
    target: usize,
    kind: ErrorKind,
    residual: f64,
}

fn residual(kind: ErrorKind, q: &Vector3<f64>, n: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    match kind {
        ErrorKind::PointToPoint => (q - p).norm(),
        ErrorKind::PointToPlane => n.dot(&(q - p)).abs(),
    }
}

/// Indices into `sorted` kept by the fractional-RMSD rule, as a fraction of
/// `total` source points. Ties favour the larger fraction.
fn frmsd_select(sorted: &[f64], total: usize, p: &IcpParams) -> Option<(usize, f64)> {
    let steps = ((1.0 - p.frmsd_min_fraction) / p.frmsd_step).round() as usize;
    let mut best: Option<(usize, f64)> = None;
    let mut best_score = f64::INFINITY;
    let mut prefix = vec![0.0; sorted.len() + 1];
    for (i, r) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + r * r;
    }
    for s in (0..=steps).rev() {
        let f = p.frmsd_min_fraction + s as f64 * p.frmsd_step;
        let m = (f * total as f64 - 1e-9).ceil() as usize;
        if m == 0 || m > sorted.len() {
            continue;
        }
        let rmsd = (prefix[m] / m as f64).sqrt();
        let score = rmsd / f.powf(p.frmsd_lambda);
        if score < best_score {
            best_score = score;
            best = Some((m, rmsd));
        }
    }
    best
}

/// Aligns `source` onto `target`, returning `T` such that `T * p_source`
/// lands on the target surface. `target` must carry normals and variation.
pub fn icp_align(source: &Submap, target: &Submap, init: &Pose, params: &IcpParams) -> Result<(Pose, IcpReport), FrontendError> {
    let (Some(normals), Some(variation)) = (&target.normals, &target.variation) else {
        return Err(FrontendError::MissingNormals);
    };
    if source.is_empty() || target.is_empty() {
        return Err(FrontendError::InsufficientOverlap { found: 0, required: 1 });
    }
    let tree = KdTree::new(&target.points);
    let kind_of = |j: usize| {
        if variation[j] < params.plane_threshold {
            ErrorKind::PointToPlane
        } else {
            ErrorKind::PointToPoint
        }
    };
    let w = 1.0 / (params.point_sigma * params.point_sigma);
    let total = source.len();
    let max_d2 = params.max_correspondence * params.max_correspondence;

    let mut pose = *init;
    let mut report = IcpReport {
        iterations: 0,
        converged: false,
        inlier_fraction: 0.0,
        rmsd: f64::NAN,
        inner_objectives: Vec::new(),
        correspondences: Vec::new(),
    };
    let mut last_score = f64::INFINITY;
    let mut increases = 0;

    for it in 0..params.max_iterations {
        report.iterations = it + 1;
        let moved: Vec<Vector3<f64>> = source.points.iter().map(|p| pose.transform_point(p)).collect();
        let mut assoc: Vec<(usize, Assoc)> = Vec::with_capacity(total);
        for (i, p) in moved.iter().enumerate() {
            if let Some((j, d2)) = tree.nearest(p) {
                if d2 <= max_d2 {
                    let kind = kind_of(j);
                    let r = residual(kind, &target.points[j], &normals[j], p);
                    assoc.push((i, Assoc { target: j, kind, residual: r }));
                }
            }
        }
        assoc.sort_by(|a, b| a.1.residual.total_cmp(&b.1.residual).then(a.0.cmp(&b.0)));
        let sorted: Vec<f64> = assoc.iter().map(|a| a.1.residual).collect();
        let Some((m, rmsd)) = frmsd_select(&sorted, total, params) else {
            return Err(FrontendError::AlignmentFailed(format!(
                "{} of {} source points associated",
                assoc.len(),
                total
            )));
        };
        let fraction = m as f64 / total as f64;
        report.inlier_fraction = fraction;
        report.rmsd = rmsd;
        report.correspondences = assoc
            .iter()
            .enumerate()
            .map(|(rank, (i, a))| Correspondence {
                source: *i,
                target: a.target,
                inlier: rank < m,
                weight: if rank < m { 1.0 } else { 0.0 },
                kind: a.kind,
            })
            .collect();
        if fraction < params.min_inlier_fraction {
            return Err(FrontendError::AlignmentFailed(format!("inlier fraction {fraction:.3}")));
        }
        let score = rmsd / fraction.powf(params.frmsd_lambda);
        if score > last_score {
            increases += 1;
            if increases >= params.divergence_limit {
                return Err(FrontendError::AlignmentFailed("objective increased on consecutive iterations".into()));
            }
        } else {
            increases = 0;
        }
        last_score = score;

        let inliers = &assoc[..m];
        let objective = |t: &Pose| -> f64 {
            inliers
                .iter()
                .map(|(i, a)| {
                    let p = t.transform_point(&source.points[*i]);
                    w * residual(a.kind, &target.points[a.target], &normals[a.target], &p).powi(2)
                })
                .sum::<f64>()
        };
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (i, a) in inliers {
            let p = moved[*i];
            let q = target.points[a.target];
            let mut jac = nalgebra::Matrix3x6::<f64>::zeros();
            jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&p)));
            jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&nalgebra::Matrix3::identity());
            match a.kind {
                ErrorKind::PointToPoint => {
                    let e = q - p;
                    h += w * jac.transpose() * jac;
                    g += w * jac.transpose() * e;
                }
                ErrorKind::PointToPlane => {
                    let n = normals[a.target];
                    let row = n.transpose() * jac;
                    h += w * row.transpose() * row;
                    g += w * row.transpose() * n.dot(&(q - p));
                }
            }
        }
        // residual e = q - p(delta) has de/d(delta) = -jac, so the step solves H delta = g
        let delta = solve_psd(&h, &g);
        let before = objective(&pose);
        let mut step = delta;
        let mut candidate = Pose::exp(&Twist::from_vector(&step)) * pose;
        let mut after = objective(&candidate);
        let mut halvings = 0;
        while after > before && halvings < 30 {
            step *= 0.5;
            candidate = Pose::exp(&Twist::from_vector(&step)) * pose;
            after = objective(&candidate);
            halvings += 1;
        }
        if after > before {
            step = Vector6::zeros();
            candidate = pose;
            after = before;
        }
        report.inner_objectives.push((before, after));
        pose = candidate;
        let (dphi, drho) = (step.fixed_rows::<3>(0).norm(), step.fixed_rows::<3>(3).norm());
        if dphi < params.tol_phi && drho < params.tol_rho {
            report.converged = true;
            break;
        }
    }
    Ok((pose, report))
}

fn solve_psd(h: &Matrix6<f64>, g: &Vector6<f64>) -> Vector6<f64> {
    let scale = h.trace().max(f64::MIN_POSITIVE);
    if let Some(ch) = (h + Matrix6::identity() * (1e-12 * scale)).cholesky() {
        return ch.solve(g);
    }
    h.svd(true, true).solve(g, 1e-9 * scale).unwrap_or_else(|_| Vector6::zeros())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::cloud::{estimate_normals_and_variation, Frame};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn terrain(x: f64, y: f64) -> f64 {
        0.6 * (-((x - 1.0).powi(2) + (y + 0.5).powi(2)) / 1.5).exp() + 0.4 * (-((x + 1.5).powi(2) + (y - 1.0).powi(2)) / 0.8).exp()
            + 0.15 * (0.9 * x).sin() * (0.7 * y).cos()
    }

    fn surface(lo: (f64, f64), hi: (f64, f64), h: f64) -> Vec<Vector3<f64>> {
        let nx = ((hi.0 - lo.0) / h) as usize;
        let ny = ((hi.1 - lo.1) / h) as usize;
        (0..=nx)
            .flat_map(|i| (0..=ny).map(move |j| (lo.0 + i as f64 * h, lo.1 + j as f64 * h)))
            .map(|(x, y)| Vector3::new(x, y, 6.0 + terrain(x, y)))
            .collect()
    }

    fn prepared(points: Vec<Vector3<f64>>) -> Submap {
        estimate_normals_and_variation(Submap::new(points, Frame::World), 40, &Vector3::zeros()).unwrap()
    }

    #[test]
    fn identical_clouds_converge_immediately() {
        let pts = surface((-4.0, -4.0), (4.0, 4.0), 0.1);
        let target = prepared(pts.clone());
        let (t, rep) = icp_align(&Submap::new(pts, Frame::World), &target, &Pose::identity(), &IcpParams::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert!(t.log().unwrap().to_vector().norm() < 1e-9);
    }

    #[test]
    fn recovers_known_offset() {
        let target = prepared(surface((-5.0, -5.0), (5.0, 5.0), 0.1));
        let g = Pose::exp(&Twist::new(Vector3::new(0.02, -0.03, 0.12), Vector3::new(0.3, -0.2, 0.1)));
        let src: Vec<Vector3<f64>> = surface((-4.0, -4.0), (4.0, 4.0), 0.1).iter().map(|p| g.inverse().transform_point(p)).collect();
        let (t, rep) = icp_align(&Submap::new(src, Frame::World), &target, &Pose::identity(), &IcpParams::default()).unwrap();
        let err = (g.inverse() * t).log().unwrap();
        assert!(err.phi.norm() < 1e-2 && err.rho.norm() < 1e-2, "{err:?} after {} iterations", rep.iterations);
        for (b, a) in &rep.inner_objectives {
            assert!(a <= b);
        }
    }

    #[test]
    fn partial_overlap_selects_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut noisy = |pts: Vec<Vector3<f64>>| -> Vec<Vector3<f64>> {
            pts.into_iter()
                .map(|p| p + Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)) * 0.01)
                .collect()
        };
        let target = prepared(noisy(surface((-5.0, -4.0), (3.0, 4.0), 0.1)));
        let src = noisy(surface((-3.0, -4.0), (5.0, 4.0), 0.1));
        let (t, rep) = icp_align(&Submap::new(src, Frame::World), &target, &Pose::identity(), &IcpParams::default()).unwrap();
        assert!(rep.inlier_fraction > 0.4 && rep.inlier_fraction < 1.0, "fraction {}", rep.inlier_fraction);
        let e = t.log().unwrap();
        assert!(e.phi.norm() < 1e-2 && e.rho.norm() < 2e-2);
    }

    #[test]
    fn disjoint_clouds_fail() {
        let target = prepared(surface((-5.0, -5.0), (5.0, 5.0), 0.2));
        let src: Vec<Vector3<f64>> = surface((-5.0, -5.0), (5.0, 5.0), 0.2).iter().map(|p| p + Vector3::new(50.0, 0.0, 0.0)).collect();
        let r = icp_align(&Submap::new(src, Frame::World), &target, &Pose::identity(), &IcpParams::default());
        assert!(matches!(r, Err(FrontendError::AlignmentFailed(_))));
    }

    #[test]
    fn frmsd_prefers_clean_prefix() {
        let mut r = vec![0.01; 60];
        r.extend(std::iter::repeat_n(0.5, 40));
        let (m, _) = frmsd_select(&r, 100, &IcpParams::default()).unwrap();
        assert_eq!(m, 60);
        let (m, rmsd) = frmsd_select(&[0.0; 100], 100, &IcpParams::default()).unwrap();
        assert_eq!((m, rmsd), (100, 0.0));
    }
}
