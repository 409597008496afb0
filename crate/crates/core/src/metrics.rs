//! Anchored relative pose errors, point disparity and quantile summaries.

use nalgebra::Vector3;

use crate::frontend::KdTree;
use crate::lie::LieError;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("estimate has {estimate} nodes, truth has {truth}")]
    LengthMismatch { estimate: usize, truth: usize },
    #[error("timestamps differ at node {0}")]
    TimeMismatch(usize),
    #[error("anchor {0} out of range")]
    BadAnchor(usize),
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// Per-node errors of the estimate relative to the anchor node.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelativeErrors {
    pub anchor: usize,
    /// `log(E_k)` split into its rotational and translational parts.
    pub phi: Vec<Vector3<f64>>,
    pub rho: Vec<Vector3<f64>>,
    /// Planar norm of the translation of `E_k`, m.
    pub displacement: Vec<f64>,
    /// Absolute roll, pitch and yaw of `E_k`, degrees.
    pub attitude_deg: Vec<Vector3<f64>>,
}

impl RelativeErrors {
    pub fn max_displacement(&self) -> f64 {
        self.displacement.iter().copied().fold(0.0, f64::max)
    }
}

/// `E_k = (T_l^-1 T_k)^-1 (T^_l^-1 T^_k)` for every node `k`, with `T`
/// the truth and `T^` the estimate.
pub fn relative_pose_errors(estimate: &Trajectory, truth: &Trajectory, anchor: usize) -> Result<RelativeErrors, MetricsError> {
    if estimate.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { estimate: estimate.len(), truth: truth.len() });
    }
    if anchor >= truth.len() {
        return Err(MetricsError::BadAnchor(anchor));
    }
    if let Some(k) = (0..truth.len()).find(|&k| (estimate.times[k] - truth.times[k]).abs() > 1e-9) {
        return Err(MetricsError::TimeMismatch(k));
    }
    let (ta, ea) = (truth.poses[anchor].inverse(), estimate.poses[anchor].inverse());
    let mut out = RelativeErrors { anchor, ..RelativeErrors::default() };
    for k in 0..truth.len() {
        let e = (ta * truth.poses[k]).inverse() * (ea * estimate.poses[k]);
        let xi = e.log()?;
        let (r, p, y) = e.rotation().to_euler();
        out.phi.push(xi.phi);
        out.rho.push(xi.rho);
        out.displacement.push(e.translation().xy().norm());
        out.attitude_deg.push(Vector3::new(r, p, y).map(|a| a.to_degrees().abs()));
    }
    Ok(out)
}

/// Final planar error as a percentage of planar distance travelled.
pub fn drift_percent(errors: &RelativeErrors, truth: &Trajectory) -> f64 {
    let travelled = truth.planar_path_length().last().copied().unwrap_or(0.0);
    match errors.displacement.last() {
        Some(&d) if travelled > 0.0 => 100.0 * d / travelled,
        _ => 0.0,
    }
}

fn bounds(points: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>) {
    points.iter().fold((Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    })
}

fn box_distance(p: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> f64 {
    (lo - p).sup(&(p - hi)).sup(&Vector3::zeros()).norm()
}

/// For every point of every pass, the distance to its nearest neighbour in
/// the other passes. Only distances within `gate` (the overlap region) are
/// kept. Samples are pooled in pass order.
pub fn point_disparity(passes: &[Vec<Vector3<f64>>], gate: f64) -> Vec<f64> {
    let trees: Vec<KdTree> = passes.iter().map(|p| KdTree::new(p)).collect();
    let boxes: Vec<_> = passes.iter().map(|p| bounds(p)).collect();
    let mut out = Vec::new();
    for (i, pass) in passes.iter().enumerate() {
        for p in pass {
            let mut best = f64::INFINITY;
            for (j, tree) in trees.iter().enumerate() {
                if j == i || tree.is_empty() || box_distance(p, &boxes[j].0, &boxes[j].1) > gate.min(best) {
                    continue;
                }
                if let Some((_, d2)) = tree.nearest(p) {
                    best = best.min(d2.sqrt());
                }
            }
            if best <= gate {
                out.push(best);
            }
        }
    }
    if out.is_empty() {
        log::warn!("point disparity: passes do not overlap within {gate} m");
    }
    out
}

/// Probabilities reported by [`summarize`]: median, quartile, decile and
/// the one-, two- and three-sigma levels.
pub const QUANTILES: [f64; 6] = [0.5, 0.6827, 0.75, 0.9, 0.9545, 0.9973];

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub max: f64,
    /// `(probability, value)` pairs for [`QUANTILES`].
    pub quantiles: Vec<(f64, f64)>,
}

impl Summary {
    pub fn quantile(&self, p: f64) -> Option<f64> {
        self.quantiles.iter().find(|q| (q.0 - p).abs() < 1e-12).map(|q| q.1)
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5).unwrap()
    }
}

/// Nearest-rank quantile of sorted samples.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64 - 1e-9).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// `None` for an empty sample set.
pub fn summarize(samples: &[f64]) -> Option<Summary> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(Summary {
        count: sorted.len(),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        max: *sorted.last().unwrap(),
        quantiles: QUANTILES.iter().map(|&p| (p, nearest_rank(&sorted, p))).collect(),
    })
}
