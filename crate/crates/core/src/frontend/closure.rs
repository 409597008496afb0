//! Loop-closure measurements from crossing submaps.

use nalgebra::Vector3;

use super::cloud::{estimate_normals_and_variation, extract_submap, voxel_downsample, RegisteredCloud, Submap};
use super::crossings::Crossing;
use super::icp::{icp_align, IcpParams, IcpReport};
use super::FrontendError;
use crate::factors::{pose_covariance, LoopClosureMeasurement};
use crate::trajectory::Trajectory;

#[derive(Clone, Debug, PartialEq)]
pub struct ClosureParams {
    pub delta_r: f64,
    pub min_separation: f64,
    /// Only points acquired within this many seconds of the anchor time
    /// enter its submap, so each submap holds a single pass.
    pub time_window: f64,
    pub voxel: f64,
    pub k_normals: usize,
    pub min_points: usize,
    pub icp: IcpParams,
    pub sigma_phi: f64,
    pub sigma_rho: f64,
}

impl Default for ClosureParams {
    fn default() -> Self {
        let voxel = 0.05;
        Self {
            delta_r: 5.0,
            min_separation: 30.0,
            time_window: 15.0,
            voxel,
            k_normals: 40,
            min_points: 100,
            icp: IcpParams { point_sigma: voxel / 2.0, ..IcpParams::default() },
            sigma_phi: 0.2f64.to_radians(),
            sigma_rho: 0.02,
        }
    }
}

fn pass_submap(
    traj: &Trajectory,
    cloud: &RegisteredCloud,
    idx: usize,
    p: &ClosureParams,
) -> Result<Submap, FrontendError> {
    let t = traj.times[idx];
    let pts: Vec<Vector3<f64>> = cloud
        .points
        .iter()
        .zip(&cloud.times)
        .filter(|(_, &ti)| (ti - t).abs() <= p.time_window)
        .map(|(q, _)| *q)
        .collect();
    let mut map = extract_submap(&pts, &traj.poses[idx], idx, t, p.delta_r, p.min_points)?;
    map.points = voxel_downsample(&map.points, p.voxel);
    if map.len() < p.min_points {
        return Err(FrontendError::InsufficientOverlap { found: map.len(), required: p.min_points });
    }
    Ok(map)
}

/// Aligns the later pass onto the earlier one, starting from the relative
/// pose of the trajectory, and wraps the result as a measurement.
pub fn make_loop_closure(
    traj: &Trajectory,
    cloud: &RegisteredCloud,
    crossing: &Crossing,
    params: &ClosureParams,
) -> Result<(LoopClosureMeasurement<f64>, IcpReport), FrontendError> {
    let (l1, l2) = (crossing.idx_l1, crossing.idx_l2);
    let target = pass_submap(traj, cloud, l1, params)?;
    let target = estimate_normals_and_variation(target, params.k_normals, &Vector3::zeros())?;
    let source = pass_submap(traj, cloud, l2, params)?;
    let init = traj.poses[l1].inverse() * traj.poses[l2];
    let (xi, report) = icp_align(&source, &target, &init, &params.icp)?;
    let meas = LoopClosureMeasurement {
        idx_l1: l1,
        idx_l2: l2,
        xi_meas: xi,
        cov: pose_covariance(params.sigma_phi, params.sigma_rho),
    };
    Ok((meas, report))
}
