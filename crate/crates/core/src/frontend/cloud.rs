//! Profile registration, submaps and point-cloud preprocessing.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::kdtree::KdTree;
use super::FrontendError;
use crate::trajectory::Trajectory;
use crate::Pose;

/// One laser line: points in the sensor frame at a single timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct LaserProfile {
    pub timestamp: f64,
    pub points: Vec<Vector3<f64>>,
}

/// Sensor-to-body transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrinsics(pub Pose);

impl Default for Extrinsics {
    fn default() -> Self {
        Self(Pose::identity())
    }
}

/// World-frame points with the acquisition time of each point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegisteredCloud {
    pub points: Vec<Vector3<f64>>,
    pub times: Vec<f64>,
    /// Profiles skipped because their timestamp fell outside the trajectory.
    pub rejected_profiles: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Frame {
    World,
    /// Resolved in the body frame of an anchor node.
    Body { anchor_index: usize, anchor_time: f64 },
}

/// Point set with optional per-point normals and surface variation.
/// Neighbourhoods too degenerate to define a plane carry a NaN variation.
#[derive(Clone, Debug, PartialEq)]
pub struct Submap {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub variation: Option<Vec<f64>>,
    pub frame: Frame,
}

impl Submap {
    pub fn new(points: Vec<Vector3<f64>>, frame: Frame) -> Self {
        Self { points, normals: None, variation: None, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Maps every profile point into the world frame with
/// `T(t) T_sensor p`, interpolating the trajectory at the profile time.
pub fn register_profiles(profiles: &[LaserProfile], traj: &Trajectory, ext: &Extrinsics) -> RegisteredCloud {
    let mut out = RegisteredCloud::default();
    for prof in profiles {
        let pose = match traj.pose_at(prof.timestamp) {
            Ok(p) => p * ext.0,
            Err(_) => {
                out.rejected_profiles += 1;
                continue;
            }
        };
        for p in &prof.points {
            out.points.push(pose.transform_point(p));
            out.times.push(prof.timestamp);
        }
    }
    out
}

/// Points within planar distance `delta_r` of the anchor position, resolved
/// in the anchor body frame.
pub fn extract_submap(
    points: &[Vector3<f64>],
    anchor_pose: &Pose,
    anchor_index: usize,
    anchor_time: f64,
    delta_r: f64,
    min_points: usize,
) -> Result<Submap, FrontendError> {
    let c = anchor_pose.translation().xy();
    let inv = anchor_pose.inverse();
    let pts: Vec<Vector3<f64>> = points
        .iter()
        .filter(|p| (p.xy() - c).norm() <= delta_r)
        .map(|p| inv.transform_point(p))
        .collect();
    if pts.len() < min_points {
        return Err(FrontendError::InsufficientOverlap { found: pts.len(), required: min_points });
    }
    Ok(Submap::new(pts, Frame::Body { anchor_index, anchor_time }))
}

/// Replaces the points of each occupied voxel by their centroid. Output is
/// ordered by voxel key, so it does not depend on input order beyond
/// floating-point summation.
pub fn voxel_downsample(points: &[Vector3<f64>], cell: f64) -> Vec<Vector3<f64>> {
    assert!(cell > 0.0, "voxel cell must be positive");
    let mut cells: BTreeMap<(i64, i64, i64), (Vector3<f64>, usize)> = BTreeMap::new();
    for p in points {
        let key = ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64);
        let e = cells.entry(key).or_insert((Vector3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    cells.into_values().map(|(s, n)| s / n as f64).collect()
}

/// Normal and surface variation `l_min / (l_1 + l_2 + l_3)` from the `k`
/// nearest neighbours of each point (the point included). Normals point
/// toward `viewpoint`.
pub fn estimate_normals_and_variation(mut map: Submap, k: usize, viewpoint: &Vector3<f64>) -> Result<Submap, FrontendError> {
    if map.len() < k + 1 {
        return Err(FrontendError::InsufficientOverlap { found: map.len(), required: k + 1 });
    }
    let tree = KdTree::new(&map.points);
    let mut normals = Vec::with_capacity(map.len());
    let mut variation = Vec::with_capacity(map.len());
    for p in &map.points {
        let nn = tree.knn(p, k);
        let mean = nn.iter().fold(Vector3::zeros(), |acc, &(i, _)| acc + tree.point(i)) / nn.len() as f64;
        let cov = nn.iter().fold(Matrix3::zeros(), |acc, &(i, _)| {
            let d = tree.point(i) - mean;
            acc + d * d.transpose()
        }) / nn.len() as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let l = order.map(|i| eig.eigenvalues[i].max(0.0));
        let total = l[0] + l[1] + l[2];
        let mut n: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned().normalize();
        if n.dot(&(viewpoint - p)) < 0.0 {
            n = -n;
        }
        normals.push(n);
        variation.push(if total <= 0.0 || l[1] <= 1e-12 * total { f64::NAN } else { l[0] / total });
    }
    map.normals = Some(normals);
    map.variation = Some(variation);
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Twist;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn registration_identity_and_translation() {
        let prof = LaserProfile { timestamp: 0.0, points: vec![Vector3::new(1.0, 2.0, 3.0)] };
        let traj = Trajectory::new(vec![0.0, 1.0], vec![Pose::identity(), Pose::identity()]).unwrap();
        let cloud = register_profiles(&[prof.clone()], &traj, &Extrinsics::default());
        assert_eq!(cloud.points, prof.points);

        let r = Vector3::new(4.0, 0.0, -1.0);
        let traj = Trajectory::new(vec![0.0, 1.0], vec![Pose::from_translation(r), Pose::from_translation(r * 3.0)]).unwrap();
        let cloud = register_profiles(&[prof.clone()], &traj, &Extrinsics::default());
        assert_eq!(cloud.points[0], prof.points[0] + r);
        let mid = LaserProfile { timestamp: 0.5, ..prof.clone() };
        let cloud = register_profiles(&[mid], &traj, &Extrinsics::default());
        assert!((cloud.points[0] - (prof.points[0] + r * 2.0)).norm() < 1e-12);
        let late = LaserProfile { timestamp: 2.0, ..prof };
        assert_eq!(register_profiles(&[late], &traj, &Extrinsics::default()).rejected_profiles, 1);
    }

    #[test]
    fn registration_is_invertible() {
        let t0 = Pose::exp(&Twist::new(Vector3::new(0.1, -0.2, 1.0), Vector3::new(3.0, 1.0, 10.0)));
        let t1 = t0 * Pose::exp(&Twist::new(Vector3::new(0.0, 0.0, 0.05), Vector3::new(0.15, 0.0, 0.0)));
        let traj = Trajectory::new(vec![0.0, 0.1], vec![t0, t1]).unwrap();
        let ext = Extrinsics(Pose::exp(&Twist::new(Vector3::new(0.0, 0.0, 0.3), Vector3::new(0.2, 0.0, 0.5))));
        let prof = LaserProfile { timestamp: 0.037, points: vec![Vector3::new(0.0, 2.0, 6.0), Vector3::new(0.0, -4.0, 5.0)] };
        let cloud = register_profiles(&[prof.clone()], &traj, &ext);
        let back = (traj.pose_at(0.037).unwrap() * ext.0).inverse();
        for (w, s) in cloud.points.iter().zip(&prof.points) {
            assert!((back.transform_point(w) - s).norm() < 1e-12);
        }
    }

    #[test]
    fn submap_membership() {
        let anchor = Pose::from_translation(Vector3::new(1.0, 1.0, 0.0));
        let pts = vec![Vector3::new(1.0, 1.0, 0.0); 5];
        let map = extract_submap(&pts, &anchor, 0, 0.0, 5.0, 5).unwrap();
        assert!(map.points.iter().all(|p| p.norm() == 0.0));
        let edge = vec![Vector3::new(1.0 + 5.0 + 1e-9, 1.0, 0.0)];
        assert!(extract_submap(&edge, &anchor, 0, 0.0, 5.0, 1).is_err());

        let grid: Vec<Vector3<f64>> = (0..40)
            .flat_map(|i| (0..40).map(move |j| Vector3::new(i as f64 * 0.5 - 9.0, j as f64 * 0.5 - 9.0, 2.0)))
            .collect();
        let map = extract_submap(&grid, &anchor, 0, 0.0, 5.0, 1).unwrap();
        let brute = grid.iter().filter(|p| ((p.x - 1.0).powi(2) + (p.y - 1.0).powi(2)).sqrt() <= 5.0).count();
        assert_eq!(map.len(), brute);
        assert!(matches!(
            extract_submap(&grid, &anchor, 0, 0.0, 0.1, 100),
            Err(FrontendError::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn voxel_centroid_and_lattice() {
        let pts: Vec<Vector3<f64>> = (0..10).map(|i| Vector3::new(0.01 + 0.001 * i as f64, 0.02, 0.03)).collect();
        let out = voxel_downsample(&pts, 0.05);
        assert_eq!(out.len(), 1);
        assert!((out[0] - Vector3::new(0.0145, 0.02, 0.03)).norm() < 1e-12);
        let lattice: Vec<Vector3<f64>> = (0..100).map(|i| Vector3::new(i as f64 * 0.1 + 0.01, 0.01, 0.01)).collect();
        assert_eq!(voxel_downsample(&lattice, 0.05).len(), 100);
    }

    #[test]
    fn plane_blob_and_edge_variation() {
        let plane: Vec<Vector3<f64>> = (0..20).flat_map(|i| (0..20).map(move |j| Vector3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0))).collect();
        let m = estimate_normals_and_variation(Submap::new(plane, Frame::World), 40, &Vector3::new(0.0, 0.0, -10.0)).unwrap();
        for (n, v) in m.normals.unwrap().iter().zip(m.variation.unwrap()) {
            assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
            assert!(v.abs() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let blob: Vec<Vector3<f64>> = (0..4000)
            .map(|_| Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let m = estimate_normals_and_variation(Submap::new(blob, Frame::World), 400, &Vector3::zeros()).unwrap();
        let v = m.variation.unwrap();
        let centre = v[..10].iter().sum::<f64>() / 10.0;
        assert!(centre > 0.2 && centre <= 1.0 / 3.0 + 1e-12);

        let mut edge = Vec::new();
        for i in 0..30 {
            for j in 0..15 {
                edge.push(Vector3::new(i as f64 * 0.05, j as f64 * 0.05, 0.0));
                edge.push(Vector3::new(i as f64 * 0.05, 0.0, j as f64 * 0.05 + 0.05));
            }
        }
        let m = estimate_normals_and_variation(Submap::new(edge.clone(), Frame::World), 40, &Vector3::new(0.0, 5.0, 5.0)).unwrap();
        let idx = edge.iter().position(|p| (p - Vector3::new(0.75, 0.0, 0.05)).norm() < 1e-12).unwrap();
        assert!(m.variation.unwrap()[idx] > 3e-2);
        for n in m.normals.unwrap() {
            assert!((n.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn collinear_points_are_flagged() {
        let line: Vec<Vector3<f64>> = (0..50).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let m = estimate_normals_and_variation(Submap::new(line, Frame::World), 10, &Vector3::zeros()).unwrap();
        assert!(m.variation.unwrap().iter().all(|v| v.is_nan()));
        let _ = Rng::random::<f64>(&mut ChaCha8Rng::seed_from_u64(0));
    }
}
