//! Timestamped pose sequences.

use nalgebra::Vector3;

use crate::lie::LieError;
use crate::{Pose, Twist};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("time {t} outside trajectory span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
    #[error("timestamps must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("{poses} poses for {times} timestamps")]
    LengthMismatch { poses: usize, times: usize },
    #[error("empty trajectory")]
    Empty,
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// Poses `T_k` (body to world) at strictly increasing times, with optional
/// body-centric velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub poses: Vec<Pose>,
    pub velocities: Option<Vec<Twist>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, poses: Vec<Pose>) -> Result<Self, TrajectoryError> {
        if times.len() != poses.len() {
            return Err(TrajectoryError::LengthMismatch { poses: poses.len(), times: times.len() });
        }
        if times.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(TrajectoryError::NotIncreasing(k + 1));
        }
        Ok(Self { times, poses, velocities: None })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Index `i` with `times[i] <= t < times[i + 1]`, clamped to the span.
    fn bracket(&self, t: f64) -> usize {
        match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.len().saturating_sub(2)),
            Err(i) => i.saturating_sub(1).min(self.len().saturating_sub(2)),
        }
    }

    /// Index of the node closest in time to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        if self.len() == 1 {
            return 0;
        }
        let i = self.bracket(t);
        if (t - self.times[i]).abs() <= (self.times[i + 1] - t).abs() {
            i
        } else {
            i + 1
        }
    }

    /// Pose at `t`, geodesically interpolated between the bracketing nodes.
    pub fn pose_at(&self, t: f64) -> Result<Pose, TrajectoryError> {
        if !(t >= self.start() && t <= self.end()) {
            return Err(TrajectoryError::OutOfSpan { t, start: self.start(), end: self.end() });
        }
        if self.len() == 1 {
            return Ok(self.poses[0]);
        }
        let i = self.bracket(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        if t == t0 {
            return Ok(self.poses[i]);
        }
        if t == t1 {
            return Ok(self.poses[i + 1]);
        }
        Ok(self.poses[i].interpolate(&self.poses[i + 1], (t - t0) / (t1 - t0))?)
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| *p.translation()).collect()
    }

    /// Cumulative planar path length at each node.
    pub fn planar_path_length(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.len());
        out.push(0.0);
        for w in self.poses.windows(2) {
            let d = w[1].translation() - w[0].translation();
            acc += d.xy().norm();
            out.push(acc);
        }
        out
    }

    /// Left-composes every pose with `g`.
    pub fn left_compose(&self, g: &Pose) -> Self {
        Self {
            times: self.times.clone(),
            poses: self.poses.iter().map(|p| *g * *p).collect(),
            velocities: self.velocities.clone(),
        }
    }
}
