//! Seeded survey simulator: a tie-line crossed by lawnmower passes, a
//! dead-reckoned prior with drift, an analytic seabed and a fan laser.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::Range;

use nalgebra::{Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::factors::{pose_covariance, LoopClosureMeasurement};
use crate::frontend::{Crossing, LaserProfile};
use crate::lie::Rotation;
use crate::solver::Hyperparameters;
use crate::trajectory::Trajectory;
use crate::{Pose, Twist};

const STREAM_DRIFT: u64 = 1;
const STREAM_TERRAIN: u64 = 2;
const STREAM_SCAN: u64 = 3;
const STREAM_CLOSURES: u64 = 4;

/// Independent generator for one purpose under a master seed.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftModel {
    /// Constant yaw-rate bias, rad/s.
    pub yaw_bias: f64,
    /// Relative error of the measured distance travelled.
    pub scale_factor: f64,
    /// Attitude random-walk PSD per body axis, rad^2/s.
    pub psd_phi: [f64; 3],
    /// Position random-walk PSD per body axis, m^2/s.
    pub psd_rho: [f64; 3],
}

impl DriftModel {
    pub fn none() -> Self {
        Self { yaw_bias: 0.0, scale_factor: 0.0, psd_phi: [0.0; 3], psd_rho: [0.0; 3] }
    }

    pub fn is_none(&self) -> bool {
        self.yaw_bias == 0.0 && self.scale_factor == 0.0 && self.psd_phi.iter().chain(&self.psd_rho).all(|&q| q == 0.0)
    }
}

impl Default for DriftModel {
    fn default() -> Self {
        Self { yaw_bias: 3e-5, scale_factor: 0.0, psd_phi: [1e-8, 1e-8, 1e-9], psd_rho: [1e-8, 1e-8, 1e-4] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerrainConfig {
    /// Depth of the flat seabed, m (positive down).
    pub base_depth: f64,
    /// Expected bumps per square metre of survey area.
    pub bump_density: f64,
    pub amplitude: (f64, f64),
    pub sigma: (f64, f64),
    /// Extra bumps placed within a few metres of each tie-line crossing.
    pub crossing_cluster: usize,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self { base_depth: 20.0, bump_density: 0.02, amplitude: (0.3, 0.8), sigma: (1.0, 1.5), crossing_cluster: 3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScannerConfig {
    pub rate_hz: f64,
    pub beams: usize,
    /// Half-width of the fan, rad.
    pub half_angle: f64,
    pub max_range: f64,
    /// Isotropic point noise, m.
    pub noise: f64,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        Self { rate_hz: 30.0, beams: 181, half_angle: 40f64.to_radians(), max_range: 30.0, noise: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub passes: usize,
    pub pass_length: f64,
    /// Distance between pass centrelines; U-turns have half this radius.
    pub lane_spacing: f64,
    /// How far passes extend north of the tie-line, m. At least a turn radius
    /// and less than `pass_length`.
    pub pass_overhang: f64,
    /// Tie-line extension beyond the first and last pass, m.
    pub tie_overrun: f64,
    pub speed: f64,
    pub rate_hz: f64,
    pub vehicle_depth: f64,
    pub drift: DriftModel,
    pub terrain: TerrainConfig,
    pub scanner: ScannerConfig,
    /// Loop-closure noise for closures drawn from ground truth.
    pub closure_sigma_phi: f64,
    pub closure_sigma_rho: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            passes: 8,
            pass_length: 50.0,
            lane_spacing: 10.0,
            pass_overhang: 10.0,
            tie_overrun: 5.0,
            speed: 1.5,
            rate_hz: 10.0,
            vehicle_depth: 14.0,
            drift: DriftModel::default(),
            terrain: TerrainConfig::default(),
            scanner: ScannerConfig::default(),
            closure_sigma_phi: 0.03f64.to_radians(),
            closure_sigma_rho: 0.01,
        }
    }
}

impl SimConfig {
    /// Smoother tuning matched to the default drift model: the simulated
    /// column of the usual presets with per-step relative-pose attitude and
    /// position deviations of 3e-5 rad and 1e-4 m.
    pub fn hyperparameters() -> Hyperparameters<f64> {
        Hyperparameters { sigma_phi: 3e-5, sigma_rho: 1e-4, ..Hyperparameters::simulated() }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation parameter `{0}`")]
    Invalid(&'static str),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            (self.pass_length, "pass_length"),
            (self.lane_spacing, "lane_spacing"),
            (self.speed, "speed"),
            (self.rate_hz, "rate_hz"),
            (self.scanner.rate_hz, "scanner.rate_hz"),
            (self.scanner.max_range, "scanner.max_range"),
            (self.scanner.half_angle, "scanner.half_angle"),
            (self.closure_sigma_phi, "closure_sigma_phi"),
            (self.closure_sigma_rho, "closure_sigma_rho"),
        ];
        for (v, name) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Invalid(name));
            }
        }
        if self.passes == 0 {
            return Err(SimError::Invalid("passes"));
        }
        if self.scanner.beams < 2 {
            return Err(SimError::Invalid("scanner.beams"));
        }
        if !(self.drift.scale_factor > -1.0 && self.drift.scale_factor.is_finite()) {
            return Err(SimError::Invalid("drift.scale_factor"));
        }
        if self.drift.psd_phi.iter().chain(&self.drift.psd_rho).any(|&q| !(q >= 0.0)) {
            return Err(SimError::Invalid("drift.psd"));
        }
        if !(self.scanner.noise >= 0.0) {
            return Err(SimError::Invalid("scanner.noise"));
        }
        if !(self.pass_overhang >= self.lane_spacing / 2.0 && self.pass_overhang < self.pass_length) {
            return Err(SimError::Invalid("pass_overhang"));
        }
        if !(self.tie_overrun >= 0.0) {
            return Err(SimError::Invalid("tie_overrun"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentLabel {
    TieLine,
    Transit,
    Turn,
    Pass(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Line,
    /// +1 turns right (heading increases), -1 left.
    Arc { sign: f64, radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Piece {
    label: SegmentLabel,
    shape: Shape,
    start: Vector2<f64>,
    heading: f64,
    length: f64,
}

impl Piece {
    fn at(&self, s: f64) -> (Vector2<f64>, f64) {
        match self.shape {
            Shape::Line => (self.start + s * Vector2::new(self.heading.cos(), self.heading.sin()), self.heading),
            Shape::Arc { sign, radius } => {
                let right = |h: f64| Vector2::new(-h.sin(), h.cos());
                let centre = self.start + sign * radius * right(self.heading);
                let h = self.heading + sign * s / radius;
                (centre - sign * radius * right(h), h)
            }
        }
    }

    fn yaw_rate(&self, speed: f64) -> f64 {
        match self.shape {
            Shape::Line => 0.0,
            Shape::Arc { sign, radius } => sign * speed / radius,
        }
    }
}

/// Planar survey path parameterized by arc length.
#[derive(Clone, Debug, PartialEq)]
pub struct SurveyPath {
    pieces: Vec<Piece>,
    offsets: Vec<f64>,
    depth: f64,
}

impl SurveyPath {
    /// A tie-line east along `x = 0`, a return leg one lane spacing clear of
    /// the northern turns, then lawnmower passes along `y = i * lane_spacing` heading south first.
    pub fn new(cfg: &SimConfig) -> Self {
        let r = cfg.lane_spacing / 2.0;
        let y_last = (cfg.passes - 1) as f64 * cfg.lane_spacing;
        let y_top = y_last + cfg.tie_overrun;
        let mut b = Builder { pieces: Vec::new(), pos: Vector2::new(0.0, -cfg.tie_overrun), heading: FRAC_PI_2 };
        b.line(SegmentLabel::TieLine, y_last + 2.0 * cfg.tie_overrun);
        b.arc(SegmentLabel::Turn, -1.0, r, FRAC_PI_2);
        b.line(SegmentLabel::Transit, cfg.pass_overhang + cfg.lane_spacing - r);
        b.arc(SegmentLabel::Turn, -1.0, r, FRAC_PI_2);
        b.line(SegmentLabel::Transit, y_top - r);
        b.arc(SegmentLabel::Turn, -1.0, r, FRAC_PI_2);
        b.line(SegmentLabel::Transit, cfg.lane_spacing);
        for i in 0..cfg.passes {
            b.line(SegmentLabel::Pass(i), cfg.pass_length);
            if i + 1 < cfg.passes {
                b.arc(SegmentLabel::Turn, if i % 2 == 0 { -1.0 } else { 1.0 }, r, PI);
            }
        }
        let mut offsets = Vec::with_capacity(b.pieces.len() + 1);
        let mut acc = 0.0;
        for p in &b.pieces {
            offsets.push(acc);
            acc += p.length;
        }
        offsets.push(acc);
        Self { pieces: b.pieces, offsets, depth: cfg.vehicle_depth }
    }

    pub fn length(&self) -> f64 {
        *self.offsets.last().unwrap()
    }

    fn piece(&self, s: f64) -> usize {
        let i = self.offsets.partition_point(|&o| o <= s);
        i.saturating_sub(1).min(self.pieces.len() - 1)
    }

    /// Pose, body velocity and segment label at arc length `s`.
    pub fn sample(&self, s: f64, speed: f64) -> (Pose, Twist, SegmentLabel) {
        let i = self.piece(s);
        let p = &self.pieces[i];
        let (xy, h) = p.at(s - self.offsets[i]);
        let pose = Pose::new(Rotation::from_euler(0.0, 0.0, h), Vector3::new(xy.x, xy.y, self.depth));
        let vel = Twist::new(Vector3::new(0.0, 0.0, p.yaw_rate(speed)), Vector3::new(speed, 0.0, 0.0));
        (pose, vel, p.label)
    }
}

struct Builder {
    pieces: Vec<Piece>,
    pos: Vector2<f64>,
    heading: f64,
}

impl Builder {
    fn push(&mut self, piece: Piece) {
        let (pos, heading) = piece.at(piece.length);
        self.pieces.push(piece);
        self.pos = pos;
        self.heading = heading;
    }

    fn line(&mut self, label: SegmentLabel, length: f64) {
        if length > 0.0 {
            self.push(Piece { label, shape: Shape::Line, start: self.pos, heading: self.heading, length });
        }
    }

    fn arc(&mut self, label: SegmentLabel, sign: f64, radius: f64, angle: f64) {
        self.push(Piece { label, shape: Shape::Arc { sign, radius }, start: self.pos, heading: self.heading, length: radius * angle });
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub label: SegmentLabel,
    pub nodes: Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub trajectory: Trajectory,
    pub segments: Vec<Segment>,
}

impl Truth {
    /// Node range of each lawnmower pass, in pass order.
    pub fn passes(&self) -> Vec<Range<usize>> {
        let mut v: Vec<(usize, Range<usize>)> = self
            .segments
            .iter()
            .filter_map(|s| match s.label {
                SegmentLabel::Pass(i) => Some((i, s.nodes.clone())),
                _ => None,
            })
            .collect();
        v.sort_by_key(|x| x.0);
        v.into_iter().map(|x| x.1).collect()
    }

    pub fn tie_line(&self) -> Option<Range<usize>> {
        self.segments.iter().find(|s| s.label == SegmentLabel::TieLine).map(|s| s.nodes.clone())
    }
}

/// Samples the survey path at the node rate. Velocities are the constant
/// body twists of each path piece.
pub fn generate_truth(cfg: &SimConfig) -> Truth {
    let path = SurveyPath::new(cfg);
    let duration = path.length() / cfg.speed;
    let n = (duration * cfg.rate_hz).floor() as usize + 1;
    let mut times = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    let mut vels = Vec::with_capacity(n);
    let mut segments: Vec<Segment> = Vec::new();
    for k in 0..n {
        let t = k as f64 / cfg.rate_hz;
        let (pose, vel, label) = path.sample(t * cfg.speed, cfg.speed);
        times.push(t);
        poses.push(pose);
        vels.push(vel);
        match segments.last_mut() {
            Some(s) if s.label == label => s.nodes.end = k + 1,
            _ => segments.push(Segment { label, nodes: k..k + 1 }),
        }
    }
    let mut trajectory = Trajectory::new(times, poses).expect("strictly increasing sample times");
    trajectory.velocities = Some(vels);
    Truth { trajectory, segments }
}

/// Dead-reckoned prior: truth increments corrupted by white attitude and
/// position noise and a yaw-rate bias, integrated from the true start.
pub fn degrade(truth: &Trajectory, drift: &DriftModel, seed: u64) -> Trajectory {
    let mut out = Trajectory { times: truth.times.clone(), poses: truth.poses.clone(), velocities: None };
    if drift.is_none() {
        return out;
    }
    let mut rng = rng_for(seed, STREAM_DRIFT);
    for k in 1..truth.len() {
        let dt = truth.times[k] - truth.times[k - 1];
        let mut w = Vector6::zeros();
        for a in 0..3 {
            w[a] = (drift.psd_phi[a] * dt).sqrt() * rng.sample::<f64, _>(StandardNormal);
            w[3 + a] = (drift.psd_rho[a] * dt).sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        w[2] += drift.yaw_bias * dt;
        let step = truth.poses[k - 1].inverse() * truth.poses[k];
        let step = Pose::new(*step.rotation(), step.translation() * (1.0 + drift.scale_factor));
        out.poses[k] = out.poses[k - 1] * step * Pose::exp(&Twist::from_vector(&w));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
    pub sigma: f64,
}

/// Height field: flat seabed raised by Gaussian bumps. Depth is positive down.
#[derive(Clone, Debug, PartialEq)]
pub struct Terrain {
    pub base_depth: f64,
    pub bumps: Vec<Bump>,
    cell: f64,
    index: HashMap<(i64, i64), Vec<usize>>,
    max_relief: f64,
}

impl Terrain {
    pub fn new(base_depth: f64, bumps: Vec<Bump>) -> Self {
        let cell = 5.0;
        let mut index: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, b) in bumps.iter().enumerate() {
            let reach = 5.0 * b.sigma;
            let (x0, x1) = (((b.x - reach) / cell).floor() as i64, ((b.x + reach) / cell).floor() as i64);
            let (y0, y1) = (((b.y - reach) / cell).floor() as i64, ((b.y + reach) / cell).floor() as i64);
            for cx in x0..=x1 {
                for cy in y0..=y1 {
                    index.entry((cx, cy)).or_default().push(i);
                }
            }
        }
        let max_relief = index
            .values()
            .map(|ids| ids.iter().map(|&i| bumps[i].amplitude.max(0.0)).sum::<f64>())
            .fold(0.0, f64::max);
        Self { base_depth, bumps, cell, index, max_relief }
    }

    pub fn flat(base_depth: f64) -> Self {
        Self::new(base_depth, Vec::new())
    }

    pub fn depth(&self, x: f64, y: f64) -> f64 {
        let key = ((x / self.cell).floor() as i64, (y / self.cell).floor() as i64);
        let raise: f64 = self.index.get(&key).map_or(0.0, |ids| {
            ids.iter()
                .map(|&i| {
                    let b = &self.bumps[i];
                    let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
                    b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
                })
                .sum()
        });
        self.base_depth - raise
    }

    /// First intersection of the ray `o + s d` (`s > 0`) with the seabed.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>, max_range: f64) -> Option<f64> {
        if d.z <= 1e-9 {
            return None;
        }
        let above = |s: f64| {
            let p = o + d * s;
            self.depth(p.x, p.y) - p.z
        };
        // the seabed lies between base_depth - max_relief and base_depth
        let mut lo = ((self.base_depth - self.max_relief - 1e-6 - o.z) / d.z).max(0.0);
        let mut hi = (self.base_depth + 1e-6 - o.z) / d.z;
        if hi <= 0.0 || lo > max_range || above(lo) < 0.0 {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if above(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        (s <= max_range).then_some(s)
    }
}

/// Scattered bumps over the survey area plus a cluster at each tie-line crossing.
pub fn generate_terrain(cfg: &SimConfig) -> Terrain {
    let tc = &cfg.terrain;
    let mut rng = rng_for(cfg.seed, STREAM_TERRAIN);
    let swath = 2.0 * (tc.base_depth - cfg.vehicle_depth).max(0.0) * cfg.scanner.half_angle.tan();
    let x0 = cfg.pass_overhang - cfg.pass_length - 2.0 * cfg.lane_spacing - swath;
    let x1 = cfg.pass_overhang + 2.0 * cfg.lane_spacing + swath;
    let y0 = -cfg.tie_overrun - cfg.lane_spacing - swath;
    let y1 = cfg.passes as f64 * cfg.lane_spacing + cfg.tie_overrun + swath;
    let bump = |rng: &mut ChaCha8Rng, x: f64, y: f64| Bump {
        x,
        y,
        amplitude: rng.random_range(tc.amplitude.0..=tc.amplitude.1),
        sigma: rng.random_range(tc.sigma.0..=tc.sigma.1),
    };
    let count = (tc.bump_density * (x1 - x0) * (y1 - y0)).round() as usize;
    let mut bumps = Vec::with_capacity(count + cfg.passes * tc.crossing_cluster);
    for _ in 0..count {
        let (x, y) = (rng.random_range(x0..x1), rng.random_range(y0..y1));
        bumps.push(bump(&mut rng, x, y));
    }
    for i in 0..cfg.passes {
        let y = i as f64 * cfg.lane_spacing;
        for _ in 0..tc.crossing_cluster {
            let (dx, dy) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            bumps.push(bump(&mut rng, dx, y + dy));
        }
    }
    Terrain::new(tc.base_depth, bumps)
}

/// Fan of beams in the sensor y-z plane, centred on +z.
pub fn beam_directions(scanner: &ScannerConfig) -> Vec<Vector3<f64>> {
    (0..scanner.beams)
        .map(|b| {
            let a = -scanner.half_angle + 2.0 * scanner.half_angle * b as f64 / (scanner.beams - 1) as f64;
            Vector3::new(0.0, a.sin(), a.cos())
        })
        .collect()
}

/// Profiles at the scanner rate along `truth`. Rays that miss are dropped.
pub fn synth_scan(truth: &Trajectory, terrain: &Terrain, scanner: &ScannerConfig, extrinsics: &Pose, seed: u64) -> Vec<LaserProfile> {
    let mut rng = rng_for(seed, STREAM_SCAN);
    let beams = beam_directions(scanner);
    let n = ((truth.end() - truth.start()) * scanner.rate_hz).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = truth.start() + i as f64 / scanner.rate_hz;
        let Ok(body) = truth.pose_at(t) else { continue };
        let sensor = body * *extrinsics;
        let o = *sensor.translation();
        let mut points = Vec::with_capacity(beams.len());
        for d in &beams {
            let dw = sensor.rotation().matrix() * d;
            if let Some(s) = terrain.intersect(&o, &dw, scanner.max_range) {
                let mut p = d * s;
                if scanner.noise > 0.0 {
                    p += Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)) * scanner.noise;
                }
                points.push(p);
            }
        }
        if !points.is_empty() {
            out.push(LaserProfile { timestamp: t, points });
        }
    }
    out
}

/// Closures from ground-truth relative poses with Gaussian noise
/// `Xi = T_l1^-1 T_l2 exp(delta)`, `delta ~ N(0, R)`.
pub fn truth_closures(
    truth: &Trajectory,
    crossings: &[Crossing],
    sigma_phi: f64,
    sigma_rho: f64,
    seed: u64,
) -> Vec<LoopClosureMeasurement<f64>> {
    let mut rng = rng_for(seed, STREAM_CLOSURES);
    crossings
        .iter()
        .map(|c| {
            let mut d = Vector6::zeros();
            for a in 0..3 {
                d[a] = sigma_phi * rng.sample::<f64, _>(StandardNormal);
                d[3 + a] = sigma_rho * rng.sample::<f64, _>(StandardNormal);
            }
            let rel = truth.poses[c.idx_l1].inverse() * truth.poses[c.idx_l2];
            LoopClosureMeasurement {
                idx_l1: c.idx_l1,
                idx_l2: c.idx_l2,
                xi_meas: rel * Pose::exp(&Twist::from_vector(&d)),
                cov: pose_covariance(sigma_phi, sigma_rho),
            }
        })
        .collect()
}

/// One outlier relative pose: planar offset uniform in a 5 m disc, vertical
/// offset uniform on `[-0.5, 0.5] U [13.5, 14.5]` and rotation vector with
/// components uniform on `(-pi, pi]`.
pub fn sample_outlier<R: Rng>(rng: &mut R) -> Pose {
    let r = 5.0 * rng.random::<f64>().sqrt();
    let a = rng.random_range(-PI..PI);
    let z = rng.random_range(-0.5..=0.5) + if rng.random_bool(0.5) { 14.0 } else { 0.0 };
    let phi = Vector3::from_fn(|_, _| -rng.random_range(-PI..PI));
    Pose::new(Rotation::exp(&phi), Vector3::new(r * a.cos(), r * a.sin(), z))
}

/// Replaces `count` distinct, randomly chosen measurements with outliers.
/// Returns the replaced indices in ascending order.
pub fn inject_outliers(meas: &mut [LoopClosureMeasurement<f64>], count: usize, seed: u64) -> Vec<usize> {
    assert!(count <= meas.len(), "more outliers than measurements");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, meas.len(), count).into_vec();
    idx.sort_unstable();
    for &i in &idx {
        meas[i].xi_meas = sample_outlier(&mut rng);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{detect_crossings, register_profiles, Extrinsics};

    fn small() -> SimConfig {
        SimConfig { passes: 2, pass_length: 30.0, ..SimConfig::default() }
    }

    #[test]
    fn path_is_continuous() {
        let cfg = SimConfig::default();
        let path = SurveyPath::new(&cfg);
        assert!((path.length() - 708.52).abs() < 0.01, "{}", path.length());
        for w in path.offsets.windows(2).skip(1) {
            let s = w[0];
            let (a, _, _) = path.sample(s - 1e-9, 1.0);
            let (b, _, _) = path.sample(s + 1e-9, 1.0);
            assert!((a.inverse() * b).log().unwrap().norm() < 1e-7);
        }
    }

    #[test]
    fn single_pass_is_constant_velocity() {
        let cfg = SimConfig { passes: 2, ..SimConfig::default() };
        let truth = generate_truth(&cfg);
        let range = truth.passes()[0].clone();
        let traj = &truth.trajectory;
        let v = traj.velocities.as_ref().unwrap();
        for k in range.start + 1..range.end {
            let dt = traj.times[k] - traj.times[k - 1];
            let pred = traj.poses[k - 1] * Pose::exp(&v[k - 1].scale(dt));
            assert!((traj.poses[k].inverse() * pred).log().unwrap().norm() < 1e-12);
            assert_eq!(v[k], v[k - 1]);
        }
    }

    #[test]
    fn forward_euler_consistency() {
        let truth = generate_truth(&SimConfig::default());
        let traj = &truth.trajectory;
        let v = traj.velocities.as_ref().unwrap();
        let same: Vec<bool> = (0..traj.len())
            .map(|k| k > 0 && truth.segments.iter().any(|s| s.nodes.contains(&(k - 1)) && s.nodes.contains(&k)))
            .collect();
        for k in 1..traj.len() {
            let dt = traj.times[k] - traj.times[k - 1];
            let pred = traj.poses[k - 1] * Pose::exp(&v[k - 1].scale(dt));
            let e = (traj.poses[k].inverse() * pred).log().unwrap().norm();
            if same[k] {
                assert!(e < 1e-9, "node {k}: {e}");
            } else {
                // a step straddling a piece boundary misses at most one step of yaw rate
                assert!(e < 1.5 / 5.0 * dt * 1.1, "node {k}: {e}");
            }
        }
    }

    #[test]
    fn standard_survey_has_eight_crossings() {
        let truth = generate_truth(&SimConfig::default());
        let c = detect_crossings(&truth.trajectory, 5.0, 30.0);
        assert_eq!(c.len(), 8);
        let tie = truth.tie_line().unwrap();
        for x in &c {
            assert!(tie.contains(&x.idx_l1));
            let p = truth.trajectory.poses[x.idx_l1].translation();
            assert!(p.x.abs() < 1e-9);
        }
    }

    #[test]
    fn degrade_without_drift_is_truth() {
        let truth = generate_truth(&small());
        assert_eq!(degrade(&truth.trajectory, &DriftModel::none(), 3).poses, truth.trajectory.poses);
        let a = degrade(&truth.trajectory, &DriftModel::default(), 3);
        let b = degrade(&truth.trajectory, &DriftModel::default(), 3);
        assert_eq!(a, b);
        assert_ne!(a.poses, truth.trajectory.poses);
    }

    #[test]
    fn heading_bias_matches_arc_deviation() {
        let cfg = SimConfig { passes: 2, ..SimConfig::default() };
        let truth = generate_truth(&cfg);
        let bias = 1e-3;
        let prior = degrade(&truth.trajectory, &DriftModel { yaw_bias: bias, ..DriftModel::none() }, 0);
        let range = truth.passes()[0].clone();
        let t = &truth.trajectory;
        // relative to the pass start, the biased track bends onto a polygonal arc
        let k0 = range.start;
        let base = prior.poses[k0].inverse();
        let tb = t.poses[k0].inverse();
        let step = cfg.speed / cfg.rate_hz;
        let dpsi = bias / cfg.rate_hz;
        let mut last = 0.0;
        for k in (k0 + 10..range.end).step_by(50) {
            let n = k - k0;
            let dev = (base * prior.poses[k]).translation() - (tb * t.poses[k]).translation();
            let expect: f64 = (0..n).map(|j| step * (j as f64 * dpsi).sin()).sum();
            assert!(dev.norm() > last);
            assert!((dev.y - expect).abs() < 1e-9, "{} vs {}", dev.y, expect);
            last = dev.norm();
        }
    }

    #[test]
    fn flat_terrain_constant_range() {
        let terrain = Terrain::flat(20.0);
        let cfg = SimConfig::default();
        let truth = generate_truth(&cfg);
        let scanner = ScannerConfig { noise: 0.0, ..ScannerConfig::default() };
        let profiles = synth_scan(&truth.trajectory, &terrain, &scanner, &Pose::identity(), 1);
        let nadir = scanner.beams / 2;
        for p in profiles.iter().take(50) {
            assert!((p.points[nadir].z - 6.0).abs() < 1e-9);
            assert!((p.points[nadir].y).abs() < 1e-12);
        }
    }

    #[test]
    fn registered_truth_scans_lie_on_terrain() {
        let cfg = small();
        let truth = generate_truth(&cfg);
        let terrain = generate_terrain(&cfg);
        let scanner = ScannerConfig { noise: 0.0, ..ScannerConfig::default() };
        let profiles = synth_scan(&truth.trajectory, &terrain, &scanner, &Pose::identity(), 1);
        let cloud = register_profiles(&profiles, &truth.trajectory, &Extrinsics::default());
        assert_eq!(cloud.rejected_profiles, 0);
        for p in cloud.points.iter().step_by(97) {
            assert!((terrain.depth(p.x, p.y) - p.z).abs() < 1e-9);
        }
    }

    #[test]
    fn bump_is_visible() {
        let terrain = Terrain::new(20.0, vec![Bump { x: 3.0, y: -2.0, amplitude: 0.7, sigma: 1.0 }]);
        assert!((terrain.depth(3.0, -2.0) - 19.3).abs() < 1e-12);
        assert_eq!(terrain.depth(30.0, -2.0), 20.0);
        let s = terrain.intersect(&Vector3::new(3.0, -2.0, 14.0), &Vector3::z(), 30.0).unwrap();
        assert!((s - 5.3).abs() < 1e-9);
    }

    #[test]
    fn outliers_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let p = sample_outlier(&mut rng);
            let r = p.translation();
            assert!(r.xy().norm() <= 5.0);
            assert!((-0.5..=0.5).contains(&r.z) || (13.5..=14.5).contains(&r.z));
        }
    }

    #[test]
    fn outlier_injection_is_reproducible() {
        let truth = generate_truth(&SimConfig::default());
        let c = detect_crossings(&truth.trajectory, 5.0, 30.0);
        let clean = truth_closures(&truth.trajectory, &c, 1e-3, 1e-2, 1);
        let mut a = clean.clone();
        assert!(inject_outliers(&mut a, 0, 4).is_empty());
        assert_eq!(a, clean);
        let ia = inject_outliers(&mut a, 5, 4);
        let mut b = clean.clone();
        let ib = inject_outliers(&mut b, 5, 4);
        assert_eq!(ia, ib);
        assert_eq!(a, b);
        assert_eq!(ia.len(), 5);
        assert_eq!(a.iter().zip(&clean).filter(|(x, y)| x != y).count(), 5);
    }
}
