//! Subcommand implementations over dataset directories.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lcsmooth::factors::LoopClosureMeasurement;
use lcsmooth::frontend::{register_profiles, Extrinsics, LaserProfile};
use lcsmooth::io::{self, ClosureRecord, IoError};
use lcsmooth::metrics::{drift_percent, point_disparity, relative_pose_errors, summarize, Summary, QUANTILES};
use lcsmooth::pipeline::{close_loops, smooth as run_smoother};
use lcsmooth::sim::{degrade, generate_terrain, generate_truth, inject_outliers, synth_scan, SegmentLabel};
use lcsmooth::solver::default_prior_covariance;
use lcsmooth::trajectory::Trajectory;
use lcsmooth::Pose;
use nalgebra::{Matrix6, Vector3};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{hex, ConfigError, PipelineConfig};

/// Neighbourhood searched by the disparity metric, m.
pub const DISPARITY_GATE: f64 = 0.25;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("solver failed: {0}")]
    Solver(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    fn from_io(path: &Path, e: IoError) -> Self {
        match e {
            IoError::Io(source) => Self::io(path, source),
            other => Self::Parse { path: path.to_path_buf(), message: other.to_string() },
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Validation(_) | Self::Parse { .. } => 2,
            Self::Solver(_) => 3,
            Self::Io { .. } => 4,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn read_with<T>(path: &Path, f: impl FnOnce(BufReader<File>) -> Result<T, IoError>) -> Result<T, CliError> {
    f(open(path)?).map_err(|e| CliError::from_io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<(), IoError>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| CliError::from_io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Time interval of a survey segment used for disparity evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct PassInterval {
    pub label: String,
    pub t_start: f64,
    pub t_end: f64,
}

fn write_passes(path: &Path, passes: &[PassInterval]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "label,t_start,t_end")?;
        for p in passes {
            writeln!(w, "{},{},{}", p.label, p.t_start, p.t_end)?;
        }
        w.flush()
    };
    emit().map_err(|e| CliError::io(path, e))
}

fn read_passes(path: &Path) -> Result<Vec<PassInterval>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let parse_err = |message: String| CliError::Parse { path: path.to_path_buf(), message };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok());
        match (rec.get(0), num(1), num(2)) {
            (Some(label), Some(t_start), Some(t_end)) if rec.len() == 3 && t_end >= t_start => {
                out.push(PassInterval { label: label.to_string(), t_start, t_end })
            }
            _ => return Err(parse_err(format!("line {line}: expected `label,t_start,t_end`"))),
        }
    }
    Ok(out)
}

/// Writes truth, prior, profiles, pass intervals, the canonical config and
/// a manifest of content hashes into `dir`.
pub fn simulate(cfg: &mut PipelineConfig, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut sim = cfg.sim.clone();
    sim.seed = cfg.seed;
    let truth = generate_truth(&sim);
    let prior = degrade(&truth.trajectory, &sim.drift, sim.seed);
    let terrain = generate_terrain(&sim);
    let profiles = synth_scan(&truth.trajectory, &terrain, &sim.scanner, &Pose::identity(), sim.seed);
    let passes: Vec<PassInterval> = truth
        .segments
        .iter()
        .filter_map(|s| {
            let label = match s.label {
                SegmentLabel::Pass(i) => format!("pass{i}"),
                SegmentLabel::TieLine => "tie".to_string(),
                _ => return None,
            };
            let t = &truth.trajectory.times;
            Some(PassInterval { label, t_start: t[s.nodes.start], t_end: t[s.nodes.end - 1] })
        })
        .collect();

    let files = ["truth.csv", "prior.csv", "profiles.csv", "passes.csv", "config.conf"];
    write_with(&dir.join(files[0]), |w| io::write_trajectory(w, &truth.trajectory))?;
    write_with(&dir.join(files[1]), |w| io::write_trajectory(w, &prior))?;
    write_with(&dir.join(files[2]), |w| io::write_profiles(w, &profiles))?;
    write_passes(&dir.join(files[3]), &passes)?;
    let conf = dir.join(files[4]);
    fs::write(&conf, cfg.render()).map_err(|e| CliError::io(&conf, e))?;

    let mut hashes = serde_json::Map::new();
    for f in files {
        hashes.insert(f.to_string(), Value::String(file_hash(&dir.join(f))?));
    }
    let manifest = json!({
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "nodes": truth.trajectory.len(),
        "profiles": profiles.len(),
        "files": hashes,
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    log::info!("wrote {} nodes and {} profiles to {}", truth.trajectory.len(), profiles.len(), dir.display());
    Ok(())
}

fn diagonal(cov: &Matrix6<f64>) -> [f64; 6] {
    std::array::from_fn(|i| cov[(i, i)])
}

pub fn closeloops(cfg: &PipelineConfig, dataset: &Path, output: &Path, outliers: usize) -> Result<(), CliError> {
    let prior = read_with(&dataset.join("prior.csv"), io::read_trajectory)?;
    let profiles: Vec<LaserProfile> = read_with(&dataset.join("profiles.csv"), io::read_profiles)?;
    let cloud = register_profiles(&profiles, &prior, &Extrinsics::default());
    let run = close_loops(&prior, &cloud, &cfg.frontend);
    if run.crossings.is_empty() {
        log::warn!("no crossings found; writing an empty closure file");
    }
    let mut meas: Vec<LoopClosureMeasurement<f64>> = run.closures.iter().map(|c| c.0.clone()).collect();
    if outliers > meas.len() {
        return Err(CliError::Validation(format!("--outliers {outliers} exceeds the {} closures found", meas.len())));
    }
    if outliers > 0 {
        let replaced = inject_outliers(&mut meas, outliers, cfg.seed);
        log::info!("replaced closures {replaced:?} with outliers");
    }
    let records: Vec<ClosureRecord> = meas
        .iter()
        .map(|m| ClosureRecord {
            t_l1: prior.times[m.idx_l1],
            t_l2: prior.times[m.idx_l2],
            xi: m.xi_meas,
            variances: diagonal(&m.cov),
        })
        .collect();
    write_with(output, |w| io::write_loop_closures(w, &records))?;
    log::info!("{} crossings, {} closures, {} dropped", run.crossings.len(), records.len(), run.dropped.len());
    Ok(())
}

/// Maps closure times onto prior nodes. A time within half the median
/// sample period of a node snaps to it; any other time inside the span gets
/// a node interpolated from the prior.
pub fn resolve_closures(
    prior: &Trajectory,
    records: &[ClosureRecord],
) -> Result<(Trajectory, Vec<LoopClosureMeasurement<f64>>, usize), CliError> {
    let mut gaps: Vec<f64> = prior.times.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let half = gaps.get(gaps.len() / 2).copied().unwrap_or(f64::INFINITY) / 2.0;
    let mut extra: Vec<f64> = Vec::new();
    for r in records {
        for t in [r.t_l1, r.t_l2] {
            if t < prior.start() - half || t > prior.end() + half {
                return Err(CliError::Validation(format!("closure time {t} is outside the trajectory span")));
            }
            let k = prior.nearest_index(t);
            if (prior.times[k] - t).abs() > half {
                extra.push(t);
            }
        }
    }
    extra.sort_by(f64::total_cmp);
    extra.dedup();
    let traj = if extra.is_empty() {
        prior.clone()
    } else {
        let mut nodes: Vec<(f64, Pose)> = prior.times.iter().copied().zip(prior.poses.iter().copied()).collect();
        for &t in &extra {
            let pose = prior.pose_at(t).map_err(|e| CliError::Validation(e.to_string()))?;
            nodes.push((t, pose));
        }
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (times, poses) = nodes.into_iter().unzip();
        Trajectory::new(times, poses).map_err(|e| CliError::Validation(e.to_string()))?
    };
    let meas = records
        .iter()
        .map(|r| {
            let (i, j) = (traj.nearest_index(r.t_l1), traj.nearest_index(r.t_l2));
            if i >= j {
                return Err(CliError::Validation(format!("closure {} -> {} maps onto a single node", r.t_l1, r.t_l2)));
            }
            Ok(LoopClosureMeasurement { idx_l1: i, idx_l2: j, xi_meas: r.xi, cov: Matrix6::from_diagonal(&r.variances.into()) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((traj, meas, extra.len()))
}

pub fn smooth(cfg: &PipelineConfig, dataset: &Path, closures: &Path, keep: Option<usize>, out: &Path) -> Result<(), CliError> {
    let prior = read_with(&dataset.join("prior.csv"), io::read_trajectory)?;
    let mut records = read_with(closures, io::read_loop_closures)?;
    if let Some(k) = keep {
        records.truncate(k);
    }
    let (prior, meas, inserted) = resolve_closures(&prior, &records)?;
    let (post, report) = run_smoother(&prior, &meas, &cfg.hyper, default_prior_covariance(), &cfg.solver)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let posterior_path = out.join("posterior.csv");
    write_with(&posterior_path, |w| io::write_trajectory(w, &post))?;
    let closures_json: Vec<Value> = records
        .iter()
        .zip(&report.weights)
        .map(|(r, w)| json!({ "t_l1": r.t_l1, "t_l2": r.t_l2, "weight": w }))
        .collect();
    let summary = json!({
        "success": report.succeeded(),
        "status": format!("{:?}", report.status),
        "iterations": report.iterations,
        "objective": report.objective,
        "objective_trace": report.objective_trace,
        "weights": report.weights,
        "closures": closures_json,
        "robust": cfg.solver.robust.enabled,
        "inserted_nodes": inserted,
    });
    write_json(&out.join("smooth_report.json"), &summary)?;
    if !report.succeeded() {
        return Err(CliError::Solver(format!("{:?}; best iterate written to {}", report.status, posterior_path.display())));
    }
    log::info!("converged in {} iterations, objective {:.6e}", report.iterations, report.objective);
    Ok(())
}

pub struct EvalInputs {
    pub estimate: PathBuf,
    pub truth: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub passes: Option<PathBuf>,
    pub closures: Option<PathBuf>,
}

fn summary_json(s: &Option<Summary>) -> Value {
    let Some(s) = s else { return Value::Null };
    let label = |p: f64| match p {
        p if p == QUANTILES[1] => "1sigma".to_string(),
        p if p == QUANTILES[4] => "2sigma".to_string(),
        p if p == QUANTILES[5] => "3sigma".to_string(),
        p => format!("{}%", (p * 100.0).round()),
    };
    let mut m = serde_json::Map::new();
    m.insert("count".into(), json!(s.count));
    m.insert("mean".into(), json!(s.mean));
    m.insert("max".into(), json!(s.max));
    for &(p, v) in &s.quantiles {
        m.insert(label(p), json!(v));
    }
    Value::Object(m)
}

pub fn evaluate(inputs: &EvalInputs, out: &Path) -> Result<(), CliError> {
    let has_disparity = inputs.profiles.is_some() && inputs.passes.is_some();
    if inputs.truth.is_none() && !has_disparity {
        return Err(CliError::Validation("evaluation needs --truth or both --profiles and --passes".into()));
    }
    let estimate = read_with(&inputs.estimate, io::read_trajectory)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut report = serde_json::Map::new();

    match &inputs.truth {
        Some(path) => {
            let truth = read_with(path, io::read_trajectory)?;
            let anchor = match &inputs.closures {
                Some(c) => {
                    let recs = read_with(c, io::read_loop_closures)?;
                    let t = recs.iter().map(|r| r.t_l1).fold(f64::INFINITY, f64::min);
                    if t.is_finite() { truth.nearest_index(t) } else { 0 }
                }
                None => 0,
            };
            let errs = relative_pose_errors(&estimate, &truth, anchor).map_err(|e| CliError::Validation(e.to_string()))?;
            let errors_path = out.join("errors.csv");
            let mut w = create(&errors_path)?;
            let mut emit = || -> std::io::Result<()> {
                writeln!(w, "t,displacement,roll_deg,pitch_deg,yaw_deg")?;
                for (k, t) in truth.times.iter().enumerate() {
                    let a = errs.attitude_deg[k];
                    writeln!(w, "{t},{},{},{},{}", errs.displacement[k], a.x, a.y, a.z)?;
                }
                w.flush()
            };
            emit().map_err(|e| CliError::io(&errors_path, e))?;
            let axis = |i: usize| summarize(&errs.attitude_deg.iter().map(|a| a[i]).collect::<Vec<_>>());
            report.insert(
                "relative_errors".into(),
                json!({
                    "anchor_time": truth.times[anchor],
                    "drift_percent": drift_percent(&errs, &truth),
                    "max_displacement": errs.max_displacement(),
                    "displacement": summary_json(&summarize(&errs.displacement)),
                    "roll_deg": summary_json(&axis(0)),
                    "pitch_deg": summary_json(&axis(1)),
                    "yaw_deg": summary_json(&axis(2)),
                }),
            );
        }
        None => {
            report.insert("relative_errors".into(), json!({ "omitted": "no truth trajectory given" }));
        }
    }

    if let (Some(prof), Some(passes)) = (&inputs.profiles, &inputs.passes) {
        let profiles = read_with(prof, io::read_profiles)?;
        let intervals = read_passes(passes)?;
        let disparity = disparity_by_pass(&estimate, &profiles, &intervals);
        report.insert(
            "point_disparity".into(),
            json!({ "gate": DISPARITY_GATE, "passes": intervals.len(), "summary": summary_json(&summarize(&disparity)) }),
        );
    } else {
        report.insert("point_disparity".into(), json!({ "omitted": "needs --profiles and --passes" }));
    }
    write_json(&out.join("evaluation.json"), &Value::Object(report))
}

/// Registers the profiles along `traj`, splits the cloud by pass interval
/// and pools the nearest-neighbour disparities between passes.
pub fn disparity_by_pass(traj: &Trajectory, profiles: &[LaserProfile], passes: &[PassInterval]) -> Vec<f64> {
    let cloud = register_profiles(profiles, traj, &Extrinsics::default());
    let groups: Vec<Vec<Vector3<f64>>> = passes
        .iter()
        .map(|p| {
            cloud.points.iter().zip(&cloud.times).filter(|(_, &t)| t >= p.t_start && t <= p.t_end).map(|(q, _)| *q).collect()
        })
        .collect();
    point_disparity(&groups, DISPARITY_GATE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lcsmooth::Twist;

    fn line(n: usize, dt: f64) -> Trajectory {
        let times = (0..n).map(|k| k as f64 * dt).collect();
        let poses = (0..n).map(|k| Pose::from_translation(Vector3::new(k as f64, 0.0, 0.0))).collect();
        Trajectory::new(times, poses).unwrap()
    }

    fn record(t1: f64, t2: f64) -> ClosureRecord {
        ClosureRecord { t_l1: t1, t_l2: t2, xi: Pose::exp(&Twist::zero()), variances: [1e-4; 6] }
    }

    #[test]
    fn closure_times_snap_to_nodes() {
        let prior = line(100, 0.1);
        let (traj, meas, inserted) = resolve_closures(&prior, &[record(1.02, 7.96)]).unwrap();
        assert_eq!(inserted, 0);
        assert_eq!(traj, prior);
        assert_eq!((meas[0].idx_l1, meas[0].idx_l2), (10, 80));
    }

    #[test]
    fn gaps_get_interpolated_nodes() {
        let mut prior = line(100, 0.1);
        prior.times.iter_mut().skip(50).for_each(|t| *t += 1.0);
        let (traj, meas, inserted) = resolve_closures(&prior, &[record(1.0, 5.5)]).unwrap();
        assert_eq!(inserted, 1);
        assert_eq!(traj.len(), 101);
        let k = meas[0].idx_l2;
        assert_eq!(traj.times[k], 5.5);
        assert!((traj.poses[k].translation().x - (49.0 + 0.6 / 1.1)).abs() < 1e-9);
        assert!(resolve_closures(&prior, &[record(1.0, 50.0)]).is_err());
    }

    #[test]
    fn passes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let passes = vec![PassInterval { label: "pass0".into(), t_start: 0.5, t_end: 30.25 }];
        write_passes(&path, &passes).unwrap();
        assert_eq!(read_passes(&path).unwrap(), passes);
        fs::write(&path, "label,t_start,t_end\npass0,3,1\n").unwrap();
        assert!(matches!(read_passes(&path), Err(CliError::Parse { .. })));
    }
}
