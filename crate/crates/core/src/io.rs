//! Text formats at the file boundary: trajectory, loop-closure and profile
//! CSV, and ASCII PLY point clouds.
//!
//! Floats are written in their shortest round-trip form, so a write followed
//! by a read reproduces every value bit for bit.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{Matrix3, Vector3};

use crate::frontend::LaserProfile;
use crate::lie::LieError;
use crate::trajectory::{Trajectory, TrajectoryError};
use crate::{Pose, Rotation};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

pub const TRAJECTORY_HEADER: [&str; 8] = ["t", "rx", "ry", "rz", "qw", "qx", "qy", "qz"];

pub const CLOSURE_HEADER: [&str; 20] = [
    "t_l1", "t_l2", "c11", "c12", "c13", "c21", "c22", "c23", "c31", "c32", "c33", "rx", "ry", "rz", "var_phi_x",
    "var_phi_y", "var_phi_z", "var_rho_x", "var_rho_y", "var_rho_z",
];

pub const PROFILE_HEADER: [&str; 4] = ["t", "x", "y", "z"];

/// A loop closure as stored on disk: node times rather than node indices.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosureRecord {
    pub t_l1: f64,
    pub t_l2: f64,
    pub xi: Pose,
    /// Diagonal of the measurement covariance, `(phi, rho)` order.
    pub variances: [f64; 6],
}

fn parse_err(line: u64, message: impl Into<String>) -> IoError {
    IoError::Parse { line, message: message.into() }
}

fn lie_err(line: u64, e: LieError) -> IoError {
    parse_err(line, e.to_string())
}

/// Reads a headed CSV whose rows all have `N` numeric fields.
fn read_rows<R: Read, const N: usize>(reader: R, header: &[&str; N]) -> Result<Vec<(u64, [f64; N])>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let found: Vec<String> = rdr.headers().map_err(|e| csv_err(&e))?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(parse_err(1, format!("expected header `{}`, found `{}`", header.join(","), found.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != N {
            return Err(parse_err(line, format!("expected {N} fields, found {}", rec.len())));
        }
        let mut row = [0.0; N];
        for (i, field) in rec.iter().enumerate() {
            row[i] = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("field `{}` is not a finite number: `{field}`", header[i])))?;
        }
        rows.push((line, row));
    }
    Ok(rows)
}

fn csv_err(e: &csv::Error) -> IoError {
    match e.position() {
        Some(p) => parse_err(p.line(), e.to_string()),
        None => parse_err(0, e.to_string()),
    }
}

fn write_row<W: Write>(w: &mut W, values: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    let fields: Vec<String> = values.into_iter().map(|v| v.to_string()).collect();
    writeln!(w, "{}", fields.join(","))
}

pub fn write_trajectory<W: Write>(mut w: W, traj: &Trajectory) -> Result<(), IoError> {
    writeln!(w, "{}", TRAJECTORY_HEADER.join(","))?;
    for (t, p) in traj.times.iter().zip(&traj.poses) {
        let r = p.translation();
        let q = p.rotation().to_quaternion();
        write_row(&mut w, [*t, r.x, r.y, r.z, q[0], q[1], q[2], q[3]])?;
    }
    Ok(())
}

pub fn read_trajectory<R: Read>(r: R) -> Result<Trajectory, IoError> {
    let rows = read_rows(r, &TRAJECTORY_HEADER)?;
    if rows.is_empty() {
        return Err(parse_err(1, "trajectory has no rows"));
    }
    let mut times = Vec::with_capacity(rows.len());
    let mut poses = Vec::with_capacity(rows.len());
    for (line, v) in rows {
        if let Some(&last) = times.last() {
            if !(v[0] > last) {
                return Err(parse_err(line, format!("time {} does not increase", v[0])));
            }
        }
        let rot = Rotation::from_quaternion([v[4], v[5], v[6], v[7]]).map_err(|e| lie_err(line, e))?;
        times.push(v[0]);
        poses.push(Pose::new(rot, Vector3::new(v[1], v[2], v[3])));
    }
    Ok(Trajectory::new(times, poses)?)
}

pub fn write_loop_closures<W: Write>(mut w: W, records: &[ClosureRecord]) -> Result<(), IoError> {
    writeln!(w, "{}", CLOSURE_HEADER.join(","))?;
    for rec in records {
        let c = rec.xi.rotation().matrix();
        let r = rec.xi.translation();
        let mut row = vec![rec.t_l1, rec.t_l2];
        row.extend((0..3).flat_map(|i| (0..3).map(move |j| c[(i, j)])));
        row.extend(r.iter().copied());
        row.extend(rec.variances);
        write_row(&mut w, row)?;
    }
    Ok(())
}

pub fn read_loop_closures<R: Read>(r: R) -> Result<Vec<ClosureRecord>, IoError> {
    read_rows(r, &CLOSURE_HEADER)?
        .into_iter()
        .map(|(line, v)| {
            if !(v[1] > v[0]) {
                return Err(parse_err(line, "t_l2 must follow t_l1"));
            }
            let c = Matrix3::from_row_slice(&v[2..11]);
            let rot = Rotation::from_matrix(c).map_err(|e| lie_err(line, e))?;
            let mut variances = [0.0; 6];
            variances.copy_from_slice(&v[14..20]);
            if variances.iter().any(|&s| s <= 0.0) {
                return Err(parse_err(line, "covariance diagonal must be positive"));
            }
            Ok(ClosureRecord { t_l1: v[0], t_l2: v[1], xi: Pose::new(rot, Vector3::new(v[11], v[12], v[13])), variances })
        })
        .collect()
}

/// One row per point; consecutive rows sharing a timestamp form a profile.
pub fn write_profiles<W: Write>(mut w: W, profiles: &[LaserProfile]) -> Result<(), IoError> {
    writeln!(w, "{}", PROFILE_HEADER.join(","))?;
    for prof in profiles {
        for p in &prof.points {
            write_row(&mut w, [prof.timestamp, p.x, p.y, p.z])?;
        }
    }
    Ok(())
}

pub fn read_profiles<R: Read>(r: R) -> Result<Vec<LaserProfile>, IoError> {
    let mut out: Vec<LaserProfile> = Vec::new();
    for (line, v) in read_rows(r, &PROFILE_HEADER)? {
        let p = Vector3::new(v[1], v[2], v[3]);
        match out.last_mut() {
            Some(prof) if prof.timestamp == v[0] => prof.points.push(p),
            Some(prof) if prof.timestamp > v[0] => {
                return Err(parse_err(line, format!("time {} precedes the previous profile", v[0])));
            }
            _ => out.push(LaserProfile { timestamp: v[0], points: vec![p] }),
        }
    }
    Ok(out)
}

/// ASCII PLY with `x y z` and, when given, `nx ny nz` vertex properties.
pub fn write_ply<W: Write>(mut w: W, points: &[Vector3<f64>], normals: Option<&[Vector3<f64>]>) -> Result<(), IoError> {
    if let Some(n) = normals {
        assert_eq!(n.len(), points.len(), "one normal per point");
    }
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", points.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}")?;
    }
    if normals.is_some() {
        for axis in ["nx", "ny", "nz"] {
            writeln!(w, "property double {axis}")?;
        }
    }
    writeln!(w, "end_header")?;
    for (i, p) in points.iter().enumerate() {
        match normals {
            Some(n) => writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n[i].x, n[i].y, n[i].z)?,
            None => writeln!(w, "{} {} {}", p.x, p.y, p.z)?,
        }
    }
    Ok(())
}

/// Points and optional normals from an ASCII PLY written by [`write_ply`]
/// or any tool emitting `x y z [nx ny nz]` vertex properties in that order.
pub fn read_ply<R: Read>(r: R) -> Result<(Vec<Vector3<f64>>, Option<Vec<Vector3<f64>>>), IoError> {
    let mut lines = BufReader::new(r).lines().zip(1u64..);
    let mut line_no = 0u64;
    let mut next = || -> Result<Option<(u64, String)>, IoError> {
        match lines.next() {
            Some((l, n)) => Ok(Some((n, l?))),
            None => Ok(None),
        }
    };
    match next()? {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(1, "missing `ply` magic")),
    }
    let (mut count, mut props) = (None, Vec::new());
    loop {
        let Some((n, l)) = next()? else { return Err(parse_err(line_no, "missing end_header")) };
        line_no = n;
        let words: Vec<&str> = l.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(parse_err(n, "only ascii PLY is supported")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", c] => {
                count = Some(c.parse::<usize>().map_err(|_| parse_err(n, format!("bad vertex count `{c}`")))?);
            }
            ["element", ..] => return Err(parse_err(n, "only a vertex element is supported")),
            ["property", _, name] => props.push(name.to_string()),
            ["end_header"] => break,
            _ => return Err(parse_err(n, format!("unexpected header line `{l}`"))),
        }
    }
    let count = count.ok_or_else(|| parse_err(line_no, "no vertex element"))?;
    let has_normals = match props.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["x", "y", "z"] => false,
        ["x", "y", "z", "nx", "ny", "nz"] => true,
        _ => return Err(parse_err(line_no, format!("unsupported vertex properties {props:?}"))),
    };
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::new();
    for _ in 0..count {
        let Some((n, l)) = next()? else { return Err(parse_err(line_no + 1, "fewer vertices than declared")) };
        line_no = n;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| parse_err(n, format!("bad vertex `{l}`")))?;
        if v.len() != props.len() {
            return Err(parse_err(n, format!("expected {} values, found {}", props.len(), v.len())));
        }
        points.push(Vector3::new(v[0], v[1], v[2]));
        if has_normals {
            normals.push(Vector3::new(v[3], v[4], v[5]));
        }
    }
    Ok((points, has_normals.then_some(normals)))
}
