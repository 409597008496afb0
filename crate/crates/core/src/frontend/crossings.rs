//! Path-crossing detection on the planar track.

use std::collections::HashMap;

use crate::trajectory::Trajectory;

/// A revisit of the same planar location: node `idx_l1` is the earlier visit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub idx_l1: usize,
    pub idx_l2: usize,
    pub t_l1: f64,
    pub t_l2: f64,
    /// Planar distance between the two nodes.
    pub distance: f64,
}

/// Node pairs within planar distance `delta_r` whose time gap is at least
/// `min_separation`. Pairs adjacent in index space (8-connectivity) form one
/// event, represented by its closest pair. Sorted by `(idx_l2, idx_l1)`.
pub fn detect_crossings(traj: &Trajectory, delta_r: f64, min_separation: f64) -> Vec<Crossing> {
    assert!(delta_r > 0.0, "crossing radius must be positive");
    let xy: Vec<[f64; 2]> = traj.poses.iter().map(|p| [p.translation().x, p.translation().y]).collect();
    let cell = |p: &[f64; 2]| ((p[0] / delta_r).floor() as i64, (p[1] / delta_r).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in xy.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }

    let r2 = delta_r * delta_r;
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (j, pj) in xy.iter().enumerate() {
        let (cx, cy) = cell(pj);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else { continue };
                for &i in bucket {
                    if i >= j || traj.times[j] - traj.times[i] < min_separation {
                        continue;
                    }
                    let d2 = (xy[i][0] - pj[0]).powi(2) + (xy[i][1] - pj[1]).powi(2);
                    if d2 <= r2 {
                        pairs.push((i, j, d2));
                    }
                }
            }
        }
    }
    group_events(traj, pairs)
}

fn group_events(traj: &Trajectory, mut pairs: Vec<(usize, usize, f64)>) -> Vec<Crossing> {
    pairs.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let slot: HashMap<(usize, usize), usize> = pairs.iter().enumerate().map(|(s, p)| ((p.0, p.1), s)).collect();
    let mut parent: Vec<usize> = (0..pairs.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (s, &(i, j, _)) in pairs.iter().enumerate() {
        for (di, dj) in [(0isize, 1isize), (1, -1), (1, 0), (1, 1)] {
            let (Some(ni), Some(nj)) = (i.checked_add_signed(di), j.checked_add_signed(dj)) else { continue };
            if let Some(&t) = slot.get(&(ni, nj)) {
                let (a, b) = (find(&mut parent, s), find(&mut parent, t));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut best: HashMap<usize, usize> = HashMap::new();
    for s in 0..pairs.len() {
        let root = find(&mut parent, s);
        let e = best.entry(root).or_insert(s);
        // pairs are sorted by (i, j), so strict improvement keeps the smallest index on ties
        if pairs[s].2 < pairs[*e].2 {
            *e = s;
        }
    }
    let mut out: Vec<Crossing> = best
        .into_values()
        .map(|s| {
            let (i, j, d2) = pairs[s];
            Crossing { idx_l1: i, idx_l2: j, t_l1: traj.times[i], t_l2: traj.times[j], distance: d2.sqrt() }
        })
        .collect();
    out.sort_by_key(|c| (c.idx_l2, c.idx_l1));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Pose;
    use nalgebra::Vector3;
    use std::f64::consts::PI;

    fn planar(xy: &[(f64, f64)], dt: f64) -> Trajectory {
        let times = (0..xy.len()).map(|k| k as f64 * dt).collect();
        let poses = xy.iter().map(|&(x, y)| Pose::from_translation(Vector3::new(x, y, 0.0))).collect();
        Trajectory::new(times, poses).unwrap()
    }

    fn segments_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
        let orient = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
        let (o1, o2) = (orient(a, b, c), orient(a, b, d));
        let (o3, o4) = (orient(c, d, a), orient(c, d, b));
        o1 * o2 < 0.0 && o3 * o4 < 0.0
    }

    #[test]
    fn straight_line_has_no_crossings() {
        let xy: Vec<(f64, f64)> = (0..2000).map(|k| (k as f64 * 0.15, 0.0)).collect();
        assert!(detect_crossings(&planar(&xy, 0.1), 5.0, 30.0).is_empty());
    }

    #[test]
    fn figure_eight_matches_segment_intersections() {
        let n = 3000;
        let xy: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let t = -PI / 2.0 + 0.3 + (2.0 * PI - 0.6) * k as f64 / n as f64;
                (40.0 * t.sin(), 40.0 * t.sin() * t.cos())
            })
            .collect();
        let mut hits = Vec::new();
        for a in 0..n - 1 {
            for b in a + 2..n - 1 {
                if segments_cross(xy[a], xy[a + 1], xy[b], xy[b + 1]) {
                    hits.push((a, b));
                }
            }
        }
        assert_eq!(hits.len(), 1);
        let found = detect_crossings(&planar(&xy, 0.1), 2.0, 30.0);
        assert_eq!(found.len(), 1);
        let (a, b) = hits[0];
        assert!(found[0].idx_l1.abs_diff(a) <= 1 && found[0].idx_l2.abs_diff(b) <= 1);
    }

    #[test]
    fn respects_time_separation() {
        let xy: Vec<(f64, f64)> = (0..400).map(|k| ((k as f64 * 0.05).cos() * 3.0, (k as f64 * 0.05).sin() * 3.0)).collect();
        assert!(detect_crossings(&planar(&xy, 0.1), 5.0, 1e6).is_empty());
        assert!(!detect_crossings(&planar(&xy, 0.1), 5.0, 30.0).is_empty());
    }
}
