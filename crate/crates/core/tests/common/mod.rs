//! Independent oracles and random generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use minicity::geometry::{Pose2D, Vec2};
use minicity::grid::{CellState, GridGeometry, OccupancyGrid};
use minicity::sensing::{Cluster, LidarScan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(r: &mut ChaCha8Rng, w: usize, h: usize, res: f64) -> OccupancyGrid {
    let g = GridGeometry::new(w, h, res, Pose2D::default()).unwrap();
    let cells = (0..w * h)
        .map(|_| match r.random_range(0..3) {
            0 => CellState::Occupied,
            1 => CellState::Free,
            _ => CellState::Unknown,
        })
        .collect();
    OccupancyGrid::from_cells(g, cells).unwrap()
}

pub fn random_points(r: &mut ChaCha8Rng, n: usize) -> Vec<Vec2> {
    (0..n)
        .map(|_| Vec2::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)))
        .collect()
}

/// Mean nearest-neighbour distance by explicit double loop.
pub fn knn_oracle(a: &[Vec2], b: &[Vec2]) -> f64 {
    let mut total = 0.0;
    for p in a {
        let d = b
            .iter()
            .map(|q| ((p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y)).sqrt())
            .fold(f64::INFINITY, f64::min);
        total += d;
    }
    total / a.len() as f64
}

fn both_known(a: &OccupancyGrid, b: &OccupancyGrid, i: usize, j: usize) -> bool {
    a.get(i, j) != CellState::Unknown && b.get(i, j) != CellState::Unknown
}

/// IoU from explicit sets of occupied (i, j) coordinates.
pub fn iou_oracle(a: &OccupancyGrid, b: &OccupancyGrid) -> f64 {
    let mut sa = BTreeSet::new();
    let mut sb = BTreeSet::new();
    for j in 0..a.height() {
        for i in 0..a.width() {
            if !both_known(a, b, i, j) {
                continue;
            }
            if a.get(i, j) == CellState::Occupied {
                sa.insert((i, j));
            }
            if b.get(i, j) == CellState::Occupied {
                sb.insert((i, j));
            }
        }
    }
    let union = sa.union(&sb).count();
    if union == 0 {
        1.0
    } else {
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

/// RMSE of 0/1 cell values (occupied 0, free 1) in meters.
pub fn rmse_oracle(a: &OccupancyGrid, b: &OccupancyGrid) -> Option<f64> {
    let value = |s: CellState| if s == CellState::Occupied { 0.0 } else { 1.0 };
    let (mut n, mut sq) = (0usize, 0.0);
    for j in 0..a.height() {
        for i in 0..a.width() {
            if both_known(a, b, i, j) {
                let d: f64 = value(a.get(i, j)) - value(b.get(i, j));
                sq += d * d;
                n += 1;
            }
        }
    }
    (n > 0).then(|| (sq / n as f64).sqrt() * a.resolution())
}

/// Full-circle scan with piecewise-smooth structure, gaps and jumps.
pub fn random_scan(r: &mut ChaCha8Rng, beams: usize) -> LidarScan {
    let angles: Vec<f64> = (0..beams).map(|k| k as f64 * TAU / beams as f64).collect();
    let mut ranges = Vec::with_capacity(beams);
    let mut cur = r.random_range(0.5..5.0);
    for _ in 0..beams {
        let u: f64 = r.random();
        if u < 0.08 {
            ranges.push(None);
            continue;
        }
        if u < 0.2 {
            cur = r.random_range(0.5..5.0);
        } else {
            cur = (cur + r.random_range(-0.05..0.05_f64)).clamp(0.3, 6.0);
        }
        ranges.push(Some(cur));
    }
    LidarScan {
        timestamp: 0.0,
        angles,
        ranges,
    }
}

fn find(p: &mut [usize], mut i: usize) -> usize {
    while p[i] != i {
        p[i] = p[p[i]];
        i = p[i];
    }
    i
}

/// β-criterion segmentation by union-find over every adjacent beam pair,
/// including the wrap-around pair of a full sweep.
pub fn cluster_oracle(scan: &LidarScan, threshold: f64, min_size: usize) -> BTreeSet<BTreeSet<usize>> {
    let n = scan.ranges.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let m = (k + 1) % n;
        let alpha = if m == 0 {
            scan.angles[0] + TAU - scan.angles[n - 1]
        } else {
            scan.angles[m] - scan.angles[k]
        };
        if let (Some(a), Some(b)) = (scan.ranges[k], scan.ranges[m]) {
            // β measured at the farther return, between the way back to the
            // sensor and the way to the nearer return
            let (r1, r2) = if a >= b { (a, b) } else { (b, a) };
            let far = Vec2::new(r1, 0.0);
            let near = Vec2::new(r2 * alpha.cos(), r2 * alpha.sin());
            let (u, v) = (-far, near - far);
            let beta = (u.dot(v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos();
            if beta > threshold {
                let (x, y) = (find(&mut parent, k), find(&mut parent, m));
                parent[x] = y;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, BTreeSet<usize>> = Default::default();
    for k in 0..n {
        if scan.ranges[k].is_some() {
            let root = find(&mut parent, k);
            groups.entry(root).or_default().insert(k);
        }
    }
    groups.into_values().filter(|g| g.len() >= min_size.max(1)).collect()
}

pub fn partition(clusters: &[Cluster]) -> BTreeSet<BTreeSet<usize>> {
    clusters.iter().map(|c| c.beams.iter().copied().collect()).collect()
}
