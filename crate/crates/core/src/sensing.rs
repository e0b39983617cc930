//! Simulated 2D LiDAR, odometry noise, and the infrastructure detection
//! pipeline: depth clustering, static-structure filtering and tracking.

use std::f64::consts::TAU;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedRect, Pose2D, Vec2};
use crate::grid::{CellState, OccupancyGrid};
use crate::rng::gaussian;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarParams {
    pub min_range: f64,
    pub max_range: f64,
    pub beams: usize,
    pub fov: f64,
    pub range_noise_sigma: f64,
    pub rate_hz: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            min_range: 0.12,
            max_range: 10.0,
            beams: 360,
            fov: TAU,
            range_noise_sigma: 0.005,
            rate_hz: 10.0,
        }
    }
}

impl LidarParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_range > 0.0 && self.min_range < self.max_range) {
            return Err(Error::Config(format!(
                "lidar range must satisfy 0 < min < max, got {}..{}",
                self.min_range, self.max_range
            )));
        }
        if self.beams < 2 || !(self.fov > 0.0 && self.fov <= TAU + 1e-12) {
            return Err(Error::Config("lidar needs >= 2 beams and 0 < fov <= 2π".into()));
        }
        if !(self.range_noise_sigma >= 0.0) || !(self.rate_hz > 0.0) {
            return Err(Error::Config("lidar noise must be >= 0 and rate > 0".into()));
        }
        Ok(())
    }

    pub fn is_full_circle(&self) -> bool {
        self.fov >= TAU - 1e-9
    }

    /// Beam angles in the sensor frame, strictly increasing.
    pub fn angles(&self) -> Vec<f64> {
        let n = self.beams;
        let (start, inc) = if self.is_full_circle() {
            (-std::f64::consts::PI, TAU / n as f64)
        } else {
            (-self.fov / 2.0, self.fov / (n - 1) as f64)
        };
        (0..n).map(|k| start + k as f64 * inc).collect()
    }
}

/// One sweep. `None` ranges are no-hit returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub timestamp: f64,
    pub angles: Vec<f64>,
    pub ranges: Vec<Option<f64>>,
}

impl LidarScan {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Return point of beam `k` in the sensor frame.
    pub fn point(&self, k: usize) -> Option<Vec2> {
        self.ranges[k].map(|r| Vec2::from_angle(self.angles[k]) * r)
    }
}

/// A LiDAR at a fixed pose with its static-world ranges cached; only
/// dynamic obstacles and noise are evaluated per sweep.
#[derive(Debug, Clone)]
pub struct FixedLidar {
    pub params: LidarParams,
    pub pose: Pose2D,
    angles: Vec<f64>,
    static_ranges: Vec<Option<f64>>,
}

impl FixedLidar {
    pub fn new(grid: &OccupancyGrid, pose: Pose2D, params: LidarParams) -> Self {
        let angles = params.angles();
        let static_ranges = angles
            .iter()
            .map(|&a| grid.raycast(&pose, a, params.max_range).range())
            .collect();
        Self {
            params,
            pose,
            angles,
            static_ranges,
        }
    }

    /// Noise-free ranges to the static map, one per beam.
    pub fn static_ranges(&self) -> &[Option<f64>] {
        &self.static_ranges
    }

    pub fn scan<R: rand::Rng + ?Sized>(&self, obstacles: &[OrientedRect], timestamp: f64, rng: &mut R) -> LidarScan {
        let origin = self.pose.position();
        let ranges = self
            .angles
            .iter()
            .zip(&self.static_ranges)
            .map(|(&a, &r_static)| {
                let dir = Vec2::from_angle(self.pose.theta + a);
                let r_dyn = obstacles
                    .iter()
                    .filter_map(|o| o.ray_intersection(origin, dir))
                    .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.min(r))));
                let r = match (r_static, r_dyn) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
                let noise = gaussian(rng, self.params.range_noise_sigma);
                r.and_then(|r| {
                    let r = r + noise;
                    (r >= self.params.min_range && r <= self.params.max_range).then_some(r)
                })
            })
            .collect();
        LidarScan {
            timestamp,
            angles: self.angles.clone(),
            ranges,
        }
    }
}

/// Per-beam range = nearest of grid raycast and exact obstacle intersection,
/// plus Gaussian noise; readings outside `[min_range, max_range]` become no-hit.
pub fn simulate_scan<R: rand::Rng + ?Sized>(
    grid: &OccupancyGrid,
    dynamic_obstacles: &[OrientedRect],
    pose: &Pose2D,
    params: &LidarParams,
    timestamp: f64,
    rng: &mut R,
) -> LidarScan {
    FixedLidar::new(grid, *pose, *params).scan(dynamic_obstacles, timestamp, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OdometrySigmas {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl OdometrySigmas {
    pub fn uniform(s: f64) -> Self {
        Self { x: s, y: s, theta: s }
    }
}

/// Adds independent zero-mean Gaussian noise to each component of a
/// relative motion `(dx, dy, dθ)`.
pub fn noisy_odometry<R: rand::Rng + ?Sized>(true_delta: &Pose2D, sigmas: &OdometrySigmas, rng: &mut R) -> Pose2D {
    let nx = gaussian(rng, sigmas.x);
    let ny = gaussian(rng, sigmas.y);
    let nt = gaussian(rng, sigmas.theta);
    Pose2D::new(true_delta.x + nx, true_delta.y + ny, true_delta.theta + nt)
}

/// A run of adjacent beams segmented as one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Beam indices in sweep order; wraps past the last beam on full circles.
    pub beams: Vec<usize>,
    pub centroid: Vec2,
}

impl Cluster {
    pub fn count(&self) -> usize {
        self.beams.len()
    }

    pub fn first_beam(&self) -> usize {
        self.beams[0]
    }

    pub fn last_beam(&self) -> usize {
        *self.beams.last().expect("cluster is never empty")
    }

    /// Same cluster with the centroid mapped from the sensor frame into the
    /// frame of `sensor_pose`'s parent.
    pub fn in_frame(&self, sensor_pose: &Pose2D) -> Cluster {
        Cluster {
            beams: self.beams.clone(),
            centroid: sensor_pose.transform_point(self.centroid),
        }
    }
}

/// Angle β between the beam to the farther return and the segment joining
/// both returns; large β means the two points lie on one surface.
pub fn depth_beta(r_a: f64, r_b: f64, alpha: f64) -> f64 {
    let (r1, r2) = if r_a >= r_b { (r_a, r_b) } else { (r_b, r_a) };
    (r2 * alpha.sin()).atan2(r1 - r2 * alpha.cos())
}

/// Angular gap between beam `k` and the next one, or `None` when `k` is the
/// last beam of a partial sweep.
fn next_gap(scan: &LidarScan, k: usize, full_circle: bool) -> Option<(usize, f64)> {
    let n = scan.len();
    if k + 1 < n {
        Some((k + 1, scan.angles[k + 1] - scan.angles[k]))
    } else if full_circle && n > 1 {
        Some((0, scan.angles[0] + TAU - scan.angles[n - 1]))
    } else {
        None
    }
}

fn joins(scan: &LidarScan, k: usize, full_circle: bool, threshold: f64) -> bool {
    match (next_gap(scan, k, full_circle), scan.ranges[k]) {
        (Some((m, alpha)), Some(ra)) => match scan.ranges[m] {
            Some(rb) => depth_beta(ra, rb, alpha) > threshold,
            None => false,
        },
        _ => false,
    }
}

/// Segments a scan by the β criterion. Adjacent valid beams share a cluster
/// iff their β exceeds `angle_threshold`; no-hit beams break clusters.
/// On full-circle scans the last and first beams are adjacent.
pub fn depth_cluster(scan: &LidarScan, angle_threshold: f64, min_cluster_size: usize) -> Vec<Cluster> {
    let n = scan.len();
    if n == 0 {
        return Vec::new();
    }
    let full = scan
        .angles
        .first()
        .zip(scan.angles.last())
        .map(|(a, b)| b - a + (b - a) / (n.max(2) - 1) as f64 >= TAU - 1e-6)
        .unwrap_or(false);
    let link: Vec<bool> = (0..n).map(|k| joins(scan, k, full, angle_threshold)).collect();
    let valid = |k: usize| scan.ranges[k].is_some();

    // Start just after a broken link so wrapped runs are walked contiguously.
    let start = match (0..n).find(|&k| !link[k]) {
        Some(k) => (k + 1) % n,
        None => 0,
    };
    let mut runs: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for off in 0..n {
        let k = (start + off) % n;
        if !valid(k) {
            continue;
        }
        current.push(k);
        if !link[k] || off == n - 1 {
            runs.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs.into_iter()
        .filter(|r| r.len() >= min_cluster_size.max(1))
        .map(|beams| {
            let sum = beams
                .iter()
                .map(|&k| scan.point(k).expect("valid beam"))
                .fold(Vec2::ZERO, |a, p| a + p);
            let centroid = sum * (1.0 / beams.len() as f64);
            Cluster { beams, centroid }
        })
        .collect()
}

/// Joins clusters that come within `distance` of each other (closest pair of
/// returns), so one object split by range noise is reported once. Beams stay
/// in index order within each merged cluster; output is ordered by first beam.
pub fn merge_nearby(scan: &LidarScan, clusters: Vec<Cluster>, distance: f64) -> Vec<Cluster> {
    let n = clusters.len();
    let pts: Vec<Vec<Vec2>> = clusters
        .iter()
        .map(|c| c.beams.iter().filter_map(|&k| scan.point(k)).collect())
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let d2 = distance * distance;
    for a in 0..n {
        for b in a + 1..n {
            let close = pts[a].iter().any(|p| pts[b].iter().any(|q| (*p - *q).norm_sq() <= d2));
            if close {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => g.1.extend_from_slice(&clusters[i].beams),
            None => groups.push((r, clusters[i].beams.clone())),
        }
    }
    groups.iter_mut().for_each(|g| g.1.sort_unstable());
    groups.sort_by_key(|g| g.1[0]);
    groups
        .into_iter()
        .map(|(_, beams)| {
            let p: Vec<Vec2> = beams.iter().filter_map(|&k| scan.point(k)).collect();
            let sum = p.iter().fold(Vec2::ZERO, |acc, q| acc + *q);
            Cluster {
                centroid: sum * (1.0 / p.len() as f64),
                beams,
            }
        })
        .collect()
}

/// Drops clusters whose centroid lies within `margin` of an occupied cell of
/// the static background map. Clusters must be in the map's frame.
pub fn filter_static(clusters: Vec<Cluster>, background: &OccupancyGrid, margin: f64) -> Vec<Cluster> {
    clusters
        .into_iter()
        .filter(|c| !near_occupied(background, c.centroid, margin))
        .collect()
}

fn near_occupied(grid: &OccupancyGrid, p: Vec2, margin: f64) -> bool {
    let geo = &grid.geometry;
    let res = geo.resolution;
    let l = geo.to_local(p);
    let reach = (margin / res).ceil() as i64 + 1;
    let ci = (l.x / res).floor() as i64;
    let cj = (l.y / res).floor() as i64;
    for j in (cj - reach)..=(cj + reach) {
        for i in (ci - reach)..=(ci + reach) {
            if i < 0 || j < 0 || i >= geo.width as i64 || j >= geo.height as i64 {
                continue;
            }
            if grid.get(i as usize, j as usize) != CellState::Occupied {
                continue;
            }
            let (x0, y0) = (i as f64 * res, j as f64 * res);
            let dx = (x0 - l.x).max(0.0).max(l.x - (x0 + res));
            let dy = (y0 - l.y).max(0.0).max(l.y - (y0 + res));
            if dx.hypot(dy) <= margin {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub age: f64,
    pub misses: u32,
}

impl Track {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerParams {
    /// Association gate, meters.
    pub gate: f64,
    pub max_misses: u32,
    /// Weight of the newest velocity sample in the exponential filter.
    pub smoothing: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            gate: 0.5,
            max_misses: 3,
            smoothing: 0.5,
        }
    }
}

/// Multi-target tracker with greedy nearest-neighbour association.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tracker {
    pub params: TrackerParams,
    pub tracks: Vec<Track>,
    next_id: u32,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Self {
        Self {
            params,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    /// Associates cluster centroids (map frame) with live tracks.
    pub fn update(&mut self, centroids: &[Vec2], dt: f64) {
        self.tracks = update_tracks(
            std::mem::take(&mut self.tracks),
            centroids,
            dt,
            &self.params,
            &mut self.next_id,
        );
    }
}

/// One tracking cycle: greedy nearest-centroid association within `gate`
/// against constant-velocity predictions, exponential velocity smoothing,
/// spawning for unmatched clusters and retirement after `max_misses`
/// consecutive misses. Afterwards no two live tracks lie within `gate / 2`.
pub fn update_tracks(
    tracks: Vec<Track>,
    centroids: &[Vec2],
    dt: f64,
    params: &TrackerParams,
    next_id: &mut u32,
) -> Vec<Track> {
    assert!(dt > 0.0, "tracker dt must be positive");
    let predicted: Vec<Vec2> = tracks.iter().map(|t| t.position + t.velocity * dt).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, p) in predicted.iter().enumerate() {
        for (ci, c) in centroids.iter().enumerate() {
            let d = p.distance(*c);
            if d <= params.gate {
                pairs.push((d, ti, ci));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_match = vec![None; tracks.len()];
    let mut cluster_taken = vec![false; centroids.len()];
    for (_, ti, ci) in pairs {
        if track_match[ti].is_none() && !cluster_taken[ci] {
            track_match[ti] = Some(ci);
            cluster_taken[ci] = true;
        }
    }

    let lambda = params.smoothing;
    let mut out: Vec<Track> = Vec::with_capacity(tracks.len() + centroids.len());
    for (ti, mut t) in tracks.into_iter().enumerate() {
        t.age += dt;
        match track_match[ti] {
            Some(ci) => {
                let raw = (centroids[ci] - t.position) * (1.0 / dt);
                t.velocity = raw * lambda + t.velocity * (1.0 - lambda);
                t.position = centroids[ci];
                t.misses = 0;
            }
            None => {
                t.position = predicted[ti];
                t.misses += 1;
            }
        }
        if t.misses <= params.max_misses {
            out.push(t);
        }
    }
    for (ci, c) in centroids.iter().enumerate() {
        if cluster_taken[ci] {
            continue;
        }
        out.push(Track {
            id: *next_id,
            position: *c,
            velocity: Vec2::ZERO,
            age: 0.0,
            misses: 0,
        });
        *next_id += 1;
    }

    // Merge discipline: keep the best-established track of any close pair.
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| {
        out[a]
            .misses
            .cmp(&out[b].misses)
            .then(out[b].age.total_cmp(&out[a].age))
            .then(out[a].id.cmp(&out[b].id))
    });
    let mut kept: Vec<Track> = Vec::with_capacity(out.len());
    for k in order {
        let t = out[k];
        if kept
            .iter()
            .all(|o| o.position.distance(t.position) >= params.gate / 2.0)
        {
            kept.push(t);
        }
    }
    kept.sort_by_key(|t| t.id);
    kept
}

/// One line of a scan log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub timestamp: f64,
    /// Pose reported by (noisy) odometry.
    pub odometry: Pose2D,
    /// Simulator ground truth, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Pose2D>,
    pub ranges: Vec<Option<f64>>,
}

/// Line-delimited scan log: a header line `{"lidar": LidarParams}` followed by
/// one [`ScanRecord`] per line. Beam angles follow from the header.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanLog {
    pub lidar: LidarParams,
    pub records: Vec<ScanRecord>,
}

#[derive(Serialize, Deserialize)]
struct ScanLogHeader {
    lidar: LidarParams,
}

impl ScanLog {
    pub fn scan(&self, k: usize) -> LidarScan {
        let r = &self.records[k];
        LidarScan {
            timestamp: r.timestamp,
            angles: self.lidar.angles(),
            ranges: r.ranges.clone(),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<scan log>", e);
        serde_json::to_writer(&mut w, &ScanLogHeader { lidar: self.lidar })?;
        w.write_all(b"\n").map_err(io)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty scan log".into()))?
            .map_err(|e| Error::io("<scan log>", e))?;
        let header: ScanLogHeader = serde_json::from_str(&header)?;
        header.lidar.validate()?;
        let mut records = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io("<scan log>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScanRecord = serde_json::from_str(&line)?;
            if rec.ranges.len() != header.lidar.beams {
                return Err(Error::Format(format!(
                    "record has {} ranges, header says {} beams",
                    rec.ranges.len(),
                    header.lidar.beams
                )));
            }
            records.push(rec);
        }
        Ok(Self {
            lidar: header.lidar,
            records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_joins_split_object() {
        let angles: Vec<f64> = (0..8).map(|k| k as f64 * 0.01).collect();
        // a wall at 1 m split in the middle by a no-hit beam, and a far return
        let ranges = vec![
            Some(1.0),
            Some(1.0),
            Some(1.0),
            None,
            Some(1.0),
            Some(1.0),
            None,
            Some(3.0),
        ];
        let scan = LidarScan {
            timestamp: 0.0,
            angles,
            ranges,
        };
        let cl = depth_cluster(&scan, 0.17, 1);
        assert_eq!(cl.len(), 3);
        let merged = merge_nearby(&scan, cl, 0.05);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].beams, vec![0, 1, 2, 4, 5]);
        assert_eq!(merged[1].beams, vec![7]);
    }
    use crate::grid::GridGeometry;
    use crate::rng::stream;

    fn free_grid(w: usize, h: usize) -> OccupancyGrid {
        OccupancyGrid::filled(
            GridGeometry::new(w, h, 0.05, Pose2D::default()).unwrap(),
            CellState::Free,
        )
    }

    fn quiet() -> LidarParams {
        LidarParams {
            range_noise_sigma: 0.0,
            ..LidarParams::default()
        }
    }

    fn scan_of(ranges: Vec<Option<f64>>) -> LidarScan {
        let n = ranges.len();
        let angles = (0..n)
            .map(|k| -std::f64::consts::PI + k as f64 * TAU / n as f64)
            .collect();
        LidarScan {
            timestamp: 0.0,
            angles,
            ranges,
        }
    }

    #[test]
    fn empty_world_all_no_hit() {
        let g = free_grid(100, 100);
        let s = simulate_scan(&g, &[], &Pose2D::new(2.5, 2.5, 0.0), &quiet(), 0.0, &mut stream(1, 1));
        assert!(s.ranges.iter().all(Option::is_none));
        assert!(s.angles.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn wall_ahead_two_meters() {
        let mut g = free_grid(120, 100);
        for j in 0..100 {
            g.set(60, j, CellState::Occupied);
        }
        let s = simulate_scan(&g, &[], &Pose2D::new(1.0, 2.52, 0.0), &quiet(), 0.0, &mut stream(1, 1));
        let k = s.angles.iter().position(|a| a.abs() < 1e-12).unwrap();
        assert!((s.ranges[k].unwrap() - 2.0).abs() <= 0.05);
    }

    #[test]
    fn obstacle_inside_min_range_is_no_hit() {
        let g = free_grid(100, 100);
        let o = OrientedRect::new(Pose2D::new(2.55 + 0.05 + 0.1, 2.5, 0.0), 0.2, 1.0).unwrap();
        let s = simulate_scan(&g, &[o], &Pose2D::new(2.55, 2.5, 0.0), &quiet(), 0.0, &mut stream(1, 1));
        let k = s.angles.iter().position(|a| a.abs() < 1e-12).unwrap();
        assert_eq!(s.ranges[k], None);
    }

    #[test]
    fn odometry_noise() {
        let d = Pose2D::new(0.1, -0.02, 0.05);
        assert_eq!(noisy_odometry(&d, &OdometrySigmas::default(), &mut stream(3, 5)), d);
        let a = noisy_odometry(&d, &OdometrySigmas::uniform(0.01), &mut stream(3, 5));
        let b = noisy_odometry(&d, &OdometrySigmas::uniform(0.01), &mut stream(3, 5));
        assert_eq!(a, b);
        let mut rng = stream(11, 5);
        let n = 100_000;
        let zero = Pose2D::new(0.0, 0.0, 0.0);
        let xs: Vec<f64> = (0..n)
            .map(|_| noisy_odometry(&zero, &OdometrySigmas::uniform(0.01), &mut rng).x)
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 0.01).abs() < 0.03 * 0.01);
    }

    #[test]
    fn beta_formula_example() {
        let b = depth_beta(2.00, 2.05, 1f64.to_radians());
        let expected = (2.0 * 1f64.to_radians().sin()).atan2(2.05 - 2.0 * 1f64.to_radians().cos());
        assert_eq!(b, expected);
        assert!((b.to_degrees() - 34.75).abs() < 0.05);
        assert!(b > 10f64.to_radians());
    }

    #[test]
    fn contiguous_arc_is_one_cluster() {
        let mut r = vec![None; 360];
        for k in 100..140 {
            r[k] = Some(3.0);
        }
        let c = depth_cluster(&scan_of(r), 10f64.to_radians(), 3);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].count(), 40);
    }

    #[test]
    fn gaps_split_clusters_and_wraparound_joins() {
        let mut r = vec![None; 360];
        for k in 10..20 {
            r[k] = Some(2.0);
        }
        for k in 30..45 {
            r[k] = Some(2.5);
        }
        for k in (355..360).chain(0..4) {
            r[k] = Some(4.0);
        }
        let c = depth_cluster(&scan_of(r), 10f64.to_radians(), 3);
        assert_eq!(c.len(), 3);
        let wrapped = c.iter().find(|c| c.beams.contains(&0)).unwrap();
        assert_eq!(wrapped.count(), 9);
        assert_eq!((wrapped.first_beam(), wrapped.last_beam()), (355, 3));
    }

    #[test]
    fn depth_jump_splits_and_small_clusters_drop() {
        let mut r = vec![None; 360];
        for k in 50..60 {
            r[k] = Some(1.0);
        }
        for k in 60..70 {
            r[k] = Some(3.0);
        }
        r[200] = Some(2.0);
        let c = depth_cluster(&scan_of(r), 10f64.to_radians(), 3);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn tracker_spawns_then_converges_velocity() {
        let p = TrackerParams::default();
        let mut tr = Tracker::new(p);
        tr.update(&[Vec2::new(1.0, 1.0)], 0.1);
        assert_eq!(tr.tracks.len(), 1);
        assert_eq!(tr.tracks[0].velocity, Vec2::ZERO);
        for k in 1..=10 {
            tr.update(&[Vec2::new(1.0 + 0.1 * k as f64, 1.0)], 0.1);
        }
        assert_eq!(tr.tracks.len(), 1);
        assert!((tr.tracks[0].speed() - 1.0).abs() < 0.1);
    }

    #[test]
    fn tracker_retires_after_misses() {
        let p = TrackerParams::default();
        let mut tr = Tracker::new(p);
        tr.update(&[Vec2::new(1.0, 1.0)], 0.1);
        for _ in 0..p.max_misses {
            tr.update(&[], 0.1);
            assert_eq!(tr.tracks.len(), 1);
        }
        tr.update(&[], 0.1);
        assert!(tr.tracks.is_empty());
    }

    #[test]
    fn static_filter_margin_boundary() {
        let mut g = free_grid(40, 40);
        for j in 0..40 {
            g.set(20, j, CellState::Occupied); // wall x in [1.00, 1.05)
        }
        let on_wall = Cluster {
            beams: vec![0, 1, 2],
            centroid: Vec2::new(1.02, 1.0),
        };
        let mid = Cluster {
            beams: vec![5, 6, 7],
            centroid: Vec2::new(0.3, 1.0),
        };
        // car body hugging the wall: centroid 6 cm from the wall face
        let car = Cluster {
            beams: vec![9, 10, 11],
            centroid: Vec2::new(0.94, 1.0),
        };
        let kept = filter_static(vec![on_wall, mid.clone(), car.clone()], &g, 0.0);
        assert_eq!(kept, vec![mid.clone(), car]);
        let kept = filter_static(kept, &g, 0.1);
        assert_eq!(kept, vec![mid]);
    }

    #[test]
    fn scan_log_round_trip() {
        let log = ScanLog {
            lidar: LidarParams {
                beams: 4,
                ..LidarParams::default()
            },
            records: vec![ScanRecord {
                timestamp: 0.5,
                odometry: Pose2D::new(1.0, 2.0, 0.3),
                truth: None,
                ranges: vec![Some(1.25), None, Some(0.5), None],
            }],
        };
        let mut buf = Vec::new();
        log.write(&mut buf).unwrap();
        assert_eq!(ScanLog::read(buf.as_slice()).unwrap(), log);
    }
}
