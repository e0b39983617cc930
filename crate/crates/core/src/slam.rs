//! Occupancy-grid SLAM with a Rao-Blackwellized particle filter.
//!
//! Each particle carries a pose hypothesis, its trajectory and its own
//! log-odds map. Particles are propagated with noisy odometry, weighted with a
//! likelihood-field beam model against their own maps, resampled
//! systematically when the effective sample size collapses, and then
//! integrate the scan.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Vec2};
use crate::grid::{GridGeometry, LogOddsGrid, OccupancyGrid};
use crate::sensing::{noisy_odometry, LidarParams, LidarScan, OdometrySigmas, ScanLog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlamConfig {
    pub particle_count: usize,
    /// Per-update motion noise added to each particle's odometry delta.
    pub motion_sigmas: OdometrySigmas,
    pub hit_increment: f64,
    /// Magnitude subtracted from traversed cells.
    pub miss_decrement: f64,
    pub log_odds_clamp: f64,
    pub occupied_threshold: f64,
    pub free_threshold: f64,
    pub likelihood_sigma: f64,
    /// Mixture weights of the beam model: `z_hit·N(d; σ) + z_rand`.
    pub z_hit: f64,
    pub z_rand: f64,
    /// Endpoint search radius for the nearest occupied cell, meters.
    pub likelihood_window: f64,
    /// Use every `beam_stride`-th beam for weighting.
    pub beam_stride: usize,
    /// Resample when `ESS < resample_threshold · N`.
    pub resample_threshold: f64,
    pub resolution: f64,
    /// No-hit beams clear free space up to this fraction of max range.
    pub no_hit_truncation: f64,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self {
            particle_count: 30,
            motion_sigmas: OdometrySigmas {
                x: 0.01,
                y: 0.01,
                theta: 0.01,
            },
            hit_increment: 0.85,
            miss_decrement: 0.4,
            log_odds_clamp: 10.0,
            occupied_threshold: 2.0,
            free_threshold: -2.0,
            likelihood_sigma: 0.1,
            z_hit: 0.9,
            z_rand: 0.1,
            likelihood_window: 0.3,
            beam_stride: 2,
            resample_threshold: 0.5,
            resolution: 0.05,
            no_hit_truncation: 0.95,
        }
    }
}

impl SlamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.particle_count < 1 {
            return bad("particle_count must be >= 1");
        }
        if !(self.resample_threshold > 0.0 && self.resample_threshold <= 1.0) {
            return bad("resample_threshold must lie in (0, 1]");
        }
        let s = &self.motion_sigmas;
        if !(s.x >= 0.0 && s.y >= 0.0 && s.theta >= 0.0) {
            return bad("motion sigmas must be >= 0");
        }
        if !(self.hit_increment > 0.0 && self.miss_decrement > 0.0 && self.log_odds_clamp > 0.0) {
            return bad("log-odds increments and clamp must be positive");
        }
        if !(self.free_threshold < self.occupied_threshold) {
            return bad("free_threshold must be below occupied_threshold");
        }
        if !(self.likelihood_sigma > 0.0 && self.likelihood_window > 0.0) {
            return bad("likelihood sigma and window must be positive");
        }
        if !(self.z_hit >= 0.0 && self.z_rand > 0.0) {
            return bad("z_rand must be positive and z_hit non-negative");
        }
        if self.beam_stride < 1 || !(self.resolution > 0.0) {
            return bad("beam_stride >= 1 and resolution > 0 required");
        }
        if !(self.no_hit_truncation > 0.0 && self.no_hit_truncation <= 1.0) {
            return bad("no_hit_truncation must lie in (0, 1]");
        }
        Ok(())
    }

    /// Log-likelihood of one endpoint with no occupied cell within the window.
    pub fn floor_log_likelihood(&self) -> f64 {
        let w = self.likelihood_window;
        let s = self.likelihood_sigma;
        (self.z_hit * (-(w * w) / (2.0 * s * s)).exp() + self.z_rand).ln()
    }
}

/// Applies one scan taken at `pose` to a log-odds map. The hit cell is the
/// one half a cell beyond the measured range; cells the beam crosses before
/// the range get the miss update. No-hit beams only clear.
pub fn integrate_scan(map: &mut LogOddsGrid, pose: &Pose2D, scan: &LidarScan, lidar: &LidarParams, cfg: &SlamConfig) {
    let geo = map.geometry;
    let origin = pose.position();
    let half = geo.resolution / 2.0;
    for (angle, range) in scan.angles.iter().zip(&scan.ranges) {
        let a = pose.theta + angle;
        match *range {
            Some(z) => {
                let end = origin + Vec2::from_angle(a) * (z + half);
                let hit = geo.world_to_cell(end).map(|(i, j)| geo.index(i, j));
                geo.traverse(origin, a, z, |idx, t_enter, _| {
                    if t_enter < z && Some(idx) != hit {
                        map.add(idx, -cfg.miss_decrement);
                    }
                    true
                });
                if let Some(idx) = hit {
                    map.add(idx, cfg.hit_increment);
                }
            }
            None => {
                let reach = lidar.max_range * cfg.no_hit_truncation;
                geo.traverse(origin, a, reach, |idx, t_enter, _| {
                    if t_enter < reach {
                        map.add(idx, -cfg.miss_decrement);
                    }
                    true
                });
            }
        }
    }
}

fn nearest_occupied(map: &LogOddsGrid, p: Vec2, window: f64) -> Option<f64> {
    let geo = &map.geometry;
    let res = geo.resolution;
    let l = geo.to_local(p);
    let ci = (l.x / res).floor() as i64;
    let cj = (l.y / res).floor() as i64;
    let reach = (window / res).ceil() as i64;
    let w2 = window * window;
    let mut best = f64::INFINITY;
    for j in (cj - reach).max(0)..=(cj + reach).min(geo.height as i64 - 1) {
        let dy = (j as f64 + 0.5) * res - l.y;
        if dy * dy > w2 {
            continue;
        }
        let row = j as usize * geo.width;
        for i in (ci - reach).max(0)..=(ci + reach).min(geo.width as i64 - 1) {
            if map.value(row + i as usize) <= 0.0 {
                continue;
            }
            let dx = (i as f64 + 0.5) * res - l.x;
            let d2 = dx * dx + dy * dy;
            if d2 < best {
                best = d2;
            }
        }
    }
    (best <= w2).then(|| best.sqrt())
}

/// Likelihood-field log-likelihood of a scan at `pose`: per used endpoint,
/// `ln(z_hit·exp(−d²/2σ²) + z_rand)` with `d` the distance to the nearest
/// cell with positive log-odds, truncated at the search window. A map with
/// no positive cell yields the uniform floor for every beam. Poses outside
/// the map give `−∞`.
pub fn scan_likelihood(map: &LogOddsGrid, pose: &Pose2D, scan: &LidarScan, cfg: &SlamConfig) -> f64 {
    if !map.geometry.contains(pose.position()) {
        return f64::NEG_INFINITY;
    }
    let floor = cfg.floor_log_likelihood();
    let used = scan
        .ranges
        .iter()
        .enumerate()
        .filter(|(k, r)| k % cfg.beam_stride == 0 && r.is_some());
    if !map.values().iter().any(|&v| v > 0.0) {
        return used.count() as f64 * floor;
    }
    let s2 = 2.0 * cfg.likelihood_sigma * cfg.likelihood_sigma;
    let origin = pose.position();
    let mut total = 0.0;
    for (k, r) in used {
        let z = r.expect("filtered");
        let end = origin + Vec2::from_angle(pose.theta + scan.angles[k]) * z;
        total += match nearest_occupied(map, end, cfg.likelihood_window) {
            Some(d) => (cfg.z_hit * (-(d * d) / s2).exp() + cfg.z_rand).ln(),
            None => floor,
        };
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub pose: Pose2D,
    pub weight: f64,
    pub map: LogOddsGrid,
    pub trajectory: Vec<Pose2D>,
}

/// What happened during one filter step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReport {
    pub effective_sample_size: f64,
    pub resampled: bool,
    /// Every particle had zero likelihood; weights were reset to uniform.
    pub weights_reset: bool,
}

pub fn init_particles(geometry: GridGeometry, start: Pose2D, cfg: &SlamConfig) -> Vec<Particle> {
    let n = cfg.particle_count.max(1);
    let p = Particle {
        pose: start,
        weight: 1.0 / n as f64,
        map: LogOddsGrid::new(geometry, cfg.log_odds_clamp),
        trajectory: vec![start],
    };
    vec![p; n]
}

/// Effective sample size `1 / Σ w²` of normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling: indices of the selected particles for the comb
/// starting at `u ∈ [0, 1/N)`.
pub fn systematic_indices(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for k in 0..n {
        let target = u + k as f64 * step;
        while target > cum && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

/// One filter update with odometry `odom_delta` (in the robot frame of the
/// previous pose) and the scan taken at the new pose.
pub fn rbpf_step<R: Rng + ?Sized>(
    particles: &mut Vec<Particle>,
    odom_delta: &Pose2D,
    scan: &LidarScan,
    lidar: &LidarParams,
    cfg: &SlamConfig,
    rng: &mut R,
) -> StepReport {
    assert!(!particles.is_empty(), "rbpf_step needs at least one particle");
    for p in particles.iter_mut() {
        let d = noisy_odometry(odom_delta, &cfg.motion_sigmas, rng);
        p.pose = p.pose.compose(&d);
    }
    let logs: Vec<f64> = particles
        .par_iter()
        .map(|p| p.weight.ln() + scan_likelihood(&p.map, &p.pose, scan, cfg))
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = particles.len();
    let mut report = StepReport::default();
    if max.is_finite() {
        let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for (p, l) in particles.iter_mut().zip(&logs) {
            p.weight = (l - lse).exp();
        }
        let sum: f64 = particles.iter().map(|p| p.weight).sum();
        for p in particles.iter_mut() {
            p.weight /= sum;
        }
    } else {
        report.weights_reset = true;
        for p in particles.iter_mut() {
            p.weight = 1.0 / n as f64;
        }
    }
    let weights: Vec<f64> = particles.iter().map(|p| p.weight).collect();
    report.effective_sample_size = effective_sample_size(&weights);
    if n > 1 && report.effective_sample_size < cfg.resample_threshold * n as f64 {
        let u = rng.random::<f64>() / n as f64;
        let picks = systematic_indices(&weights, u);
        let old = std::mem::take(particles);
        *particles = picks
            .into_iter()
            .map(|i| Particle {
                weight: 1.0 / n as f64,
                ..old[i].clone()
            })
            .collect();
        report.resampled = true;
    }
    particles.par_iter_mut().for_each(|p| {
        integrate_scan(&mut p.map, &p.pose, scan, lidar, cfg);
        p.trajectory.push(p.pose);
    });
    report
}

/// Index of the highest-weight particle; ties go to the lowest index.
pub fn best_index(particles: &[Particle]) -> usize {
    let mut best = 0;
    for (k, p) in particles.iter().enumerate().skip(1) {
        if p.weight > particles[best].weight {
            best = k;
        }
    }
    best
}

/// Thresholded map of the highest-weight particle.
pub fn best_map(particles: &[Particle], cfg: &SlamConfig) -> OccupancyGrid {
    particles[best_index(particles)]
        .map
        .threshold(cfg.occupied_threshold, cfg.free_threshold)
}

/// Relative odometry between consecutive records of a scan log.
pub fn odometry_deltas(log: &ScanLog) -> Vec<Pose2D> {
    log.records
        .windows(2)
        .map(|w| w[1].odometry.relative_to(&w[0].odometry))
        .collect()
}

/// Integrates every scan of a log at the given poses (one per record).
pub fn map_with_poses(geometry: GridGeometry, log: &ScanLog, poses: &[Pose2D], cfg: &SlamConfig) -> LogOddsGrid {
    let mut map = LogOddsGrid::new(geometry, cfg.log_odds_clamp);
    for (k, pose) in poses.iter().enumerate() {
        integrate_scan(&mut map, pose, &log.scan(k), &log.lidar, cfg);
    }
    map
}

/// Poses obtained by chaining the log's odometry deltas from its first pose.
pub fn dead_reckoning_poses(log: &ScanLog) -> Vec<Pose2D> {
    let Some(first) = log.records.first() else {
        return Vec::new();
    };
    let mut poses = vec![first.odometry];
    for d in odometry_deltas(log) {
        let next = poses.last().expect("non-empty").compose(&d);
        poses.push(next);
    }
    poses
}

#[derive(Debug, Clone)]
pub struct SlamOutcome {
    pub particles: Vec<Particle>,
    pub steps: Vec<StepReport>,
}

impl SlamOutcome {
    pub fn best_map(&self, cfg: &SlamConfig) -> OccupancyGrid {
        best_map(&self.particles, cfg)
    }

    pub fn resample_count(&self) -> usize {
        self.steps.iter().filter(|s| s.resampled).count()
    }
}

/// Runs the filter over a whole log. The map frame is anchored at the first
/// record's pose, which is taken as known.
pub fn run_slam<R: Rng + ?Sized>(
    geometry: GridGeometry,
    log: &ScanLog,
    cfg: &SlamConfig,
    rng: &mut R,
) -> Result<SlamOutcome> {
    cfg.validate()?;
    let first = log
        .records
        .first()
        .ok_or_else(|| Error::Format("scan log has no records".into()))?;
    let mut particles = init_particles(geometry, first.odometry, cfg);
    let first_scan = log.scan(0);
    for p in particles.iter_mut() {
        integrate_scan(&mut p.map, &p.pose, &first_scan, &log.lidar, cfg);
    }
    let mut steps = Vec::with_capacity(log.records.len());
    for (k, d) in odometry_deltas(log).iter().enumerate() {
        steps.push(rbpf_step(&mut particles, d, &log.scan(k + 1), &log.lidar, cfg, rng));
    }
    Ok(SlamOutcome { particles, steps })
}
