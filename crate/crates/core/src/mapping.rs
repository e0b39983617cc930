//! The mapping drive: a car laps the ring road slowly while logging LiDAR
//! scans and noisy odometry, and the log is turned into maps.

use serde::{Deserialize, Serialize};

use crate::city::CityLayout;
use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Vec2};
use crate::grid::{GridGeometry, OccupancyGrid};
use crate::metrics::{evaluate_maps, MetricReport};
use crate::rng::{stream, streams};
use crate::sensing::{noisy_odometry, FixedLidar, LidarParams, OdometrySigmas, ScanLog, ScanRecord};
use crate::slam::{dead_reckoning_poses, map_with_poses, run_slam, SlamConfig};
use crate::vehicle::{pure_pursuit_tracked, step, ControlCommand, Path, VehicleParams, VehicleState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingConfig {
    pub resolution: f64,
    pub loops: usize,
    pub speed: f64,
    pub dt: f64,
    /// Name of the closed road to lap.
    pub road: String,
    /// Lane center offset to the right of the road centerline.
    pub lane_offset: f64,
    pub corner_radius: f64,
    pub lookahead: f64,
    /// A scan is logged after this much travel or rotation.
    pub update_distance: f64,
    pub update_angle: f64,
    /// Standard deviation added to each of (dx, dy, dθ) per logged update.
    pub odometry_sigma: f64,
    pub lidar: LidarParams,
    pub vehicle: VehicleParams,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            loops: 3,
            speed: 0.25,
            dt: 0.05,
            road: "ring".into(),
            lane_offset: 0.225,
            corner_radius: 1.6,
            lookahead: 0.4,
            update_distance: 0.15,
            update_angle: 0.15,
            odometry_sigma: 0.005,
            lidar: LidarParams::default(),
            vehicle: VehicleParams::default(),
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        self.lidar.validate()?;
        self.vehicle.validate()?;
        let ok = self.resolution > 0.0
            && self.loops >= 1
            && self.speed > 0.0
            && self.dt > 0.0
            && self.corner_radius >= self.vehicle.min_turning_radius() - 1e-9
            && self.lookahead > 0.0
            && self.update_distance > 0.0
            && self.update_angle > 0.0
            && self.odometry_sigma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "mapping config needs positive rates, loops >= 1 and corners no tighter than the turning radius".into(),
            ))
        }
    }
}

/// One counter-clockwise lap of a rectangle with rounded corners, sampled
/// every `spacing` meters, starting mid-way along the bottom edge.
fn rounded_rect_loop(lo: Vec2, hi: Vec2, r: f64, spacing: f64) -> Vec<Vec2> {
    let start = Vec2::new((lo.x + hi.x) / 2.0, lo.y);
    let corners = [
        (Vec2::new(hi.x - r, lo.y + r), -std::f64::consts::FRAC_PI_2),
        (Vec2::new(hi.x - r, hi.y - r), 0.0),
        (Vec2::new(lo.x + r, hi.y - r), std::f64::consts::FRAC_PI_2),
        (Vec2::new(lo.x + r, lo.y + r), std::f64::consts::PI),
    ];
    let mut pts = vec![start];
    let line = |pts: &mut Vec<Vec2>, to: Vec2| {
        let from = *pts.last().expect("non-empty");
        let n = ((to - from).norm() / spacing).ceil().max(1.0) as usize;
        for k in 1..=n {
            pts.push(from + (to - from) * (k as f64 / n as f64));
        }
    };
    for (c, a0) in corners {
        line(&mut pts, c + Vec2::from_angle(a0) * r);
        let n = ((r * std::f64::consts::FRAC_PI_2) / spacing).ceil() as usize;
        for k in 1..=n {
            let a = a0 + std::f64::consts::FRAC_PI_2 * k as f64 / n as f64;
            pts.push(c + Vec2::from_angle(a) * r);
        }
    }
    line(&mut pts, start);
    pts
}

/// The lane path of the mapping drive, `loops` laps long.
pub fn mapping_path(layout: &CityLayout, cfg: &MappingConfig) -> Result<Path> {
    let road = layout
        .roads
        .iter()
        .find(|r| r.name == cfg.road)
        .ok_or_else(|| Error::Config(format!("layout has no road '{}'", cfg.road)))?;
    let (lo, hi) = road.centerline.iter().fold(
        (
            Vec2::new(f64::INFINITY, f64::INFINITY),
            Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        ),
        |(lo, hi), p| {
            (
                Vec2::new(lo.x.min(p.x), lo.y.min(p.y)),
                Vec2::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        },
    );
    // counter-clockwise laps keep the right-hand lane on the outside
    let o = Vec2::new(cfg.lane_offset, cfg.lane_offset);
    let one = rounded_rect_loop(lo - o, hi + o, cfg.corner_radius, 0.05);
    let mut pts = one.clone();
    for _ in 1..cfg.loops {
        pts.extend_from_slice(&one[1..]);
    }
    Path::new(pts)
}

/// Drives the mapping path over the ground-truth grid and logs scans with
/// accumulated noisy odometry. Record 0 holds the true start pose.
pub fn simulate_drive(gt: &OccupancyGrid, layout: &CityLayout, cfg: &MappingConfig, seed: u64) -> Result<ScanLog> {
    cfg.validate()?;
    let path = mapping_path(layout, cfg)?;
    let mut odo_rng = stream(seed, streams::ODOMETRY);
    let mut lidar_rng = stream(seed, streams::MAPPING_LIDAR);
    let p0 = path.points()[0];
    let t0 = path.tangent_at(0.0);
    let mut state = VehicleState::at_rest(Pose2D::new(p0.x, p0.y, t0.y.atan2(t0.x)));
    state.speed = cfg.speed;
    let sigmas = OdometrySigmas::uniform(cfg.odometry_sigma);

    let scan_at = |pose: Pose2D, t: f64, rng: &mut _| FixedLidar::new(gt, pose, cfg.lidar).scan(&[], t, rng);
    let mut records = vec![ScanRecord {
        timestamp: 0.0,
        odometry: state.pose,
        truth: Some(state.pose),
        ranges: scan_at(state.pose, 0.0, &mut lidar_rng).ranges,
    }];
    let mut last_true = state.pose;
    let mut odom = state.pose;
    let mut progress = 0.0;
    let mut t = 0.0;
    let max_steps = ((path.length() / cfg.speed) * 3.0 / cfg.dt) as usize + 100;
    for _ in 0..max_steps {
        let pp = pure_pursuit_tracked(&state, &cfg.vehicle, &path, cfg.lookahead, progress, 1.0);
        progress = pp.progress;
        if pp.complete {
            break;
        }
        let cmd = ControlCommand {
            target_speed: cfg.speed,
            steer: pp.steer,
        };
        state = step(&state, &cfg.vehicle, &cmd, cfg.dt)?;
        t += cfg.dt;
        let rel = state.pose.relative_to(&last_true);
        if rel.position().norm() >= cfg.update_distance || rel.theta.abs() >= cfg.update_angle {
            let measured = noisy_odometry(&rel, &sigmas, &mut odo_rng);
            odom = odom.compose(&measured);
            last_true = state.pose;
            records.push(ScanRecord {
                timestamp: t,
                odometry: odom,
                truth: Some(state.pose),
                ranges: scan_at(state.pose, t, &mut lidar_rng).ranges,
            });
        }
    }
    Ok(ScanLog {
        lidar: cfg.lidar,
        records,
    })
}

/// Filter settings for a drive with the given odometry noise: the motion
/// model matches the odometry noise model.
pub fn slam_config_for(odometry_sigma: f64) -> SlamConfig {
    SlamConfig {
        motion_sigmas: OdometrySigmas::uniform(odometry_sigma),
        ..SlamConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct MappingResult {
    pub map: OccupancyGrid,
    pub report: MetricReport,
    pub resamples: usize,
}

pub fn ground_truth(layout: &CityLayout, resolution: f64) -> Result<OccupancyGrid> {
    crate::city::build_city(layout, resolution)
}

/// Runs the particle filter over a log and scores its best map against `gt`.
pub fn slam_map(gt: &OccupancyGrid, log: &ScanLog, slam: &SlamConfig, seed: u64) -> Result<MappingResult> {
    let mut rng = stream(seed, streams::SLAM);
    let outcome = run_slam(gt.geometry, log, slam, &mut rng)?;
    let map = outcome.best_map(slam);
    let report = evaluate_maps(gt, &map)?;
    Ok(MappingResult {
        map,
        report,
        resamples: outcome.resample_count(),
    })
}

/// Map built from chained odometry alone.
pub fn dead_reckoning_map(geometry: GridGeometry, log: &ScanLog, slam: &SlamConfig) -> OccupancyGrid {
    let poses = dead_reckoning_poses(log);
    map_with_poses(geometry, log, &poses, slam).threshold(slam.occupied_threshold, slam.free_threshold)
}

/// Full pipeline for one seed: drive, filter, score.
pub fn run_mapping(layout: &CityLayout, cfg: &MappingConfig, slam: &SlamConfig, seed: u64) -> Result<MappingResult> {
    let gt = ground_truth(layout, cfg.resolution)?;
    let log = simulate_drive(&gt, layout, cfg, seed)?;
    slam_map(&gt, &log, slam, seed)
}
