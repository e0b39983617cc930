//! Fixed-step simulation of the smart intersection: the crossing experiment
//! with one communicating and one non-communicating car, batch Monte-Carlo
//! aggregation, and the four-approach stopping-distance experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path as FsPath, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::city::{build_city, Approach, CityLayout};
use crate::error::{Error, Result};
use crate::geometry::{rect_overlap, Polygon, Pose2D, Segment, Vec2};
use crate::grid::OccupancyGrid;
use crate::metrics::{format_mean_std, mean_std};
use crate::rng::{gaussian, stream, streams, SimRng};
use crate::sensing::{
    depth_cluster, filter_static, merge_nearby, FixedLidar, LidarParams, LidarScan, Tracker, TrackerParams,
};
use crate::v2i::{
    comm_vehicle_handle, infra_decide, presence_trigger, Channel, ChannelParams, Decision, InfraParams, InfraState,
    IntersectionModel, NodeId, Payload, V2IMessage, INFRA_ID,
};
use crate::vehicle::{
    pure_pursuit_tracked, signed_stop_distance, step, ControlCommand, Path, VehicleParams, VehicleState,
};

/// Speed below which a vehicle counts as halted.
const REST_SPEED: f64 = 1e-6;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Comm,
    NonComm,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Comm => "COMM",
            Role::NonComm => "NON_COMM",
        }
    }
}

fn default_lookahead() -> f64 {
    0.4
}

/// One car of a scenario. Unless `path` is given, the car drives straight
/// through the intersection in the inbound lane of `entry`, starting with its
/// rear axle `spawn_distance` from the center and ending `exit_distance`
/// beyond it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub id: NodeId,
    pub role: Role,
    #[serde(default)]
    pub params: VehicleParams,
    pub entry: Approach,
    #[serde(default)]
    pub path: Option<Vec<Vec2>>,
    #[serde(default)]
    pub spawn_distance: f64,
    #[serde(default)]
    pub exit_distance: f64,
    pub cruise: f64,
    /// Seconds after the start before the car appears.
    #[serde(default)]
    pub start_delay: f64,
    /// Half-width of a uniform per-trial perturbation of `start_delay`.
    #[serde(default)]
    pub start_jitter: f64,
    #[serde(default = "default_lookahead")]
    pub lookahead: f64,
}

/// How the intersection model is derived from a layout site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntersectionSpec {
    pub site: String,
    /// Half side of the square base polygon; the site's own when absent.
    pub half_size: Option<f64>,
    pub scale: f64,
    pub center_offset: Vec2,
    /// Distance of generated stop lines from the center; the layout's lines
    /// are used when absent.
    pub stop_line_distance: Option<f64>,
    pub approach_zone_depth: f64,
    pub speed_threshold: f64,
}

impl Default for IntersectionSpec {
    fn default() -> Self {
        Self {
            site: "smart".into(),
            half_size: None,
            scale: 1.0,
            center_offset: Vec2::ZERO,
            stop_line_distance: None,
            approach_zone_depth: 1.0,
            speed_threshold: 0.05,
        }
    }
}

impl IntersectionSpec {
    pub fn build(&self, layout: &CityLayout) -> Result<IntersectionModel> {
        let site = layout
            .intersection(&self.site)
            .ok_or_else(|| Error::Config(format!("layout has no intersection '{}'", self.site)))?;
        let half = self.half_size.unwrap_or(site.half_size);
        if !(half > 0.0) {
            return Err(Error::Config("intersection half size must be positive".into()));
        }
        let mut lines = BTreeMap::new();
        for a in Approach::ALL {
            let line = match self.stop_line_distance {
                Some(d) => {
                    let base = site.center + a.outward() * d;
                    Some(Segment::new(base, base + a.right() * site.half_size))
                }
                None => layout.stop_line(&self.site, a),
            };
            if let Some(l) = line {
                lines.insert(a, l);
            }
        }
        let h = Vec2::new(half, half);
        let model = IntersectionModel {
            polygon: Polygon::rectangle(site.center - h, site.center + h)?,
            scale: self.scale,
            center_offset: self.center_offset,
            stop_lines: lines,
            approach_zone_depth: self.approach_zone_depth,
            speed_threshold: self.speed_threshold,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Axis-aligned area with its own localization accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRegion {
    pub name: String,
    pub min: Vec2,
    pub max: Vec2,
    pub sigma: f64,
}

impl LocalizationRegion {
    fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Error of the poses vehicles believe they are at. Each region carries a
/// per-trial offset drawn with its `sigma` (a map that is locally shifted);
/// `jitter_sigma` adds independent noise every tick.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizationNoise {
    pub default_sigma: f64,
    pub jitter_sigma: f64,
    pub regions: Vec<LocalizationRegion>,
}

impl LocalizationNoise {
    /// Same offset sigma everywhere.
    pub fn with_uniform_sigma(&self, sigma: f64) -> Self {
        let mut out = self.clone();
        out.default_sigma = sigma;
        for r in &mut out.regions {
            r.sigma = sigma;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = !(self.default_sigma >= 0.0 && self.jitter_sigma >= 0.0)
            || self
                .regions
                .iter()
                .any(|r| !(r.sigma >= 0.0) || r.min.x > r.max.x || r.min.y > r.max.y);
        if bad {
            return Err(Error::Config(
                "localization sigmas must be >= 0 and regions well formed".into(),
            ));
        }
        Ok(())
    }

    /// Per-trial offsets: one per region, then the default one.
    pub fn sample_offsets(&self, rng: &mut SimRng) -> Vec<Vec2> {
        self.regions
            .iter()
            .map(|r| r.sigma)
            .chain(std::iter::once(self.default_sigma))
            .map(|s| Vec2::new(gaussian(rng, s), gaussian(rng, s)))
            .collect()
    }

    /// Localized state for a true state; the region is chosen by the true
    /// rear-axle position, first match wins.
    pub fn localize(&self, offsets: &[Vec2], truth: &VehicleState, rng: &mut SimRng) -> VehicleState {
        let p = truth.pose.position();
        let k = self
            .regions
            .iter()
            .position(|r| r.contains(p))
            .unwrap_or(self.regions.len());
        let jx = gaussian(rng, self.jitter_sigma);
        let jy = gaussian(rng, self.jitter_sigma);
        let e = offsets[k] + Vec2::new(jx, jy);
        VehicleState {
            pose: Pose2D {
                x: truth.pose.x + e.x,
                y: truth.pose.y + e.y,
                theta: truth.pose.theta,
            },
            ..*truth
        }
    }
}

/// Roadside LiDAR pipeline settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfraConfig {
    pub lidar_pose: Pose2D,
    pub lidar: LidarParams,
    pub cluster_threshold_deg: f64,
    pub min_cluster_size: usize,
    /// Clusters this close to a static occupied cell are discarded.
    pub static_margin: f64,
    /// Returns shorter than the static range by more than this are foreground.
    pub background_tolerance: f64,
    /// Clusters closer than this are one object.
    pub merge_distance: f64,
    pub tracker: TrackerParams,
    pub decision: InfraParams,
}

impl Default for InfraConfig {
    fn default() -> Self {
        Self {
            lidar_pose: Pose2D::new(2.3, 2.4, 0.0),
            lidar: LidarParams::default(),
            cluster_threshold_deg: 10.0,
            min_cluster_size: 2,
            static_margin: 0.1,
            background_tolerance: 0.1,
            merge_distance: 0.05,
            tracker: TrackerParams::default(),
            decision: InfraParams::default(),
        }
    }
}

fn default_dt() -> f64 {
    0.05
}
fn default_duration() -> f64 {
    15.0
}
fn default_resolution() -> f64 {
    0.05
}
fn default_lane_offset() -> f64 {
    0.225
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    /// Layout file; the built-in city when absent. Relative paths resolve
    /// against the config file's directory.
    #[serde(default)]
    pub city: Option<PathBuf>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_lane_offset")]
    pub lane_offset: f64,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub localization: LocalizationNoise,
    #[serde(default)]
    pub intersection: IntersectionSpec,
    #[serde(default)]
    pub infra: InfraConfig,
}

fn load_layout(city: &Option<PathBuf>) -> Result<CityLayout> {
    match city {
        Some(p) => CityLayout::load(p),
        None => Ok(CityLayout::default_layout()),
    }
}

fn resolve_city(city: &mut Option<PathBuf>, config_path: &FsPath) {
    if let Some(p) = city.as_mut() {
        if p.is_relative() {
            if let Some(dir) = config_path.parent() {
                *p = dir.join(&*p);
            }
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("scenario config: {e}")))
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?;
        resolve_city(&mut cfg.city, path);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Scenario(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return err(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return err(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.resolution > 0.0) {
            return err("resolution must be positive".into());
        }
        if self.vehicles.is_empty() {
            return err("scenario has no vehicles".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.vehicles {
            if v.id == INFRA_ID || !seen.insert(v.id) {
                return err(format!("vehicle id {} is reserved or repeated", v.id));
            }
            v.params.validate()?;
            if !(v.cruise > 0.0 && v.cruise <= v.params.max_speed) {
                return err(format!("vehicle {} cruise speed out of range", v.id));
            }
            if !(v.start_delay >= 0.0 && v.start_jitter >= 0.0) {
                return err(format!("vehicle {} start delay and jitter must be >= 0", v.id));
            }
            if !(v.lookahead > 0.0) {
                return err(format!("vehicle {} lookahead must be positive", v.id));
            }
            if v.path.as_ref().is_some_and(|p| p.len() < 2) {
                return err(format!("vehicle {} path needs at least two points", v.id));
            }
        }
        self.channel.validate()?;
        self.localization.validate()?;
        self.infra.lidar.validate()?;
        Ok(())
    }
}

/// Straight lane path through the intersection for a car entering on `entry`.
pub fn lane_path(center: Vec2, entry: Approach, lane_offset: f64, spawn: f64, exit: f64) -> Result<Path> {
    let lane = center + entry.right() * lane_offset;
    Path::new(vec![lane + entry.outward() * spawn, lane - entry.outward() * exit])
}

fn start_pose(path: &Path) -> Pose2D {
    let p = path.points()[0];
    let t = path.tangent_at(0.0);
    Pose2D::new(p.x, p.y, t.y.atan2(t.x))
}

struct PreparedVehicle {
    spec: VehicleSpec,
    path: Path,
    stop_line: Option<Segment>,
}

/// A validated scenario with its map, intersection model and static LiDAR
/// returns precomputed; trials share it read-only.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: IntersectionModel,
    background: OccupancyGrid,
    lidar: FixedLidar,
    vehicles: Vec<PreparedVehicle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: Pose2D,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleOutcome {
    pub id: NodeId,
    pub role: Role,
    /// Spawn to path completion.
    pub traveling_time: Option<f64>,
    /// Signed rear-axle distance to the stop line when first halted for it.
    pub stopping_distance: Option<f64>,
    pub trajectory: Vec<TrajectorySample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub crashed: bool,
    pub crash_time: Option<f64>,
    pub crash_pair: Option<(NodeId, NodeId)>,
    pub vehicles: Vec<VehicleOutcome>,
    /// Changes of the infrastructure's warning state.
    pub warnings: Vec<Decision>,
    /// Warning state held by each communicating car after every tick.
    pub received_warning: BTreeMap<NodeId, Vec<bool>>,
    pub infra_warning: Vec<bool>,
    pub end_time: f64,
}

impl TrialResult {
    pub fn vehicle(&self, id: NodeId) -> Option<&VehicleOutcome> {
        self.vehicles.iter().find(|v| v.id == id)
    }
}

struct Live {
    state: VehicleState,
    progress: f64,
    active: bool,
    done: bool,
    start: f64,
    warned: bool,
    last_warning_t: f64,
    localized: VehicleState,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let layout = load_layout(&config.city)?;
        let model = config.intersection.build(&layout)?;
        let center = model.polygon.centroid();
        let background = build_city(&layout, config.resolution)?;
        let lidar = FixedLidar::new(&background, config.infra.lidar_pose, config.infra.lidar);
        let mut vehicles = Vec::new();
        for spec in &config.vehicles {
            let path = match &spec.path {
                Some(p) => Path::new(p.clone())?,
                None => lane_path(
                    center,
                    spec.entry,
                    config.lane_offset,
                    spec.spawn_distance,
                    spec.exit_distance,
                )?,
            };
            if path.length() <= 0.0 {
                return Err(Error::Scenario(format!("vehicle {} has an empty path", spec.id)));
            }
            let stop_line = model.stop_lines.get(&spec.entry).copied();
            if spec.role == Role::Comm && stop_line.is_none() {
                return Err(Error::Scenario(format!(
                    "communicating vehicle {} has no stop line on the {} approach",
                    spec.id,
                    spec.entry.name()
                )));
            }
            vehicles.push(PreparedVehicle {
                spec: spec.clone(),
                path,
                stop_line,
            });
        }
        Ok(Self {
            config,
            model,
            background,
            lidar,
            vehicles,
        })
    }

    fn ticks(&self) -> usize {
        (self.config.duration / self.config.dt - TIME_EPS).ceil() as usize
    }

    /// Foreground-only copy of a scan: returns that match the static
    /// background are blanked.
    fn foreground(&self, scan: &LidarScan) -> LidarScan {
        let tol = self.config.infra.background_tolerance;
        let ranges = scan
            .ranges
            .iter()
            .zip(self.lidar.static_ranges())
            .map(|(&r, &s)| match (r, s) {
                (Some(r), Some(s)) if r < s - tol => Some(r),
                (Some(r), None) => Some(r),
                _ => None,
            })
            .collect();
        LidarScan {
            timestamp: scan.timestamp,
            angles: scan.angles.clone(),
            ranges,
        }
    }

    fn detect(&self, scan: &LidarScan) -> Vec<Vec2> {
        let infra = &self.config.infra;
        let fg = self.foreground(scan);
        let clusters = depth_cluster(&fg, infra.cluster_threshold_deg.to_radians(), infra.min_cluster_size);
        let clusters = merge_nearby(&fg, clusters, infra.merge_distance)
            .into_iter()
            .map(|c| c.in_frame(&self.lidar.pose))
            .collect();
        filter_static(clusters, &self.background, infra.static_margin)
            .into_iter()
            .map(|c| c.centroid)
            .collect()
    }

    pub fn run_trial(&self, seed: u64) -> Result<TrialResult> {
        let cfg = &self.config;
        let dt = cfg.dt;
        let mut spawn_rng = stream(seed, streams::SPAWN);
        let mut loc_rng = stream(seed, streams::LOCALIZATION);
        let mut lidar_rng = stream(seed, streams::INFRA_LIDAR);
        let mut channel = Channel::new(cfg.channel, stream(seed, streams::CHANNEL));
        let offsets = cfg.localization.sample_offsets(&mut loc_rng);

        let mut live: Vec<Live> = self
            .vehicles
            .iter()
            .map(|v| {
                let u: f64 = rand::Rng::random_range(&mut spawn_rng, -1.0..=1.0);
                let start = (v.spec.start_delay + u * v.spec.start_jitter).max(0.0);
                let mut state = VehicleState::at_rest(start_pose(&v.path));
                state.speed = v.spec.cruise;
                Live {
                    state,
                    progress: 0.0,
                    active: false,
                    done: false,
                    start,
                    warned: false,
                    last_warning_t: f64::NEG_INFINITY,
                    localized: state,
                }
            })
            .collect();
        let mut outcomes: Vec<VehicleOutcome> = self
            .vehicles
            .iter()
            .map(|v| VehicleOutcome {
                id: v.spec.id,
                role: v.spec.role,
                traveling_time: None,
                stopping_distance: None,
                trajectory: Vec::new(),
            })
            .collect();

        let mut tracker = Tracker::new(cfg.infra.tracker);
        let mut infra = InfraState::default();
        let scan_period = 1.0 / cfg.infra.lidar.rate_hz;
        let scan_every = ((scan_period / dt).round() as usize).max(1);
        let mut received: BTreeMap<NodeId, Vec<bool>> = self
            .vehicles
            .iter()
            .filter(|v| v.spec.role == Role::Comm)
            .map(|v| (v.spec.id, Vec::new()))
            .collect();
        let mut infra_warning = Vec::new();
        let mut crash: Option<(f64, NodeId, NodeId)> = None;
        let mut end_time = 0.0;

        for k in 0..self.ticks() {
            let t = k as f64 * dt;
            for (v, l) in self.vehicles.iter().zip(live.iter_mut()) {
                if !l.active && !l.done && l.start <= t + TIME_EPS {
                    l.active = true;
                    outcomes_push(&mut outcomes, v.spec.id, t, &l.state);
                }
            }

            // sense
            if k % scan_every == 0 {
                let obstacles: Vec<_> = self
                    .vehicles
                    .iter()
                    .zip(&live)
                    .filter(|(_, l)| l.active)
                    .map(|(v, l)| l.state.footprint(&v.spec.params))
                    .collect();
                let scan = self.lidar.scan(&obstacles, t, &mut lidar_rng);
                tracker.update(&self.detect(&scan), scan_period);
                infra.tracks = tracker.tracks.clone();
            }

            // self-reports
            for (v, l) in self.vehicles.iter().zip(live.iter_mut()) {
                if v.spec.role != Role::Comm || !l.active {
                    continue;
                }
                l.localized = cfg.localization.localize(&offsets, &l.state, &mut loc_rng);
                let msg = V2IMessage {
                    sender: v.spec.id,
                    timestamp: t,
                    payload: Payload::VehicleState {
                        pose: l.localized.footprint_center(&v.spec.params),
                        speed: l.localized.speed,
                    },
                };
                channel.send(msg, INFRA_ID, t);
            }
            for m in channel.receive(INFRA_ID, t) {
                infra.ingest(&m);
            }

            // decide
            if let Some(w) = infra_decide(&mut infra, &self.model, &cfg.infra.decision, t) {
                for v in self.vehicles.iter().filter(|v| v.spec.role == Role::Comm) {
                    channel.send(w, v.spec.id, t);
                }
            }
            infra_warning.push(infra.warning_active);
            for (v, l) in self.vehicles.iter().zip(live.iter_mut()) {
                if v.spec.role != Role::Comm {
                    continue;
                }
                for m in channel.receive(v.spec.id, t) {
                    if let Payload::Warning { active, .. } = m.payload {
                        if m.timestamp >= l.last_warning_t {
                            l.warned = active;
                            l.last_warning_t = m.timestamp;
                        }
                    }
                }
                received.get_mut(&v.spec.id).expect("comm vehicle").push(l.warned);
            }

            // act and integrate
            for (i, (v, l)) in self.vehicles.iter().zip(live.iter_mut()).enumerate() {
                if !l.active {
                    continue;
                }
                let pp = pure_pursuit_tracked(&l.state, &v.spec.params, &v.path, v.spec.lookahead, l.progress, 1.0);
                l.progress = pp.progress;
                if pp.complete {
                    l.active = false;
                    l.done = true;
                    outcomes[i].traveling_time = Some(t - l.start);
                    continue;
                }
                let (target, braking) = match v.spec.role {
                    Role::Comm => {
                        let intent = comm_vehicle_handle(
                            l.warned,
                            &l.localized,
                            &v.spec.params,
                            v.stop_line.as_ref(),
                            v.spec.cruise,
                            dt,
                        )?;
                        (intent.target_speed, intent.braking_for_line)
                    }
                    Role::NonComm => (v.spec.cruise, false),
                };
                l.state = step(
                    &l.state,
                    &v.spec.params,
                    &ControlCommand {
                        target_speed: target,
                        steer: pp.steer,
                    },
                    dt,
                )?;
                if braking && l.state.speed < REST_SPEED && outcomes[i].stopping_distance.is_none() {
                    let line = v.stop_line.as_ref().expect("comm vehicles have stop lines");
                    outcomes[i].stopping_distance = Some(signed_stop_distance(&l.state, line)?);
                }
                outcomes[i].trajectory.push(TrajectorySample {
                    t: t + dt,
                    pose: l.state.pose,
                    speed: l.state.speed,
                });
            }
            end_time = t + dt;

            // crash check on true footprints
            let active: Vec<usize> = (0..live.len()).filter(|&i| live[i].active).collect();
            'pairs: for (a_i, &a) in active.iter().enumerate() {
                for &b in &active[a_i + 1..] {
                    let fa = live[a].state.footprint(&self.vehicles[a].spec.params);
                    let fb = live[b].state.footprint(&self.vehicles[b].spec.params);
                    if rect_overlap(&fa, &fb) {
                        crash = Some((t + dt, self.vehicles[a].spec.id, self.vehicles[b].spec.id));
                        break 'pairs;
                    }
                }
            }
            if crash.is_some() || live.iter().all(|l| l.done) {
                break;
            }
        }

        Ok(TrialResult {
            seed,
            crashed: crash.is_some(),
            crash_time: crash.map(|c| c.0),
            crash_pair: crash.map(|c| (c.1, c.2)),
            vehicles: outcomes,
            warnings: infra.decisions,
            received_warning: received,
            infra_warning,
            end_time,
        })
    }
}

fn outcomes_push(outcomes: &mut [VehicleOutcome], id: NodeId, t: f64, s: &VehicleState) {
    if let Some(o) = outcomes.iter_mut().find(|o| o.id == id) {
        o.trajectory.push(TrajectorySample {
            t,
            pose: s.pose,
            speed: s.speed,
        });
    }
}

pub fn run_trial(cfg: &ScenarioConfig, seed: u64) -> Result<TrialResult> {
    Scenario::new(cfg.clone())?.run_trial(seed)
}

/// Runs `f` over `items` on a pool of `workers` threads (0 = rayon default),
/// keeping input order.
fn parallel_map<T: Sync, U: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> U + Sync + Send) -> Result<Vec<U>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(samples: &[f64]) -> Option<Self> {
        mean_std(samples).ok().map(|(mean, std)| Self {
            n: samples.len(),
            mean,
            std,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub id: NodeId,
    pub role: Role,
    /// Over trials in which the vehicle completed its path.
    pub traveling_time: Option<MeanStd>,
    pub stopping_distance: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub name: String,
    pub n: usize,
    pub base_seed: u64,
    pub crashes: usize,
    /// Percent of all trials.
    pub crash_rate: f64,
    /// Standard deviation of the rate over consecutive 10-trial sub-batches.
    pub crash_rate_std: f64,
    pub vehicles: Vec<VehicleSummary>,
}

pub const SUB_BATCH: usize = 10;

impl BatchSummary {
    pub fn from_trials(name: &str, base_seed: u64, trials: &[TrialResult]) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Scenario("a batch needs at least one trial".into()));
        }
        let n = trials.len();
        let crashes = trials.iter().filter(|t| t.crashed).count();
        let rates: Vec<f64> = if n >= SUB_BATCH {
            trials
                .chunks_exact(SUB_BATCH)
                .map(|c| 100.0 * c.iter().filter(|t| t.crashed).count() as f64 / c.len() as f64)
                .collect()
        } else {
            vec![100.0 * crashes as f64 / n as f64]
        };
        let (_, crash_rate_std) = mean_std(&rates)?;
        let vehicles = trials[0]
            .vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let times: Vec<f64> = trials.iter().filter_map(|t| t.vehicles[i].traveling_time).collect();
                let stops: Vec<f64> = trials.iter().filter_map(|t| t.vehicles[i].stopping_distance).collect();
                VehicleSummary {
                    id: v.id,
                    role: v.role,
                    traveling_time: MeanStd::of(&times),
                    stopping_distance: MeanStd::of(&stops),
                }
            })
            .collect();
        Ok(Self {
            name: name.to_string(),
            n,
            base_seed,
            crashes,
            crash_rate: 100.0 * crashes as f64 / n as f64,
            crash_rate_std,
            vehicles,
        })
    }

    /// Crash rate in the "30.78±13.05" style.
    pub fn crash_cell(&self) -> String {
        format_mean_std(self.crash_rate, self.crash_rate_std, 2)
    }

    /// Table with the crash and traveling-time columns of the crossing experiment.
    pub fn render(&self, scenario: &ScenarioConfig) -> String {
        let road = |role: Role| {
            scenario
                .vehicles
                .iter()
                .find(|v| v.role == role)
                .map(|v| v.entry.name())
                .unwrap_or("-")
        };
        let comm = self.vehicles.iter().find(|v| v.role == Role::Comm);
        let time = comm
            .and_then(|v| v.traveling_time)
            .map(|m| format_mean_std(m.mean, m.std, 1))
            .unwrap_or_else(|| "-".into());
        let mut s = String::new();
        let _ = writeln!(
            s,
            "comm-car location | no-comm-car location | crashes(%) | traveling time (sec)"
        );
        let _ = writeln!(
            s,
            "{} | {} | {} | {}",
            road(Role::Comm),
            road(Role::NonComm),
            self.crash_cell(),
            time
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub summary: BatchSummary,
    pub trials: Vec<TrialResult>,
}

/// `n` trials with seeds `base_seed..base_seed + n`, in seed order whatever
/// the worker count.
pub fn run_batch(cfg: &ScenarioConfig, n: usize, base_seed: u64, workers: usize) -> Result<BatchReport> {
    if n == 0 {
        return Err(Error::Scenario("a batch needs at least one trial".into()));
    }
    let scenario = Scenario::new(cfg.clone())?;
    let seeds: Vec<u64> = (0..n as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let trials = parallel_map(&seeds, workers, |&s| scenario.run_trial(s))?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let summary = BatchSummary::from_trials(&cfg.name, base_seed, &trials)?;
    Ok(BatchReport { summary, trials })
}

fn default_stop_duration() -> f64 {
    20.0
}
fn default_cruise() -> f64 {
    0.8
}
fn default_spawn() -> f64 {
    2.5
}
fn default_exit() -> f64 {
    2.0
}

/// Stopping-distance experiment: a communicating car drives each approach
/// and halts as soon as its localized footprint touches the (scaled)
/// intersection polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub city: Option<PathBuf>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_stop_duration")]
    pub duration: f64,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_lane_offset")]
    pub lane_offset: f64,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default = "default_cruise")]
    pub cruise: f64,
    /// Rear-axle distance before the stop line at spawn.
    #[serde(default = "default_spawn")]
    pub spawn_distance: f64,
    /// Path end beyond the intersection center.
    #[serde(default = "default_exit")]
    pub exit_distance: f64,
    #[serde(default = "default_lookahead")]
    pub lookahead: f64,
    #[serde(default)]
    pub intersection: IntersectionSpec,
    #[serde(default)]
    pub localization: LocalizationNoise,
}

impl StoppingConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("stopping config: {e}")))
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?;
        resolve_city(&mut cfg.city, path);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.localization.validate()?;
        let ok = self.dt > 0.0
            && self.duration > 0.0
            && self.cruise > 0.0
            && self.cruise <= self.vehicle.max_speed
            && self.spawn_distance > 0.0
            && self.exit_distance > 0.0
            && self.lookahead > 0.0;
        if !ok {
            return Err(Error::Scenario(
                "stopping config needs positive dt, duration, cruise, spawn and exit distances".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingCell {
    pub approach: Approach,
    pub scale: f64,
    /// Signed rear-axle distances (m) of the trials that stopped, by seed.
    pub distances: Vec<f64>,
    pub overruns: usize,
    pub summary: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingTable {
    pub name: String,
    pub base_seed: u64,
    pub trials_per_cell: usize,
    pub cells: Vec<StoppingCell>,
}

impl StoppingTable {
    pub fn cell(&self, approach: Approach, scale: f64) -> Option<&StoppingCell> {
        self.cells
            .iter()
            .find(|c| c.approach == approach && (c.scale - scale).abs() < 1e-12)
    }

    /// Rows per scale, columns per approach, values in centimeters.
    pub fn render(&self) -> String {
        let mut scales: Vec<f64> = Vec::new();
        let mut approaches: Vec<Approach> = Vec::new();
        for c in &self.cells {
            if !scales.iter().any(|s| (s - c.scale).abs() < 1e-12) {
                scales.push(c.scale);
            }
            if !approaches.contains(&c.approach) {
                approaches.push(c.approach);
            }
        }
        let mut s = String::from("Scale");
        for a in &approaches {
            let name = a.name();
            let _ = write!(s, " | {}{}-bound", name[..1].to_uppercase(), &name[1..]);
        }
        s.push('\n');
        for sc in &scales {
            let _ = write!(s, "{sc:.2}");
            for a in &approaches {
                let cell = self.cell(*a, *sc).and_then(|c| c.summary);
                match cell {
                    Some(m) => {
                        let _ = write!(s, " | {}", format_mean_std(100.0 * m.mean, 100.0 * m.std, 1));
                    }
                    None => s.push_str(" | -"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Outcome of one stopping run: the signed stop distance, or `None` for an
/// overrun (never halted for the trigger).
pub fn stopping_trial(
    cfg: &StoppingConfig,
    model: &IntersectionModel,
    approach: Approach,
    seed: u64,
) -> Result<Option<f64>> {
    let line = model.stop_line(approach)?;
    let center = model.polygon.centroid();
    let along = (line.midpoint() - center).dot(approach.outward());
    let path = lane_path(
        center,
        approach,
        cfg.lane_offset,
        along + cfg.spawn_distance,
        cfg.exit_distance,
    )?;
    let mut loc_rng = stream(seed, streams::LOCALIZATION);
    let offsets = cfg.localization.sample_offsets(&mut loc_rng);
    let mut state = VehicleState::at_rest(start_pose(&path));
    state.speed = cfg.cruise;
    let mut progress = 0.0;
    let mut triggered = false;
    let ticks = (cfg.duration / cfg.dt - TIME_EPS).ceil() as usize;
    for _ in 0..ticks {
        let localized = cfg.localization.localize(&offsets, &state, &mut loc_rng);
        if !triggered && presence_trigger(&localized.footprint(&cfg.vehicle), model) {
            triggered = true;
        }
        let pp = pure_pursuit_tracked(&state, &cfg.vehicle, &path, cfg.lookahead, progress, 1.0);
        progress = pp.progress;
        if pp.complete {
            return Ok(None);
        }
        let target = if triggered { 0.0 } else { cfg.cruise };
        state = step(
            &state,
            &cfg.vehicle,
            &ControlCommand {
                target_speed: target,
                steer: pp.steer,
            },
            cfg.dt,
        )?;
        if triggered && state.speed < REST_SPEED {
            return Ok(Some(signed_stop_distance(&state, &line)?));
        }
    }
    Ok(None)
}

/// Every (approach, scale) cell runs the same seeds `base_seed..base_seed + trials`.
pub fn stopping_experiment(
    cfg: &StoppingConfig,
    approaches: &[Approach],
    scales: &[f64],
    trials_per_cell: usize,
    base_seed: u64,
    workers: usize,
) -> Result<StoppingTable> {
    cfg.validate()?;
    if trials_per_cell == 0 || approaches.is_empty() || scales.is_empty() {
        return Err(Error::Scenario(
            "stopping experiment needs trials, approaches and scales".into(),
        ));
    }
    let layout = load_layout(&cfg.city)?;
    let base = cfg.intersection.build(&layout)?;
    for a in approaches {
        base.stop_line(*a)?;
    }
    let mut jobs = Vec::new();
    for &sc in scales {
        let model = base.with_scale(sc);
        model.validate()?;
        for &a in approaches {
            for i in 0..trials_per_cell as u64 {
                jobs.push((sc, a, base_seed.wrapping_add(i)));
            }
        }
    }
    let results = parallel_map(&jobs, workers, |&(sc, a, seed)| {
        stopping_trial(cfg, &base.with_scale(sc), a, seed)
    })?;
    let mut cells = Vec::new();
    let mut it = results.into_iter();
    for &sc in scales {
        for &a in approaches {
            let mut distances = Vec::new();
            let mut overruns = 0;
            for _ in 0..trials_per_cell {
                match it.next().expect("one result per job")? {
                    Some(d) => distances.push(d),
                    None => overruns += 1,
                }
            }
            let summary = MeanStd::of(&distances);
            cells.push(StoppingCell {
                approach: a,
                scale: sc,
                distances,
                overruns,
                summary,
            });
        }
    }
    Ok(StoppingTable {
        name: cfg.name.clone(),
        base_seed,
        trials_per_cell,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Parameter(format!("unknown output format '{other}'"))),
        }
    }
}

/// Fixed-precision number formatting used by every emitted file.
pub fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fixed).unwrap_or_default()
}

/// Rounds every float of a JSON tree to six decimals.
fn round_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64");
            let r = (x * 1e6).round() / 1e6;
            *v = serde_json::Number::from_f64(if r == 0.0 { 0.0 } else { r })
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_json),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Pretty JSON with fixed-precision floats.
pub fn to_fixed_json<T: Serialize>(item: &T) -> Result<String> {
    let mut v = serde_json::to_value(item)?;
    round_json(&mut v);
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

/// Something that can be written as a results file.
pub trait Emit {
    fn to_csv(&self) -> String;
    fn to_json(&self) -> Result<String>;
}

/// One row per trial: seed, crash flag and time, then traveling time and
/// stopping distance per vehicle in config order.
impl Emit for BatchReport {
    fn to_csv(&self) -> String {
        let mut s = String::from("seed,crashed,crash_time");
        if let Some(first) = self.trials.first() {
            for v in &first.vehicles {
                let _ = write!(s, ",traveling_time_{0},stopping_distance_{0}", v.id);
            }
        }
        s.push('\n');
        for t in &self.trials {
            let _ = write!(s, "{},{},{}", t.seed, t.crashed as u8, opt(t.crash_time));
            for v in &t.vehicles {
                let _ = write!(s, ",{},{}", opt(v.traveling_time), opt(v.stopping_distance));
            }
            s.push('\n');
        }
        s
    }

    fn to_json(&self) -> Result<String> {
        to_fixed_json(&self.summary)
    }
}

impl Emit for BatchSummary {
    fn to_csv(&self) -> String {
        format!(
            "name,n,base_seed,crashes,crash_rate,crash_rate_std\n{},{},{},{},{},{}\n",
            self.name,
            self.n,
            self.base_seed,
            self.crashes,
            fixed(self.crash_rate),
            fixed(self.crash_rate_std)
        )
    }

    fn to_json(&self) -> Result<String> {
        to_fixed_json(self)
    }
}

impl Emit for TrialResult {
    fn to_csv(&self) -> String {
        let mut s = String::from("id,t,x,y,theta,speed\n");
        for v in &self.vehicles {
            for p in &v.trajectory {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    v.id,
                    fixed(p.t),
                    fixed(p.pose.x),
                    fixed(p.pose.y),
                    fixed(p.pose.theta),
                    fixed(p.speed)
                );
            }
        }
        s
    }

    fn to_json(&self) -> Result<String> {
        to_fixed_json(self)
    }
}

/// Columns: approach, scale, n, overruns, mean_m, std_m.
impl Emit for StoppingTable {
    fn to_csv(&self) -> String {
        let mut s = String::from("approach,scale,n,overruns,mean_m,std_m\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.approach.name(),
                fixed(c.scale),
                c.distances.len(),
                c.overruns,
                opt(c.summary.map(|m| m.mean)),
                opt(c.summary.map(|m| m.std))
            );
        }
        s
    }

    fn to_json(&self) -> Result<String> {
        to_fixed_json(self)
    }
}

pub fn emit_results<T: Emit>(item: &T, format: OutputFormat, path: &FsPath) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => item.to_csv(),
        OutputFormat::Json => item.to_json()?,
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Shipped reference configs, by file name.
pub mod reference {
    pub const FIG1_CROSSING: &str = include_str!("../configs/fig1_crossing.json");
    pub const TABLE3_COMM_A: &str = include_str!("../configs/tableIII_commA.json");
    pub const TABLE3_COMM_B: &str = include_str!("../configs/tableIII_commB.json");
    pub const TABLE5_STOPPING: &str = include_str!("../configs/tableV_stopping.json");
    pub const TABLE5_CENTERED: &str = include_str!("../configs/tableV_stopping_centered.json");

    pub const ALL: [(&str, &str); 5] = [
        ("fig1_crossing.json", FIG1_CROSSING),
        ("tableIII_commA.json", TABLE3_COMM_A),
        ("tableIII_commB.json", TABLE3_COMM_B),
        ("tableV_stopping.json", TABLE5_STOPPING),
        ("tableV_stopping_centered.json", TABLE5_CENTERED),
    ];
}
