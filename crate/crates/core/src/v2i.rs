//! Vehicle-to-infrastructure messaging: message types and wire layout, the
//! lossy channel, the intersection model, the infrastructure's warning
//! decision and the communicating vehicle's reaction.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::city::Approach;
use crate::error::{Error, Result};
use crate::geometry::{point_in_polygon, scale_polygon, OrientedRect, Polygon, Pose2D, Segment, Vec2};
use crate::rng::std_normal;
use crate::sensing::Track;
use crate::vehicle::{signed_line_distance, stop_controller_sampled, VehicleParams, VehicleState};

pub type NodeId = u16;

/// Sender id used by the infrastructure node.
pub const INFRA_ID: NodeId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Payload {
    /// Pose is the localized footprint center.
    VehicleState {
        pose: Pose2D,
        speed: f64,
    },
    Warning {
        active: bool,
        cause_track_id: Option<u32>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct V2IMessage {
    pub sender: NodeId,
    pub timestamp: f64,
    pub payload: Payload,
}

pub const WIRE_VERSION: u8 = 1;
const KIND_VEHICLE_STATE: u8 = 1;
const KIND_WARNING: u8 = 2;

impl V2IMessage {
    pub fn kind(&self) -> u8 {
        match self.payload {
            Payload::VehicleState { .. } => KIND_VEHICLE_STATE,
            Payload::Warning { .. } => KIND_WARNING,
        }
    }

    /// Wire layout, little endian:
    /// `len:u32 | version:u8 | kind:u8 | sender:u16 | t:f64 | payload`, where
    /// `len` counts the bytes after itself. VEHICLE_STATE payload is
    /// `x, y, theta, speed` as f64; WARNING is `active:u8 | has_cause:u8 | cause:u32`.
    pub fn encode(&self) -> Vec<u8> {
        let mut body = vec![WIRE_VERSION, self.kind()];
        body.extend_from_slice(&self.sender.to_le_bytes());
        body.extend_from_slice(&self.timestamp.to_le_bytes());
        match self.payload {
            Payload::VehicleState { pose, speed } => {
                for v in [pose.x, pose.y, pose.theta, speed] {
                    body.extend_from_slice(&v.to_le_bytes());
                }
            }
            Payload::Warning { active, cause_track_id } => {
                body.push(active as u8);
                body.push(cause_track_id.is_some() as u8);
                body.extend_from_slice(&cause_track_id.unwrap_or(0).to_le_bytes());
            }
        }
        let mut out = (body.len() as u32).to_le_bytes().to_vec();
        out.extend(body);
        out
    }

    /// Decodes one record, returning it and the number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(V2IMessage, usize)> {
        let wire = |m: &str| Error::Wire(m.to_string());
        let len = u32::from_le_bytes(
            bytes
                .get(0..4)
                .ok_or_else(|| wire("truncated length"))?
                .try_into()
                .unwrap(),
        ) as usize;
        let body = bytes.get(4..4 + len).ok_or_else(|| wire("truncated record"))?;
        if body.len() < 12 {
            return Err(wire("record shorter than header"));
        }
        if body[0] != WIRE_VERSION {
            return Err(Error::Wire(format!("unsupported wire version {}", body[0])));
        }
        let f = |at: usize| f64::from_le_bytes(body[at..at + 8].try_into().unwrap());
        let sender = u16::from_le_bytes([body[2], body[3]]);
        let timestamp = f(4);
        let payload = match body[1] {
            KIND_VEHICLE_STATE => {
                if body.len() != 12 + 32 {
                    return Err(wire("bad VEHICLE_STATE length"));
                }
                Payload::VehicleState {
                    pose: Pose2D {
                        x: f(12),
                        y: f(20),
                        theta: f(28),
                    },
                    speed: f(36),
                }
            }
            KIND_WARNING => {
                if body.len() != 12 + 6 {
                    return Err(wire("bad WARNING length"));
                }
                let cause = u32::from_le_bytes(body[14..18].try_into().unwrap());
                Payload::Warning {
                    active: body[12] != 0,
                    cause_track_id: (body[13] != 0).then_some(cause),
                }
            }
            k => return Err(Error::Wire(format!("unknown message kind {k}"))),
        };
        Ok((
            V2IMessage {
                sender,
                timestamp,
                payload,
            },
            4 + len,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub base_latency: f64,
    pub jitter_sigma: f64,
    pub drop_prob: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            base_latency: 0.0,
            jitter_sigma: 0.0,
            drop_prob: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_latency >= 0.0 && self.jitter_sigma >= 0.0 && (0.0..=1.0).contains(&self.drop_prob)) {
            return Err(Error::Config(
                "channel needs latency >= 0, jitter >= 0 and drop_prob in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delivery {
    At(f64),
    Dropped,
}

/// In-simulation channel: an event queue per (sender, receiver) pair.
/// Delivery times within a pair never decrease, so FIFO holds even with
/// jitter.
#[derive(Debug, Clone)]
pub struct Channel<R> {
    pub params: ChannelParams,
    rng: R,
    queues: BTreeMap<(NodeId, NodeId), VecDeque<(f64, V2IMessage)>>,
    last_delivery: BTreeMap<(NodeId, NodeId), f64>,
}

/// Tolerance when comparing delivery times with the clock.
const TIME_EPS: f64 = 1e-9;

impl<R: Rng> Channel<R> {
    pub fn new(params: ChannelParams, rng: R) -> Self {
        Self {
            params,
            rng,
            queues: BTreeMap::new(),
            last_delivery: BTreeMap::new(),
        }
    }

    /// Both random draws are made on every send so that channels with
    /// different parameters stay on matched random sequences.
    pub fn send(&mut self, msg: V2IMessage, to: NodeId, now: f64) -> Delivery {
        let u: f64 = self.rng.random();
        let z = std_normal(&mut self.rng);
        if u < self.params.drop_prob {
            return Delivery::Dropped;
        }
        let latency = (self.params.base_latency + self.params.jitter_sigma * z).max(0.0);
        let key = (msg.sender, to);
        let prev = self.last_delivery.get(&key).copied().unwrap_or(f64::NEG_INFINITY);
        let at = (now + latency).max(prev);
        self.last_delivery.insert(key, at);
        self.queues.entry(key).or_default().push_back((at, msg));
        Delivery::At(at)
    }

    /// Messages for `to` due by `now`, grouped by sender id, FIFO within each.
    pub fn receive(&mut self, to: NodeId, now: f64) -> Vec<V2IMessage> {
        let mut out = Vec::new();
        for ((_, dest), q) in self.queues.iter_mut() {
            if *dest != to {
                continue;
            }
            while q.front().is_some_and(|(at, _)| *at <= now + TIME_EPS) {
                out.push(q.pop_front().expect("checked").1);
            }
        }
        out
    }
}

/// The intersection as the infrastructure sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionModel {
    pub polygon: Polygon,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub center_offset: Vec2,
    pub stop_lines: BTreeMap<Approach, Segment>,
    #[serde(default = "default_zone_depth")]
    pub approach_zone_depth: f64,
    #[serde(default = "default_speed_threshold")]
    pub speed_threshold: f64,
}

fn one() -> f64 {
    1.0
}

fn default_zone_depth() -> f64 {
    1.0
}

fn default_speed_threshold() -> f64 {
    0.05
}

impl IntersectionModel {
    /// Square intersection of half side `half` around `center` with the given stop lines.
    pub fn square(center: Vec2, half: f64, stop_lines: BTreeMap<Approach, Segment>) -> Result<Self> {
        let h = Vec2::new(half, half);
        let m = Self {
            polygon: Polygon::rectangle(center - h, center + h)?,
            scale: 1.0,
            center_offset: Vec2::ZERO,
            stop_lines,
            approach_zone_depth: default_zone_depth(),
            speed_threshold: default_speed_threshold(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_scale(&self, scale: f64) -> Self {
        Self { scale, ..self.clone() }
    }

    pub fn with_offset(&self, offset: Vec2) -> Self {
        Self {
            center_offset: offset,
            ..self.clone()
        }
    }

    /// Base polygon moved by `center_offset` and scaled about its own
    /// (moved) centroid.
    pub fn scaled_polygon(&self) -> Polygon {
        let moved = self.polygon.translate(self.center_offset);
        let c = moved.centroid();
        scale_polygon(&moved, self.scale, c).expect("scale validated")
    }

    /// Scaled polygon without the offset.
    pub fn centered_polygon(&self) -> Polygon {
        scale_polygon(&self.polygon, self.scale, self.polygon.centroid()).expect("scale validated")
    }

    pub fn centroid(&self) -> Vec2 {
        self.scaled_polygon().centroid()
    }

    pub fn stop_line(&self, approach: Approach) -> Result<Segment> {
        self.stop_lines
            .get(&approach)
            .copied()
            .ok_or_else(|| Error::Config(format!("no stop line for the {} approach", approach.name())))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!(
                "intersection scale must be positive, got {}",
                self.scale
            )));
        }
        if !(self.approach_zone_depth >= 0.0 && self.speed_threshold >= 0.0) {
            return Err(Error::Config("zone depth and speed threshold must be >= 0".into()));
        }
        let poly = self.centered_polygon();
        for (a, line) in &self.stop_lines {
            let crosses = poly.edges().any(|e| e.intersects(line));
            if crosses || point_in_polygon(line.a, &poly) || point_in_polygon(line.b, &poly) {
                return Err(Error::Config(format!(
                    "stop line of the {} approach lies inside the scaled intersection",
                    a.name()
                )));
            }
        }
        Ok(())
    }
}

/// Presence-or-approach rule for one track.
pub fn approaching(track: &Track, model: &IntersectionModel) -> bool {
    let poly = model.scaled_polygon();
    let p = track.position;
    if point_in_polygon(p, &poly) {
        return true;
    }
    if poly.distance_to_point(p) > model.approach_zone_depth {
        return false;
    }
    track.speed() >= model.speed_threshold && track.velocity.dot(poly.centroid() - p) > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfraParams {
    pub heartbeat: f64,
    pub match_radius: f64,
    /// Self-reports older than this are ignored.
    pub report_timeout: f64,
}

impl Default for InfraParams {
    fn default() -> Self {
        Self {
            heartbeat: 0.1,
            match_radius: 0.3,
            report_timeout: 1.0,
        }
    }
}

/// Latest self-report of a communicating vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub pose: Pose2D,
    pub speed: f64,
    pub timestamp: f64,
}

impl CommReport {
    /// Reported position moved forward by speed × age.
    pub fn predicted_position(&self, now: f64) -> Vec2 {
        let age = (now - self.timestamp).max(0.0);
        self.pose.position() + self.pose.heading() * (self.speed * age)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub time: f64,
    pub active: bool,
    pub cause_track_id: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InfraState {
    pub tracks: Vec<Track>,
    pub comm: BTreeMap<NodeId, CommReport>,
    pub warning_active: bool,
    last_emit: Option<f64>,
    pub decisions: Vec<Decision>,
}

impl InfraState {
    /// Records a VEHICLE_STATE message; older reports never replace newer ones.
    pub fn ingest(&mut self, msg: &V2IMessage) {
        if let Payload::VehicleState { pose, speed } = msg.payload {
            let newer = self.comm.get(&msg.sender).is_none_or(|r| r.timestamp <= msg.timestamp);
            if newer {
                self.comm.insert(
                    msg.sender,
                    CommReport {
                        pose,
                        speed,
                        timestamp: msg.timestamp,
                    },
                );
            }
        }
    }
}

/// Pure warning rule: active iff some track that is not a communicating
/// vehicle's self-report is approaching. Returns the lowest such track id as
/// the cause.
pub fn warning_rule(
    tracks: &[Track],
    comm: &BTreeMap<NodeId, CommReport>,
    model: &IntersectionModel,
    params: &InfraParams,
    now: f64,
) -> (bool, Option<u32>) {
    let reported: Vec<Vec2> = comm
        .values()
        .filter(|r| now - r.timestamp <= params.report_timeout)
        .map(|r| r.predicted_position(now))
        .collect();
    let cause = tracks
        .iter()
        .filter(|t| reported.iter().all(|p| p.distance(t.position) > params.match_radius))
        .filter(|t| approaching(t, model))
        .map(|t| t.id)
        .min();
    (cause.is_some(), cause)
}

/// Updates the decision and returns a WARNING to broadcast on a state change
/// or when the heartbeat is due.
pub fn infra_decide(
    state: &mut InfraState,
    model: &IntersectionModel,
    params: &InfraParams,
    now: f64,
) -> Option<V2IMessage> {
    let (active, cause) = warning_rule(&state.tracks, &state.comm, model, params, now);
    let changed = active != state.warning_active;
    let due = state.last_emit.is_none_or(|t| now - t >= params.heartbeat - TIME_EPS);
    state.warning_active = active;
    if changed {
        state.decisions.push(Decision {
            time: now,
            active,
            cause_track_id: cause,
        });
    }
    if changed || due {
        state.last_emit = Some(now);
        Some(V2IMessage {
            sender: INFRA_ID,
            timestamp: now,
            payload: Payload::Warning {
                active,
                cause_track_id: cause,
            },
        })
    } else {
        None
    }
}

/// Speed command of a communicating vehicle given the last warning state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlIntent {
    pub target_speed: f64,
    pub braking_for_line: bool,
}

/// Reaction to the warning: with the warning active and the rear axle still
/// before the stop line, slow so the front bumper halts at the line;
/// otherwise keep cruising. `localized` is the vehicle's own pose estimate.
pub fn comm_vehicle_handle(
    warning_active: bool,
    localized: &VehicleState,
    params: &VehicleParams,
    stop_line: Option<&Segment>,
    cruise: f64,
    dt: f64,
) -> Result<ControlIntent> {
    let line = stop_line.ok_or_else(|| Error::Config("communicating vehicle has no stop line".into()))?;
    let d = signed_line_distance(localized.pose.position(), line, localized.pose.heading())?;
    if warning_active && d < 0.0 {
        let room = -d - params.front_reach();
        Ok(ControlIntent {
            target_speed: stop_controller_sampled(params, cruise, room, dt),
            braking_for_line: true,
        })
    } else {
        Ok(ControlIntent {
            target_speed: cruise,
            braking_for_line: false,
        })
    }
}

/// True when the localized footprint touches the scaled intersection polygon.
pub fn presence_trigger(footprint: &OrientedRect, model: &IntersectionModel) -> bool {
    let poly = model.scaled_polygon();
    let rect = footprint.to_polygon();
    rect.vertices().iter().any(|&c| point_in_polygon(c, &poly))
        || poly.vertices().iter().any(|&v| footprint.contains(v))
        || rect.edges().any(|e| poly.edges().any(|f| e.intersects(&f)))
}
