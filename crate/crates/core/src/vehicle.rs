//! Ackermann (kinematic bicycle) vehicle model, pure-pursuit path following
//! and stop-line braking.
//!
//! Vehicle poses refer to the rear-axle midpoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polyline_arclength, OrientedRect, Pose2D, Segment, Vec2};

/// Published minimum turning radius of the scale car, meters.
pub const MIN_TURNING_RADIUS: f64 = 1.47;
pub const DEFAULT_WHEELBASE: f64 = 0.33;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_steer: f64,
    /// Footprint length along the heading.
    pub length: f64,
    pub width: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    /// Braking capability, positive magnitude.
    pub max_decel: f64,
    /// How far the rear axle sits behind the footprint center.
    pub rear_axle_offset: f64,
    /// Distance short of a stop line the stop controller aims for.
    pub stop_margin: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: DEFAULT_WHEELBASE,
            max_steer: (DEFAULT_WHEELBASE / MIN_TURNING_RADIUS).atan(),
            length: 0.51,
            width: 0.30,
            max_speed: 2.0,
            max_accel: 1.0,
            max_decel: 1.5,
            rear_axle_offset: DEFAULT_WHEELBASE / 2.0,
            stop_margin: 0.05,
        }
    }
}

impl VehicleParams {
    /// Footprint as printed in the hardware description (0.51 wide, 0.30 long).
    pub fn literal_published_footprint() -> Self {
        Self {
            length: 0.30,
            width: 0.51,
            ..Self::default()
        }
    }

    pub fn min_turning_radius(&self) -> f64 {
        self.wheelbase / self.max_steer.tan()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.wheelbase > 0.0
            && self.max_steer > 0.0
            && self.max_steer < std::f64::consts::FRAC_PI_2
            && self.length > 0.0
            && self.width > 0.0
            && self.max_speed > 0.0
            && self.max_accel > 0.0
            && self.max_decel > 0.0
            && self.stop_margin >= 0.0
            && self.rear_axle_offset.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid vehicle params {self:?}")))
        }
    }

    /// Distance from the rear axle to the front bumper.
    pub fn front_reach(&self) -> f64 {
        self.rear_axle_offset + self.length / 2.0
    }

    pub fn braking_distance(&self, speed: f64) -> f64 {
        speed * speed / (2.0 * self.max_decel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub pose: Pose2D,
    pub speed: f64,
    pub steer: f64,
}

impl VehicleState {
    pub fn at_rest(pose: Pose2D) -> Self {
        Self {
            pose,
            speed: 0.0,
            steer: 0.0,
        }
    }

    pub fn footprint_center(&self, params: &VehicleParams) -> Pose2D {
        let c = self.pose.transform_point(Vec2::new(params.rear_axle_offset, 0.0));
        Pose2D::new(c.x, c.y, self.pose.theta)
    }

    pub fn footprint(&self, params: &VehicleParams) -> OrientedRect {
        OrientedRect {
            center: self.footprint_center(params),
            length: params.length,
            width: params.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    pub target_speed: f64,
    pub steer: f64,
}

/// Advances the kinematic bicycle model by `dt`.
///
/// Speed slews toward the clamped target at no more than `max_accel` or
/// `max_decel`; the pose then moves along the exact arc of curvature
/// `tan(steer) / wheelbase` for the distance covered at the mean speed.
pub fn step(state: &VehicleState, params: &VehicleParams, cmd: &ControlCommand, dt: f64) -> Result<VehicleState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::State(format!("dt must be positive, got {dt}")));
    }
    if !state.pose.is_finite()
        || !state.speed.is_finite()
        || !state.steer.is_finite()
        || !cmd.target_speed.is_finite()
        || !cmd.steer.is_finite()
    {
        return Err(Error::State("non-finite state or command".into()));
    }
    let steer = cmd.steer.clamp(-params.max_steer, params.max_steer);
    let target = cmd.target_speed.clamp(0.0, params.max_speed);
    let v0 = state.speed.clamp(0.0, params.max_speed);
    let v1 = if target > v0 {
        (v0 + params.max_accel * dt).min(target)
    } else {
        (v0 - params.max_decel * dt).max(target)
    };
    let ds = 0.5 * (v0 + v1) * dt;
    let kappa = steer.tan() / params.wheelbase;
    let th = state.pose.theta;
    let dth = kappa * ds;
    let (x, y) = if dth.abs() < 1e-12 {
        (state.pose.x + ds * th.cos(), state.pose.y + ds * th.sin())
    } else {
        (
            state.pose.x + ((th + dth).sin() - th.sin()) / kappa,
            state.pose.y - ((th + dth).cos() - th.cos()) / kappa,
        )
    };
    Ok(VehicleState {
        pose: Pose2D::new(x, y, th + dth),
        speed: v1,
        steer,
    })
}

/// Polyline path with cached arc lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct Path {
    points: Vec<Vec2>,
    arclen: Vec<f64>,
}

impl TryFrom<Vec<Vec2>> for Path {
    type Error = Error;
    fn try_from(points: Vec<Vec2>) -> Result<Self> {
        Path::new(points)
    }
}

impl From<Path> for Vec<Vec2> {
    fn from(p: Path) -> Self {
        p.points
    }
}

/// Projection of a point onto a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathProjection {
    /// Arc length of the projected point. Exceeds the path length when the
    /// point lies beyond the final vertex.
    pub s: f64,
    pub point: Vec2,
    pub distance: f64,
}

impl Path {
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Parameter("path must have at least one point".into()));
        }
        let arclen = polyline_arclength(&points);
        Ok(Self { points, arclen })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.arclen.last().unwrap_or(&0.0)
    }

    /// Point at arc length `s`; the final segment is extended past the end.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let n = self.points.len();
        if n == 1 {
            return self.points[0];
        }
        let k = match self.arclen.iter().position(|&a| a >= s) {
            Some(0) => 1,
            Some(k) => k,
            None => n - 1,
        };
        let (a, b) = (self.points[k - 1], self.points[k]);
        let seg = self.arclen[k] - self.arclen[k - 1];
        if seg <= 0.0 {
            return b;
        }
        a + (b - a) * ((s - self.arclen[k - 1]) / seg)
    }

    /// Unit tangent at arc length `s`.
    pub fn tangent_at(&self, s: f64) -> Vec2 {
        let n = self.points.len();
        if n == 1 {
            return Vec2::new(1.0, 0.0);
        }
        let k = self.arclen.iter().position(|&a| a > s).unwrap_or(n - 1).max(1);
        let d = self.points[k] - self.points[k - 1];
        let len = d.norm();
        if len > 0.0 {
            d * (1.0 / len)
        } else {
            Vec2::new(1.0, 0.0)
        }
    }

    /// Nearest point on the path with arc length inside `[s_lo, s_hi]`.
    pub fn project_window(&self, p: Vec2, s_lo: f64, s_hi: f64) -> PathProjection {
        let n = self.points.len();
        if n == 1 {
            return PathProjection {
                s: 0.0,
                point: self.points[0],
                distance: p.distance(self.points[0]),
            };
        }
        let mut best = PathProjection {
            s: f64::NAN,
            point: self.points[0],
            distance: f64::INFINITY,
        };
        for k in 1..n {
            let (s0, s1) = (self.arclen[k - 1], self.arclen[k]);
            if s1 < s_lo || s0 > s_hi {
                continue;
            }
            let (a, b) = (self.points[k - 1], self.points[k]);
            let d = b - a;
            let len_sq = d.norm_sq();
            let mut t = if len_sq > 0.0 { (p - a).dot(d) / len_sq } else { 0.0 };
            // the last segment extends beyond the end so overshoot is measurable
            let t_hi = if k == n - 1 { f64::INFINITY } else { 1.0 };
            t = t.clamp(0.0, t_hi);
            let q = a + d * t;
            let s = s0 + t * (s1 - s0);
            if s < s_lo || (s > s_hi && k != n - 1) {
                continue;
            }
            let dist = p.distance(q);
            if dist < best.distance {
                best = PathProjection {
                    s,
                    point: q,
                    distance: dist,
                };
            }
        }
        if best.s.is_nan() {
            // window missed every segment; fall back to a global search
            return self.project_window(p, f64::NEG_INFINITY, f64::INFINITY);
        }
        best
    }

    pub fn project(&self, p: Vec2) -> PathProjection {
        self.project_window(p, f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Steering output of the pure-pursuit law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PursuitOutput {
    pub steer: f64,
    /// The rear axle has passed the end of the path.
    pub complete: bool,
    /// Arc length of the rear axle's projection onto the path.
    pub progress: f64,
}

/// Pure pursuit on the whole path (nearest projection, no progress hint).
pub fn pure_pursuit(state: &VehicleState, params: &VehicleParams, path: &Path, lookahead: f64) -> PursuitOutput {
    pursue_from(state, params, path, lookahead, path.project(state.pose.position()))
}

/// Pure pursuit with the projection search restricted to
/// `[progress - back, progress + ahead]`; needed on self-overlapping loops.
pub fn pure_pursuit_tracked(
    state: &VehicleState,
    params: &VehicleParams,
    path: &Path,
    lookahead: f64,
    progress: f64,
    window: f64,
) -> PursuitOutput {
    let proj = path.project_window(state.pose.position(), progress - 0.1, progress + window);
    pursue_from(state, params, path, lookahead, proj)
}

fn pursue_from(
    state: &VehicleState,
    params: &VehicleParams,
    path: &Path,
    lookahead: f64,
    proj: PathProjection,
) -> PursuitOutput {
    let end = path.length();
    if proj.s >= end && path.points().len() > 1 || path.points().len() == 1 && proj.distance < 1e-9 {
        return PursuitOutput {
            steer: 0.0,
            complete: true,
            progress: proj.s,
        };
    }
    let target = path.point_at(proj.s + lookahead);
    let local = state.pose.inverse_transform_point(target);
    let ld = local.norm();
    if ld < 1e-9 {
        return PursuitOutput {
            steer: 0.0,
            complete: false,
            progress: proj.s,
        };
    }
    let alpha = local.y.atan2(local.x);
    let steer = (2.0 * params.wheelbase * alpha.sin() / ld)
        .atan()
        .clamp(-params.max_steer, params.max_steer);
    PursuitOutput {
        steer,
        complete: false,
        progress: proj.s,
    }
}

/// Speed that still lets the vehicle halt `stop_margin` short of a point
/// `stop_point_distance` ahead, capped by the cruise command.
pub fn stop_controller(params: &VehicleParams, cruise: f64, stop_point_distance: f64) -> f64 {
    let room = (stop_point_distance - params.stop_margin).max(0.0);
    cruise.min((2.0 * params.max_decel * room).sqrt())
}

/// [`stop_controller`] for a loop that holds each command for `dt`. The
/// command is one full braking step below the envelope, so the speed reached
/// at the end of the step can still halt in the room left after it. A step
/// that reaches zero mid-tick covers up to `max_decel·dt²/8` more than the
/// continuous stop would; that much room is held back.
pub fn stop_controller_sampled(params: &VehicleParams, cruise: f64, stop_point_distance: f64, dt: f64) -> f64 {
    let reserve = params.max_decel * dt * dt / 8.0;
    let envelope = stop_controller(params, f64::INFINITY, stop_point_distance - reserve);
    cruise.min((envelope - params.max_decel * dt).max(0.0))
}

/// Signed distance from `point` to the line through `line`, positive on the
/// side `travel` points to. Negative values are on the approach side.
pub fn signed_line_distance(point: Vec2, line: &Segment, travel: Vec2) -> Result<f64> {
    let d = line.b - line.a;
    let len = d.norm();
    if !(len > 1e-12) {
        return Err(Error::Geometry("stop line has zero length".into()));
    }
    let mut n = d.perp() * (1.0 / len);
    if n.dot(travel) < 0.0 {
        n = -n;
    }
    Ok((point - line.a).dot(n))
}

/// Signed rear-axle distance to a stop line; negative before the line.
pub fn signed_stop_distance(state: &VehicleState, stop_line: &Segment) -> Result<f64> {
    signed_line_distance(state.pose.position(), stop_line, state.pose.heading())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cruise(v: f64, steer: f64) -> ControlCommand {
        ControlCommand { target_speed: v, steer }
    }

    #[test]
    fn default_params_honor_turning_radius() {
        let p = VehicleParams::default();
        assert!((p.min_turning_radius() - MIN_TURNING_RADIUS).abs() < 1e-12);
        assert!((p.max_steer - 0.2207).abs() < 5e-4);
        p.validate().unwrap();
    }

    #[test]
    fn straight_step() {
        let p = VehicleParams::default();
        let s = VehicleState {
            pose: Pose2D::new(0.0, 0.0, 0.0),
            speed: 1.0,
            steer: 0.0,
        };
        let n = step(&s, &p, &cruise(1.0, 0.0), 0.1).unwrap();
        assert!((n.pose.x - 0.1).abs() < 1e-12 && n.pose.y.abs() < 1e-12);
    }

    #[test]
    fn zero_speed_pose_unchanged() {
        let p = VehicleParams::default();
        let s = VehicleState::at_rest(Pose2D::new(1.0, 2.0, 0.5));
        let n = step(&s, &p, &cruise(0.0, 0.2), 0.1).unwrap();
        assert_eq!(n.pose, s.pose);
    }

    #[test]
    fn step_rejects_bad_input() {
        let p = VehicleParams::default();
        let s = VehicleState::default();
        assert!(step(&s, &p, &cruise(1.0, 0.0), 0.0).is_err());
        assert!(step(&s, &p, &cruise(f64::NAN, 0.0), 0.1).is_err());
    }

    #[test]
    fn speed_slew_limits() {
        let p = VehicleParams::default();
        let s = VehicleState::default();
        let n = step(&s, &p, &cruise(5.0, 1.0), 0.1).unwrap();
        assert!((n.speed - 0.1).abs() < 1e-12);
        assert_eq!(n.steer, p.max_steer);
    }

    #[test]
    fn pure_pursuit_aligned_is_straight() {
        let p = VehicleParams::default();
        let path = Path::new(vec![Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0)]).unwrap();
        let s = VehicleState::at_rest(Pose2D::new(1.0, 0.0, 0.0));
        let out = pure_pursuit(&s, &p, &path, 0.5);
        assert!(out.steer.abs() < 1e-12 && !out.complete);
    }

    #[test]
    fn pure_pursuit_lateral_target_closed_form() {
        let p = VehicleParams {
            max_steer: 1.5,
            ..VehicleParams::default()
        };
        // nearest point is the origin; the lookahead point sits 90° left at 0.8 m
        let path = Path::new(vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 3.0)]).unwrap();
        let s = VehicleState::at_rest(Pose2D::new(0.0, 0.0, 0.0));
        let out = pure_pursuit(&s, &p, &path, 0.8);
        let expect = (2.0 * p.wheelbase / 0.8).atan();
        assert!((out.steer - expect).abs() < 1e-12);
        let clamped = pure_pursuit(&s, &VehicleParams::default(), &path, 0.8);
        assert_eq!(clamped.steer, VehicleParams::default().max_steer);
    }

    #[test]
    fn pure_pursuit_path_complete() {
        let p = VehicleParams::default();
        let path = Path::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)]).unwrap();
        let s = VehicleState::at_rest(Pose2D::new(1.5, 0.1, 0.0));
        let out = pure_pursuit(&s, &p, &path, 0.5);
        assert_eq!((out.steer, out.complete), (0.0, true));
    }

    #[test]
    fn stop_controller_rules() {
        let p = VehicleParams::default();
        assert_eq!(stop_controller(&p, 1.0, 0.03), 0.0);
        assert_eq!(stop_controller(&p, 1.0, p.stop_margin), 0.0);
        let v = 0.8;
        let d = p.stop_margin + v * v / (2.0 * p.max_decel);
        assert!((stop_controller(&p, 5.0, d) - v).abs() < 1e-12);
        assert_eq!(stop_controller(&p, 1.0, 100.0), 1.0);
    }

    #[test]
    fn signed_distance_convention() {
        let line = Segment::new(Vec2::new(0.0, 2.0), Vec2::new(1.0, 2.0));
        let at = |y| VehicleState::at_rest(Pose2D::new(0.5, y, std::f64::consts::FRAC_PI_2));
        assert!((signed_stop_distance(&at(1.9), &line).unwrap() + 0.10).abs() < 1e-12);
        assert!(signed_stop_distance(&at(2.0), &line).unwrap().abs() < 1e-12);
        assert!((signed_stop_distance(&at(2.564), &line).unwrap() - 0.564).abs() < 1e-12);
        let degenerate = Segment::new(Vec2::ZERO, Vec2::ZERO);
        assert!(signed_stop_distance(&at(0.0), &degenerate).is_err());
    }
}
