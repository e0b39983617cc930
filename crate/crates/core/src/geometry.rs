//! Planar geometry: poses, polygons, oriented rectangles and the predicates
//! used for collision and presence tests.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or displacement in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at `angle` radians.
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Rotates counter-clockwise by `angle`.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl From<(f64, f64)> for Vec2 {
    fn from((x, y): (f64, f64)) -> Self {
        Vec2::new(x, y)
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Planar pose. `theta` is kept in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Maps a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, local: Vec2) -> Vec2 {
        self.position() + local.rotate(self.theta)
    }

    /// Maps a parent-frame point into this pose's local frame.
    pub fn inverse_transform_point(&self, world: Vec2) -> Vec2 {
        (world - self.position()).rotate(-self.theta)
    }

    /// Pose composition `self ⊕ delta`, with `delta` expressed in the frame of `self`.
    pub fn compose(&self, delta: &Pose2D) -> Pose2D {
        let p = self.transform_point(delta.position());
        Pose2D::new(p.x, p.y, self.theta + delta.theta)
    }

    /// Relative pose `self ⊖ from`: the delta that takes `from` to `self`.
    pub fn relative_to(&self, from: &Pose2D) -> Pose2D {
        let p = from.inverse_transform_point(self.position());
        Pose2D::new(p.x, p.y, self.theta - from.theta)
    }
}

/// A directed line segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.a + self.b) * 0.5
    }

    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        let d = self.b - self.a;
        let len_sq = d.norm_sq();
        if len_sq == 0.0 {
            return p.distance(self.a);
        }
        let t = ((p - self.a).dot(d) / len_sq).clamp(0.0, 1.0);
        p.distance(self.a + d * t)
    }

    pub fn contains_point(&self, p: Vec2, eps: f64) -> bool {
        self.distance_to_point(p) <= eps
    }

    /// Proper or touching intersection of two closed segments.
    pub fn intersects(&self, o: &Segment) -> bool {
        let d1 = orient(o.a, o.b, self.a);
        let d2 = orient(o.a, o.b, self.b);
        let d3 = orient(self.a, self.b, o.a);
        let d4 = orient(self.a, self.b, o.b);
        if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
            return true;
        }
        (d1 == 0.0 && on_box(o.a, o.b, self.a))
            || (d2 == 0.0 && on_box(o.a, o.b, self.b))
            || (d3 == 0.0 && on_box(self.a, self.b, o.a))
            || (d4 == 0.0 && on_box(self.a, self.b, o.b))
    }
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

fn on_box(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Shoelace signed area; positive for counter-clockwise rings.
pub fn signed_area(vertices: &[Vec2]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += vertices[i].cross(vertices[(i + 1) % n]);
    }
    acc * 0.5
}

/// Simple polygon with counter-clockwise winding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polygon {
    vertices: Vec<Vec2>,
}

impl Polygon {
    /// Validates and stores the ring. Clockwise input is reversed so the
    /// stored winding is always counter-clockwise.
    pub fn new(mut vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Geometry(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("polygon vertex is not finite".into()));
        }
        let area = signed_area(&vertices);
        if area == 0.0 {
            return Err(Error::Geometry("polygon has zero area".into()));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        let poly = Polygon { vertices };
        if !poly.is_simple() {
            return Err(Error::Geometry("polygon is self-intersecting".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle given by two corners.
    pub fn rectangle(min: Vec2, max: Vec2) -> Result<Self> {
        Polygon::new(vec![min, Vec2::new(max.x, min.y), max, Vec2::new(min.x, max.y)])
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = Segment> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| Segment::new(self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    /// Area centroid.
    pub fn centroid(&self) -> Vec2 {
        let n = self.vertices.len();
        let mut cx = 0.0;
        let mut cy = 0.0;
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let w = p.cross(q);
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        let a6 = 6.0 * self.area();
        Vec2::new(cx / a6, cy / a6)
    }

    pub fn translate(&self, by: Vec2) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|&v| v + by).collect(),
        }
    }

    /// Euclidean distance from `p` to the polygon region (0 inside).
    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        if point_in_polygon(p, self) {
            return 0.0;
        }
        self.edges()
            .map(|e| e.distance_to_point(p))
            .fold(f64::INFINITY, f64::min)
    }

    fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        let edges: Vec<Segment> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    // Adjacent edges share one vertex; reject only collinear fold-backs.
                    let (e, f) = (&edges[i], &edges[j]);
                    let shared = if j == i + 1 { e.b } else { e.a };
                    let other_e = if j == i + 1 { e.a } else { e.b };
                    let other_f = if j == i + 1 { f.b } else { f.a };
                    let d1 = other_e - shared;
                    let d2 = other_f - shared;
                    if d1.cross(d2) == 0.0 && d1.dot(d2) > 0.0 {
                        return false;
                    }
                    continue;
                }
                if edges[i].intersects(&edges[j]) {
                    return false;
                }
            }
        }
        true
    }
}

impl<'de> Deserialize<'de> for Polygon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            vertices: Vec<Vec2>,
        }
        let raw = Raw::deserialize(d)?;
        Polygon::new(raw.vertices).map_err(serde::de::Error::custom)
    }
}

/// Scales every vertex about `about`: `v -> about + s (v - about)`.
pub fn scale_polygon(p: &Polygon, s: f64, about: Vec2) -> Result<Polygon> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Parameter(format!("scale must be positive, got {s}")));
    }
    Ok(Polygon {
        vertices: p.vertices.iter().map(|&v| about + (v - about) * s).collect(),
    })
}

/// Even-odd containment test. Points on the boundary count as inside.
pub fn point_in_polygon(p: Vec2, poly: &Polygon) -> bool {
    const EPS: f64 = 1e-12;
    let v = &poly.vertices;
    let n = v.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[j], v[i]);
        if Segment::new(a, b).contains_point(p, EPS) {
            return true;
        }
        if (b.y > p.y) != (a.y > p.y) {
            let x_cross = b.x + (p.y - b.y) * (a.x - b.x) / (a.y - b.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Rectangle of given length (along `center.theta`) and width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Pose2D,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn new(center: Pose2D, length: f64, width: f64) -> Result<Self> {
        if !(length > 0.0 && width > 0.0) {
            return Err(Error::Geometry(format!(
                "rect dims must be positive, got {length} x {width}"
            )));
        }
        Ok(Self { center, length, width })
    }

    /// Corners in counter-clockwise order starting at rear-right.
    pub fn corners(&self) -> [Vec2; 4] {
        let hl = self.length * 0.5;
        let hw = self.width * 0.5;
        [
            Vec2::new(-hl, -hw),
            Vec2::new(hl, -hw),
            Vec2::new(hl, hw),
            Vec2::new(-hl, hw),
        ]
        .map(|c| self.center.transform_point(c))
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon {
            vertices: self.corners().to_vec(),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let l = self.center.inverse_transform_point(p);
        l.x.abs() <= self.length * 0.5 && l.y.abs() <= self.width * 0.5
    }

    /// Distance along the ray `origin + t·dir` (unit `dir`) to the first point
    /// of the rectangle boundary, if the ray enters it.
    pub fn ray_intersection(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let o = self.center.inverse_transform_point(origin);
        let d = dir.rotate(-self.center.theta);
        let half = [self.length * 0.5, self.width * 0.5];
        let (oc, dc) = ([o.x, o.y], [d.x, d.y]);
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        for k in 0..2 {
            if dc[k].abs() < 1e-15 {
                if oc[k].abs() > half[k] {
                    return None;
                }
            } else {
                let t1 = (-half[k] - oc[k]) / dc[k];
                let t2 = (half[k] - oc[k]) / dc[k];
                t_min = t_min.max(t1.min(t2));
                t_max = t_max.min(t1.max(t2));
            }
        }
        if t_max < t_min || t_max < 0.0 {
            return None;
        }
        Some(t_min.max(0.0))
    }

    fn axes(&self) -> [Vec2; 2] {
        let h = self.center.heading();
        [h, h.perp()]
    }
}

/// Separating-axis overlap test for two oriented rectangles. Touching counts
/// as overlap.
pub fn rect_overlap(a: &OrientedRect, b: &OrientedRect) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    for axis in a.axes().into_iter().chain(b.axes()) {
        let (amin, amax) = project(&ca, axis);
        let (bmin, bmax) = project(&cb, axis);
        if amax < bmin || bmax < amin {
            return false;
        }
    }
    true
}

fn project(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let p = c.dot(axis);
        (lo.min(p), hi.max(p))
    })
}

/// Cumulative arc length along a polyline, one entry per vertex.
pub fn polyline_arclength(points: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            acc += p.distance(points[i - 1]);
        }
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square_at(x: f64, y: f64) -> OrientedRect {
        OrientedRect::new(Pose2D::new(x, y, 0.0), 1.0, 1.0).unwrap()
    }

    #[test]
    fn angle_normalization_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(0.5 - TAU) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn compose_and_relative_are_inverse() {
        let a = Pose2D::new(1.0, 2.0, 0.7);
        let b = Pose2D::new(-0.4, 3.1, -2.5);
        let d = b.relative_to(&a);
        let back = a.compose(&d);
        assert!((back.x - b.x).abs() < 1e-12);
        assert!((back.y - b.y).abs() < 1e-12);
        assert!((back.theta - b.theta).abs() < 1e-12);
    }

    #[test]
    fn rect_overlap_examples() {
        let r = unit_square_at(0.0, 0.0);
        assert!(rect_overlap(&r, &r));
        let car = |x| OrientedRect::new(Pose2D::new(x, 0.0, 0.3), 0.51, 0.30).unwrap();
        assert!(!rect_overlap(&car(0.0), &car(10.0)));
        assert!(rect_overlap(&r, &unit_square_at(0.9, 0.0)));
        assert!(!rect_overlap(&r, &unit_square_at(0.0, 1.1)));
    }

    #[test]
    fn scale_polygon_examples() {
        let p = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.5, 1.5),
            Vec2::new(0.5, 2.0),
        ])
        .unwrap();
        let c = p.centroid();
        assert_eq!(scale_polygon(&p, 1.0, c).unwrap().vertices(), p.vertices());
        let doubled = scale_polygon(&p, 2.0, c).unwrap();
        for (a, b) in p.vertices().iter().zip(doubled.vertices()) {
            assert!((b.distance(c) - 2.0 * a.distance(c)).abs() < 1e-12);
        }
        let s = scale_polygon(&p, 1.25, c).unwrap();
        assert!((s.area() / p.area() - 1.5625).abs() < 1e-12);
        assert!(scale_polygon(&p, 0.0, c).is_err());
        assert!(scale_polygon(&p, -1.0, c).is_err());
    }

    #[test]
    fn point_in_polygon_examples() {
        let sq = Polygon::rectangle(Vec2::ZERO, Vec2::new(1.0, 1.0)).unwrap();
        assert!(point_in_polygon(sq.centroid(), &sq));
        assert!(!point_in_polygon(Vec2::new(3.0, -2.0), &sq));
        assert!(point_in_polygon(Vec2::new(0.5, 1.0), &sq));
        assert!(point_in_polygon(Vec2::new(1.0, 1.0), &sq));
    }

    #[test]
    fn polygon_validation() {
        assert!(Polygon::new(vec![Vec2::ZERO, Vec2::new(1.0, 0.0)]).is_err());
        // bow-tie
        let bow = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ]);
        assert!(bow.is_err());
        // clockwise input is reoriented
        let cw = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
        ])
        .unwrap();
        assert!(cw.area() > 0.0);
    }

    #[test]
    fn ray_hits_rect_face() {
        let r = unit_square_at(3.0, 0.0);
        let t = r.ray_intersection(Vec2::ZERO, Vec2::new(1.0, 0.0)).unwrap();
        assert!((t - 2.5).abs() < 1e-12);
        assert!(r.ray_intersection(Vec2::ZERO, Vec2::new(-1.0, 0.0)).is_none());
        assert_eq!(r.ray_intersection(Vec2::new(3.0, 0.0), Vec2::new(0.0, 1.0)), Some(0.0));
    }
}
