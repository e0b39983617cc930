//! The mini-city layout and its rasterization into a ground-truth grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedRect, Pose2D, Segment, Vec2};
use crate::grid::{CellState, GridGeometry, OccupancyGrid};

/// Shipped layout: 26.75' × 19.75' floor, six buildings, two four-way and
/// two three-way intersections.
pub const DEFAULT_LAYOUT_JSON: &str = include_str!("../data/default_city.json");

/// Entry leg of a four-way intersection: the road a vehicle arrives on.
/// A vehicle on the `South` leg drives north.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    North,
    East,
    South,
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::North, Approach::East, Approach::South, Approach::West];

    /// Unit vector pointing from the intersection center out along this leg.
    pub fn outward(self) -> Vec2 {
        match self {
            Approach::North => Vec2::new(0.0, 1.0),
            Approach::East => Vec2::new(1.0, 0.0),
            Approach::South => Vec2::new(0.0, -1.0),
            Approach::West => Vec2::new(-1.0, 0.0),
        }
    }

    /// Direction of travel of a vehicle entering from this leg.
    pub fn travel(self) -> Vec2 {
        -self.outward()
    }

    /// Right-hand side of the direction of travel; inbound lanes sit on it.
    pub fn right(self) -> Vec2 {
        let t = self.travel();
        Vec2::new(t.y, -t.x)
    }

    /// Heading of travel, radians.
    pub fn heading(self) -> f64 {
        let t = self.travel();
        t.y.atan2(t.x)
    }

    pub fn name(self) -> &'static str {
        match self {
            Approach::North => "north",
            Approach::East => "east",
            Approach::South => "south",
            Approach::West => "west",
        }
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n" | "north" => Ok(Approach::North),
            "e" | "east" => Ok(Approach::East),
            "s" | "south" => Ok(Approach::South),
            "w" | "west" => Ok(Approach::West),
            other => Err(Error::Parameter(format!("unknown approach '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub name: String,
    pub footprint: OrientedRect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub name: String,
    pub width: f64,
    #[serde(default)]
    pub closed: bool,
    pub centerline: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntersectionKind {
    FourWay,
    ThreeWay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionSite {
    pub name: String,
    pub kind: IntersectionKind,
    pub center: Vec2,
    /// Half the side of the square where the crossing roads overlap.
    pub half_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopLineSpec {
    pub intersection: String,
    pub approach: Approach,
    pub segment: Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityLayout {
    pub version: u32,
    pub name: String,
    /// Floor extent (x, y) in meters; the grid origin is the floor's south-west corner.
    pub bounds: (f64, f64),
    pub buildings: Vec<Building>,
    #[serde(default)]
    pub roads: Vec<Road>,
    #[serde(default)]
    pub intersections: Vec<IntersectionSite>,
    #[serde(default)]
    pub stop_lines: Vec<StopLineSpec>,
}

impl CityLayout {
    pub fn default_layout() -> Self {
        serde_json::from_str(DEFAULT_LAYOUT_JSON).expect("shipped layout parses")
    }

    /// Floor of the given size with no buildings or roads.
    pub fn empty(bounds: (f64, f64)) -> Self {
        Self {
            version: 1,
            name: "empty".into(),
            bounds,
            buildings: Vec::new(),
            roads: Vec::new(),
            intersections: Vec::new(),
            stop_lines: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let layout: CityLayout = serde_json::from_str(text)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn intersection(&self, name: &str) -> Option<&IntersectionSite> {
        self.intersections.iter().find(|s| s.name == name)
    }

    pub fn stop_line(&self, intersection: &str, approach: Approach) -> Option<Segment> {
        self.stop_lines
            .iter()
            .find(|s| s.intersection == intersection && s.approach == approach)
            .map(|s| s.segment)
    }

    fn inside(&self, p: Vec2) -> bool {
        p.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.x <= self.bounds.0 && p.y <= self.bounds.1
    }

    pub fn validate(&self) -> Result<()> {
        let (bx, by) = self.bounds;
        if !(bx > 0.0 && by > 0.0) || !bx.is_finite() || !by.is_finite() {
            return Err(Error::Layout(format!("bounds must be positive, got {bx} x {by}")));
        }
        for b in &self.buildings {
            if !(b.footprint.length > 0.0 && b.footprint.width > 0.0) {
                return Err(Error::Layout(format!("building '{}' has empty footprint", b.name)));
            }
            if !b.footprint.corners().iter().all(|&c| self.inside(c)) {
                return Err(Error::Layout(format!("building '{}' lies outside bounds", b.name)));
            }
        }
        for r in &self.roads {
            if r.centerline.len() < 2 || !r.centerline.iter().all(|&p| self.inside(p)) {
                return Err(Error::Layout(format!(
                    "road '{}' is degenerate or out of bounds",
                    r.name
                )));
            }
        }
        for s in &self.intersections {
            if !self.inside(s.center) {
                return Err(Error::Layout(format!("intersection '{}' out of bounds", s.name)));
            }
        }
        for l in &self.stop_lines {
            if !self.inside(l.segment.a) || !self.inside(l.segment.b) {
                return Err(Error::Layout("stop line out of bounds".into()));
            }
        }
        Ok(())
    }
}

fn cells_for(extent: f64, resolution: f64) -> usize {
    // tolerate representation error such as 6.0 / 0.05 = 120.00000000000001
    ((extent / resolution) - 1e-9).ceil().max(1.0) as usize
}

/// Rasterizes a layout: the outer ring of cells and every cell whose center
/// lies in a building are occupied, the rest is free.
pub fn build_city(layout: &CityLayout, resolution: f64) -> Result<OccupancyGrid> {
    layout.validate()?;
    let w = cells_for(layout.bounds.0, resolution);
    let h = cells_for(layout.bounds.1, resolution);
    let geometry = GridGeometry::new(w, h, resolution, Pose2D::default())?;
    let mut grid = OccupancyGrid::filled(geometry, CellState::Free);
    for i in 0..w {
        grid.set(i, 0, CellState::Occupied);
        grid.set(i, h - 1, CellState::Occupied);
    }
    for j in 0..h {
        grid.set(0, j, CellState::Occupied);
        grid.set(w - 1, j, CellState::Occupied);
    }
    for b in &layout.buildings {
        let corners = b.footprint.corners();
        let lo = corners.iter().fold(Vec2::new(f64::INFINITY, f64::INFINITY), |m, c| {
            Vec2::new(m.x.min(c.x), m.y.min(c.y))
        });
        let hi = corners
            .iter()
            .fold(Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |m, c| {
                Vec2::new(m.x.max(c.x), m.y.max(c.y))
            });
        let i0 = ((lo.x / resolution).floor().max(0.0)) as usize;
        let j0 = ((lo.y / resolution).floor().max(0.0)) as usize;
        let i1 = ((hi.x / resolution).ceil() as usize).min(w);
        let j1 = ((hi.y / resolution).ceil() as usize).min(h);
        for j in j0..j1 {
            for i in i0..i1 {
                if b.footprint.contains(geometry.cell_center(i, j)) {
                    grid.set(i, j, CellState::Occupied);
                }
            }
        }
    }
    Ok(grid)
}
