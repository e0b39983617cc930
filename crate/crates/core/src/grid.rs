//! Occupancy rasters and exact grid traversal.
//!
//! Cell `(i, j)` covers `[i·res, (i+1)·res) × [j·res, (j+1)·res)` in the grid
//! frame, whose pose in the world is `origin`. Row `j = 0` is the bottom row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Vec2};

/// Ternary cell state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellState {
    Occupied,
    Free,
    Unknown,
}

/// Shape, resolution and placement shared by every grid flavour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Pose2D,
}

impl GridGeometry {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Pose2D) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::Parameter(format!(
                "grid resolution must be positive, got {resolution}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::Parameter("grid must have at least one cell".into()));
        }
        if !origin.is_finite() {
            return Err(Error::Parameter("grid origin is not finite".into()));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    /// Physical extent (width, height) in meters.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        )
    }

    /// World point to grid-frame meters.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        self.origin.inverse_transform_point(p)
    }

    pub fn world_to_cell(&self, p: Vec2) -> Option<(usize, usize)> {
        let l = self.to_local(p);
        let fi = (l.x / self.resolution).floor();
        let fj = (l.y / self.resolution).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.width as f64 || fj >= self.height as f64 {
            return None;
        }
        Some((fi as usize, fj as usize))
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        let l = Vec2::new((i as f64 + 0.5) * self.resolution, (j as f64 + 0.5) * self.resolution);
        self.origin.transform_point(l)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.world_to_cell(p).is_some()
    }

    /// Walks the cells pierced by the ray `origin + t·dir(angle)` for
    /// `t ∈ [0, max_t]` in order, using exact cell stepping. The callback
    /// receives `(cell index, t_enter, t_exit)` and returns `false` to stop.
    /// Traversal ends when the ray leaves the grid.
    pub fn traverse<F>(&self, origin: Vec2, angle: f64, max_t: f64, mut visit: F)
    where
        F: FnMut(usize, f64, f64) -> bool,
    {
        let p = self.to_local(origin);
        let d = Vec2::from_angle(angle - self.origin.theta);
        let res = self.resolution;
        let fi = (p.x / res).floor();
        let fj = (p.y / res).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.width as f64 || fj >= self.height as f64 {
            return;
        }
        let (mut i, mut j) = (fi as i64, fj as i64);
        let step_i: i64 = if d.x > 0.0 { 1 } else { -1 };
        let step_j: i64 = if d.y > 0.0 { 1 } else { -1 };
        let t_delta_x = if d.x != 0.0 { res / d.x.abs() } else { f64::INFINITY };
        let t_delta_y = if d.y != 0.0 { res / d.y.abs() } else { f64::INFINITY };
        let mut t_max_x = if d.x > 0.0 {
            ((i + 1) as f64 * res - p.x) / d.x
        } else if d.x < 0.0 {
            (i as f64 * res - p.x) / d.x
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if d.y > 0.0 {
            ((j + 1) as f64 * res - p.y) / d.y
        } else if d.y < 0.0 {
            (j as f64 * res - p.y) / d.y
        } else {
            f64::INFINITY
        };
        let mut t_enter = 0.0;
        loop {
            let t_exit = t_max_x.min(t_max_y);
            let idx = self.index(i as usize, j as usize);
            if !visit(idx, t_enter, t_exit.min(max_t)) || t_exit >= max_t {
                return;
            }
            t_enter = t_exit;
            if t_max_x <= t_max_y {
                i += step_i;
                t_max_x += t_delta_x;
            } else {
                j += step_j;
                t_max_y += t_delta_y;
            }
            if i < 0 || j < 0 || i >= self.width as i64 || j >= self.height as i64 {
                return;
            }
        }
    }
}

/// Outcome of a single grid raycast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ray {
    /// Distance to the boundary of the first occupied cell.
    Hit(f64),
    /// Nothing occupied within range (or the ray left the grid).
    NoHit,
    /// The origin itself lies in an occupied cell; range is zero.
    Blocked,
}

impl Ray {
    pub fn range(self) -> Option<f64> {
        match self {
            Ray::Hit(r) => Some(r),
            Ray::Blocked => Some(0.0),
            Ray::NoHit => None,
        }
    }
}

/// Ternary occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub geometry: GridGeometry,
    cells: Vec<CellState>,
}

impl OccupancyGrid {
    pub fn filled(geometry: GridGeometry, state: CellState) -> Self {
        Self {
            cells: vec![state; geometry.len()],
            geometry,
        }
    }

    pub fn from_cells(geometry: GridGeometry, cells: Vec<CellState>) -> Result<Self> {
        if cells.len() != geometry.len() {
            return Err(Error::Format(format!(
                "expected {} cells for {}x{}, got {}",
                geometry.len(),
                geometry.width,
                geometry.height,
                cells.len()
            )));
        }
        Ok(Self { geometry, cells })
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn resolution(&self) -> f64 {
        self.geometry.resolution
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn get(&self, i: usize, j: usize) -> CellState {
        self.cells[self.geometry.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, s: CellState) {
        let idx = self.geometry.index(i, j);
        self.cells[idx] = s;
    }

    pub fn state_at(&self, p: Vec2) -> Option<CellState> {
        self.geometry.world_to_cell(p).map(|(i, j)| self.get(i, j))
    }

    pub fn count(&self, s: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == s).count()
    }

    pub fn same_shape(&self, o: &OccupancyGrid) -> bool {
        self.geometry.width == o.geometry.width
            && self.geometry.height == o.geometry.height
            && self.geometry.resolution == o.geometry.resolution
    }

    /// Distance from `origin` along `origin.theta + angle` to the first
    /// occupied cell. Unknown cells are transparent.
    pub fn raycast(&self, origin: &Pose2D, angle: f64, max_range: f64) -> Ray {
        let start = origin.position();
        match self.state_at(start) {
            None => return Ray::NoHit,
            Some(CellState::Occupied) => return Ray::Blocked,
            Some(_) => {}
        }
        let mut hit = None;
        self.geometry
            .traverse(start, origin.theta + angle, max_range, |idx, t_enter, _| {
                if self.cells[idx] == CellState::Occupied {
                    hit = Some(t_enter);
                    false
                } else {
                    true
                }
            });
        match hit {
            Some(t) if t <= max_range => Ray::Hit(t),
            _ => Ray::NoHit,
        }
    }
}

/// Log-odds occupancy grid used by the mappers. Zero means never observed.
#[derive(Debug, Clone, PartialEq)]
pub struct LogOddsGrid {
    pub geometry: GridGeometry,
    pub clamp: f64,
    values: Vec<f64>,
}

impl LogOddsGrid {
    pub fn new(geometry: GridGeometry, clamp: f64) -> Self {
        Self {
            values: vec![0.0; geometry.len()],
            geometry,
            clamp,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Adds `delta` to cell `idx`, clamping to `±clamp`.
    pub fn add(&mut self, idx: usize, delta: f64) {
        let v = &mut self.values[idx];
        *v = (*v + delta).clamp(-self.clamp, self.clamp);
    }

    /// Thresholds into a ternary grid: `> occ` occupied, `< free` free.
    pub fn threshold(&self, occ: f64, free: f64) -> OccupancyGrid {
        let cells = self
            .values
            .iter()
            .map(|&v| {
                if v > occ {
                    CellState::Occupied
                } else if v < free {
                    CellState::Free
                } else {
                    CellState::Unknown
                }
            })
            .collect();
        OccupancyGrid {
            geometry: self.geometry,
            cells,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty(w: usize, h: usize) -> OccupancyGrid {
        let g = GridGeometry::new(w, h, 0.05, Pose2D::default()).unwrap();
        OccupancyGrid::filled(g, CellState::Free)
    }

    #[test]
    fn rejects_bad_resolution() {
        assert!(GridGeometry::new(4, 4, 0.0, Pose2D::default()).is_err());
        assert!(GridGeometry::new(4, 4, -1.0, Pose2D::default()).is_err());
    }

    #[test]
    fn empty_grid_never_hits() {
        let g = empty(100, 100);
        let o = Pose2D::new(2.5, 2.5, 0.0);
        for k in 0..36 {
            let a = k as f64 * 10f64.to_radians();
            assert_eq!(g.raycast(&o, a, 10.0), Ray::NoHit);
        }
    }

    #[test]
    fn wall_column_range() {
        let mut g = empty(100, 100);
        let col = (3.0 / 0.05) as usize;
        for j in 0..100 {
            g.set(col, j, CellState::Occupied);
        }
        let r = g.raycast(&Pose2D::new(1.0, 2.52, 0.0), 0.0, 10.0);
        let Ray::Hit(d) = r else { panic!("{r:?}") };
        assert!((d - 2.0).abs() <= 0.05);
    }

    #[test]
    fn border_behind_origin() {
        let mut g = empty(100, 100);
        for j in 0..100 {
            g.set(0, j, CellState::Occupied);
        }
        let d = g
            .raycast(&Pose2D::new(1.05, 2.0, 0.0), std::f64::consts::PI, 10.0)
            .range()
            .unwrap();
        assert!((d - 1.0).abs() <= 0.05);
    }

    #[test]
    fn origin_in_occupied_cell_is_blocked() {
        let mut g = empty(10, 10);
        g.set(2, 2, CellState::Occupied);
        assert_eq!(g.raycast(&Pose2D::new(0.125, 0.125, 0.0), 0.0, 1.0), Ray::Blocked);
    }

    #[test]
    fn max_range_caps_hits() {
        let mut g = empty(100, 10);
        for j in 0..10 {
            g.set(80, j, CellState::Occupied);
        }
        assert_eq!(g.raycast(&Pose2D::new(0.1, 0.2, 0.0), 0.0, 2.0), Ray::NoHit);
    }

    #[test]
    fn traversal_visits_contiguous_cells() {
        let g = GridGeometry::new(20, 20, 0.1, Pose2D::default()).unwrap();
        let mut last: Option<(usize, usize)> = None;
        g.traverse(Vec2::new(0.05, 0.05), 0.6, 1.5, |idx, t0, t1| {
            assert!(t1 >= t0);
            let (i, j) = g.coords(idx);
            if let Some((pi, pj)) = last {
                assert_eq!((i as i64 - pi as i64).abs() + (j as i64 - pj as i64).abs(), 1);
            }
            last = Some((i, j));
            true
        });
        assert!(last.is_some());
    }

    #[test]
    fn log_odds_clamp_and_threshold() {
        let geo = GridGeometry::new(3, 1, 0.05, Pose2D::default()).unwrap();
        let mut lg = LogOddsGrid::new(geo, 10.0);
        for _ in 0..20 {
            lg.add(0, 0.85);
            lg.add(2, -0.4);
        }
        assert_eq!(lg.value(0), 10.0);
        let t = lg.threshold(2.0, -2.0);
        assert_eq!(t.cells(), &[CellState::Occupied, CellState::Unknown, CellState::Free]);
    }
}
