//! Map-comparison, depth-error and summary statistics, plus the table
//! renderers used by reports.
//!
//! Map metrics only look at cells that are known (occupied or free) in both
//! grids. SLAM maps leave building interiors and unvisited margins unknown;
//! counting those would measure coverage rather than map accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Vec2};
use crate::grid::{CellState, OccupancyGrid};

/// Mean over `a` of the distance to the nearest point of `b`. Asymmetric.
pub fn knn_distance(a: &[Vec2], b: &[Vec2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Metric("knn_distance needs two non-empty point sets".into()));
    }
    let mut sum = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let dx = p.x - q.x;
            let dy = p.y - q.y;
            let d2 = dx * dx + dy * dy;
            if d2 < best {
                best = d2;
            }
        }
        sum += best.sqrt();
    }
    Ok(sum / a.len() as f64)
}

fn check_shape(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Metric(format!(
            "grid shapes differ: {}x{}@{} vs {}x{}@{}",
            a.width(),
            a.height(),
            a.resolution(),
            b.width(),
            b.height(),
            b.resolution()
        )))
    }
}

fn known(s: CellState) -> bool {
    s != CellState::Unknown
}

/// Cells known in both grids.
pub fn common_mask(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<Vec<bool>> {
    check_shape(a, b)?;
    Ok(a.cells()
        .iter()
        .zip(b.cells())
        .map(|(&x, &y)| known(x) && known(y))
        .collect())
}

/// Occupied-set IoU over commonly known cells; an empty union gives 1.0.
pub fn iou(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64> {
    check_shape(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.cells().iter().zip(b.cells()) {
        if !(known(x) && known(y)) {
            continue;
        }
        let (ox, oy) = (x == CellState::Occupied, y == CellState::Occupied);
        inter += (ox && oy) as usize;
        union += (ox || oy) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Root-mean-square difference of binarized cell values (occupied 0, free 1)
/// over commonly known cells, scaled by the resolution to meters.
pub fn rmse(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64> {
    check_shape(a, b)?;
    let (mut n, mut sq) = (0usize, 0.0);
    for (&x, &y) in a.cells().iter().zip(b.cells()) {
        if !(known(x) && known(y)) {
            continue;
        }
        n += 1;
        if x != y {
            sq += 1.0;
        }
    }
    if n == 0 {
        return Err(Error::Metric("no commonly observed cells".into()));
    }
    Ok((sq / n as f64).sqrt() * a.resolution())
}

/// World coordinates of occupied cell centers, in cell-index order.
pub fn extract_occupied_points(grid: &OccupancyGrid) -> Vec<Vec2> {
    let g = &grid.geometry;
    grid.cells()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == CellState::Occupied)
        .map(|(k, _)| {
            let (i, j) = g.coords(k);
            g.cell_center(i, j)
        })
        .collect()
}

fn masked_points(grid: &OccupancyGrid, mask: &[bool]) -> Vec<Vec2> {
    let g = &grid.geometry;
    grid.cells()
        .iter()
        .enumerate()
        .filter(|(k, &c)| c == CellState::Occupied && mask[*k])
        .map(|(k, _)| {
            let (i, j) = g.coords(k);
            g.cell_center(i, j)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub knn_gt_to_est: f64,
    pub knn_est_to_gt: f64,
    pub rmse: f64,
    pub iou: f64,
}

/// All map metrics between a ground-truth and an estimated grid. KNN point
/// sets are occupied cells within the commonly known mask.
pub fn evaluate_maps(gt: &OccupancyGrid, est: &OccupancyGrid) -> Result<MetricReport> {
    let mask = common_mask(gt, est)?;
    let pg = masked_points(gt, &mask);
    let pe = masked_points(est, &mask);
    Ok(MetricReport {
        knn_gt_to_est: knn_distance(&pg, &pe)?,
        knn_est_to_gt: knn_distance(&pe, &pg)?,
        rmse: rmse(gt, est)?,
        iou: iou(gt, est)?,
    })
}

/// Two-column table in the layout of the mapping evaluation, distances in cm.
pub fn render_map_report(r: &MetricReport) -> String {
    let mut s = String::from("Metric | Value\n");
    s += &format!("KNN Distance (GT to est) | {}\n", format_cm(r.knn_gt_to_est));
    s += &format!("KNN Distance (est to GT) | {}\n", format_cm(r.knn_est_to_gt));
    s += &format!("RMSE | {}\n", format_cm(r.rmse));
    s += &format!("IoU | {:.4}\n", r.iou);
    s
}

pub fn format_cm(meters: f64) -> String {
    format!("{:.2} cm", meters * 100.0)
}

/// Rigid transform taking points of the estimated map into the ground-truth
/// frame: rotate by `dtheta` about `pivot`, then translate by `(dx, dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    pub pivot: Vec2,
}

impl RigidTransform {
    pub fn identity(pivot: Vec2) -> Self {
        Self {
            dx: 0.0,
            dy: 0.0,
            dtheta: 0.0,
            pivot,
        }
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        (p - self.pivot).rotate(self.dtheta) + self.pivot + Vec2::new(self.dx, self.dy)
    }

    pub fn apply_inverse(&self, p: Vec2) -> Vec2 {
        (p - Vec2::new(self.dx, self.dy) - self.pivot).rotate(-self.dtheta) + self.pivot
    }
}

/// Symmetric search range `-max..=max` in steps of `step`. A zero `max`
/// (or step) searches only 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchAxis {
    pub max: f64,
    pub step: f64,
}

impl SearchAxis {
    pub const OFF: SearchAxis = SearchAxis { max: 0.0, step: 0.0 };

    fn values(&self) -> Vec<f64> {
        if !(self.max > 0.0 && self.step > 0.0) {
            return vec![0.0];
        }
        let n = (self.max / self.step + 1e-9).floor() as i64;
        // identity first so ties keep it
        let mut v = vec![0.0];
        for k in 1..=n {
            v.push(k as f64 * self.step);
            v.push(-(k as f64) * self.step);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignSearch {
    pub dx: SearchAxis,
    pub dy: SearchAxis,
    pub dtheta: SearchAxis,
}

impl AlignSearch {
    pub const DISABLED: AlignSearch = AlignSearch {
        dx: SearchAxis::OFF,
        dy: SearchAxis::OFF,
        dtheta: SearchAxis::OFF,
    };
}

impl Default for AlignSearch {
    fn default() -> Self {
        Self {
            dx: SearchAxis { max: 0.3, step: 0.05 },
            dy: SearchAxis { max: 0.3, step: 0.05 },
            dtheta: SearchAxis { max: 0.06, step: 0.02 },
        }
    }
}

/// Resamples `est` onto `target`'s geometry after moving it by `t`
/// (nearest cell; samples outside `est` are unknown).
pub fn transform_grid(est: &OccupancyGrid, t: &RigidTransform, target: &OccupancyGrid) -> OccupancyGrid {
    let tg = &target.geometry;
    let mut out = OccupancyGrid::filled(*tg, CellState::Unknown);
    for j in 0..tg.height {
        for i in 0..tg.width {
            let src = t.apply_inverse(tg.cell_center(i, j));
            if let Some((si, sj)) = est.geometry.world_to_cell(src) {
                out.set(i, j, est.get(si, sj));
            }
        }
    }
    out
}

/// Grid search for the transform of `est` maximizing IoU against `gt`.
/// Identity is evaluated first and only replaced by a strictly better IoU.
pub fn align_maps(est: &OccupancyGrid, gt: &OccupancyGrid, search: &AlignSearch) -> Result<RigidTransform> {
    if est.count(CellState::Occupied) == 0 || gt.count(CellState::Occupied) == 0 {
        return Err(Error::Metric("align_maps needs occupied cells in both grids".into()));
    }
    let (ex, ey) = gt.geometry.extent();
    let pivot = gt.geometry.origin.transform_point(Vec2::new(ex / 2.0, ey / 2.0));
    let mut best = RigidTransform::identity(pivot);
    let mut best_iou = iou(&transform_grid(est, &best, gt), gt)?;
    for &dtheta in &search.dtheta.values() {
        for &dy in &search.dy.values() {
            for &dx in &search.dx.values() {
                let t = RigidTransform { dx, dy, dtheta, pivot };
                let v = iou(&transform_grid(est, &t, gt), gt)?;
                if v > best_iou {
                    best_iou = v;
                    best = t;
                }
            }
        }
    }
    Ok(best)
}

fn check_pairs(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Metric(format!(
            "need equal non-empty lists, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Mean absolute error, meters.
pub fn mae(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pairs(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean relative error, percent.
pub fn mre(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pairs(pred, gt)?;
    if let Some(g) = gt.iter().find(|&&g| !(g > 0.0)) {
        return Err(Error::Metric(format!("MRE needs positive ground truth, got {g}")));
    }
    Ok(100.0 * pred.iter().zip(gt).map(|(p, g)| (p - g).abs() / g).sum::<f64>() / pred.len() as f64)
}

/// Arithmetic mean and sample standard deviation; one sample has std 0.
pub fn mean_std(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Metric("mean_std of an empty sample".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// `"30.78±13.05"` style.
pub fn format_mean_std(mean: f64, std: f64, decimals: usize) -> String {
    format!("{mean:.decimals$}±{std:.decimals$}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub method: String,
    /// Carried through from the caller; never measured here.
    pub inference_time_s: Option<f64>,
    pub mae: f64,
    pub mre: f64,
}

/// `Algorithms | Inference Time(s) | MAE(m) | MRE(%)` table, three decimals.
pub fn render_depth_table(rows: &[DepthRow]) -> String {
    let mut s = String::from("Algorithms | Inference Time(s) | MAE(m) | MRE(%)\n");
    for r in rows {
        let t = r.inference_time_s.map_or("-".to_string(), |t| format!("{t:.3}"));
        s += &format!("{} | {} | {:.3} | {:.3}\n", r.method, t, r.mae, r.mre);
    }
    s
}

/// Parses `pred,gt`-style two-column CSV of meters. A non-numeric first line
/// is treated as a header.
pub fn read_depth_column(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let field = cols.last().copied().unwrap_or("");
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if n == 0 => continue,
            _ => return Err(Error::Format(format!("line {}: bad depth value '{field}'", n + 1))),
        }
    }
    Ok(out)
}

/// Pose of `est` in `gt` coordinates given an alignment, convenience for reports.
pub fn aligned_pose(t: &RigidTransform, p: &Pose2D) -> Pose2D {
    let q = t.apply(p.position());
    Pose2D::new(q.x, q.y, p.theta + t.dtheta)
}
