use std::f64::consts::{PI, TAU};

use minicity::city::{build_city, CityLayout};
use minicity::geometry::{point_in_polygon, rect_overlap, scale_polygon, OrientedRect, Polygon, Pose2D, Vec2};
use minicity::grid::{CellState, GridGeometry, OccupancyGrid};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn range_of(r: minicity::grid::Ray) -> f64 {
    r.range().unwrap_or(f64::INFINITY)
}

fn arb_grid() -> impl Strategy<Value = OccupancyGrid> {
    prop::collection::vec(prop::bool::weighted(0.15), 20 * 20).prop_map(|occ| {
        let g = GridGeometry::new(20, 20, 0.1, Pose2D::default()).unwrap();
        let cells = occ
            .into_iter()
            .map(|o| if o { CellState::Occupied } else { CellState::Free })
            .collect();
        OccupancyGrid::from_cells(g, cells).unwrap()
    })
}

fn arb_rect() -> impl Strategy<Value = OrientedRect> {
    (-2.0..2.0f64, -2.0..2.0f64, -PI..PI, 0.1..2.0f64, 0.1..2.0f64)
        .prop_map(|(x, y, t, l, w)| OrientedRect::new(Pose2D::new(x, y, t), l, w).unwrap())
}

/// Star-shaped ring around the origin; concave in general, always simple.
fn arb_polygon() -> impl Strategy<Value = Polygon> {
    prop::collection::vec((0.0..1.0f64, 0.3..2.0f64), 3..12).prop_map(|v| {
        let n = v.len();
        let pts = v
            .iter()
            .enumerate()
            .map(|(k, &(jit, r))| Vec2::from_angle((k as f64 + 0.8 * jit) * TAU / n as f64) * r)
            .collect();
        Polygon::new(pts).unwrap()
    })
}

fn winding_number(p: Vec2, poly: &Polygon) -> i32 {
    let v = poly.vertices();
    let mut total = 0.0;
    for k in 0..v.len() {
        let a = v[k] - p;
        let b = v[(k + 1) % v.len()] - p;
        total += a.cross(b).atan2(a.dot(b));
    }
    (total / TAU).round() as i32
}

/// Rect-pair overlap by sampling a 100 x 100 lattice over the common bounding box.
fn sampled_overlap(a: &OrientedRect, b: &OrientedRect) -> bool {
    let bbox = |r: &OrientedRect| {
        let c = r.corners();
        let xs = c.iter().map(|p| p.x);
        let ys = c.iter().map(|p| p.y);
        (
            xs.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            ys.clone().fold(f64::INFINITY, f64::min),
            ys.fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (ax0, ax1, ay0, ay1) = bbox(a);
    let (bx0, bx1, by0, by1) = bbox(b);
    let (x0, x1, y0, y1) = (ax0.max(bx0), ax1.min(bx1), ay0.max(by0), ay1.min(by1));
    if x0 > x1 || y0 > y1 {
        return false;
    }
    for i in 0..100 {
        for j in 0..100 {
            let p = Vec2::new(
                x0 + (x1 - x0) * (i as f64 + 0.5) / 100.0,
                y0 + (y1 - y0) * (j as f64 + 0.5) / 100.0,
            );
            if a.contains(p) && b.contains(p) {
                return true;
            }
        }
    }
    false
}

fn grown(r: &OrientedRect, f: f64) -> OrientedRect {
    OrientedRect {
        length: r.length * f,
        width: r.width * f,
        ..*r
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn raycast_is_bounded(grid in arb_grid(), x in 0.05..1.95f64, y in 0.05..1.95f64, a in -PI..PI, r in 0.1..3.0f64) {
        match grid.raycast(&Pose2D::new(x, y, 0.0), a, r).range() {
            Some(d) => prop_assert!((0.0..=r).contains(&d)),
            None => {}
        }
    }

    #[test]
    fn raycast_monotone_under_occupancy(grid in arb_grid(), x in 0.05..1.95f64, y in 0.05..1.95f64,
                                        a in -PI..PI, extra in (0usize..20, 0usize..20)) {
        let o = Pose2D::new(x, y, 0.0);
        let before = range_of(grid.raycast(&o, a, 3.0));
        let mut more = grid.clone();
        more.set(extra.0, extra.1, CellState::Occupied);
        prop_assert!(range_of(more.raycast(&o, a, 3.0)) <= before);
    }

    #[test]
    fn scale_round_trip(poly in arb_polygon(), s in 0.1..5.0f64, cx in -3.0..3.0f64, cy in -3.0..3.0f64) {
        let c = Vec2::new(cx, cy);
        let back = scale_polygon(&scale_polygon(&poly, s, c).unwrap(), 1.0 / s, c).unwrap();
        for (p, q) in poly.vertices().iter().zip(back.vertices()) {
            prop_assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
        }
    }
}

#[test]
fn rect_overlap_symmetric_and_agrees_with_sampling() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    for _ in 0..1000 {
        let a = arb_rect().new_tree(&mut runner).unwrap().current();
        let b = arb_rect().new_tree(&mut runner).unwrap().current();
        let sat = rect_overlap(&a, &b);
        assert_eq!(sat, rect_overlap(&b, &a));
        let sampled = sampled_overlap(&a, &b);
        if sampled {
            assert!(sat, "{a:?} {b:?}");
        } else if sat {
            // overlap thinner than the lattice spacing
            assert!(sampled_overlap(&grown(&a, 1.05), &grown(&b, 1.05)), "{a:?} {b:?}");
        }
    }
}

#[test]
fn point_in_polygon_agrees_with_winding_number() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let poly = arb_polygon().new_tree(&mut runner).unwrap().current();
        for _ in 0..20 {
            let p = Vec2::new(r.random_range(-2.2..2.2), r.random_range(-2.2..2.2));
            if poly.distance_to_point(p) < 1e-9 {
                continue;
            }
            assert_eq!(point_in_polygon(p, &poly), winding_number(p, &poly) != 0, "{p:?}");
        }
    }
}

#[test]
fn city_grid_independent_of_building_order() {
    let layout = CityLayout::default_layout();
    let base = build_city(&layout, 0.05).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let mut l = layout.clone();
        l.buildings.shuffle(&mut r);
        l.roads.reverse();
        assert_eq!(build_city(&l, 0.05).unwrap(), base);
    }
}
