mod common;

use std::collections::BTreeSet;

use common::{cluster_oracle, partition, random_scan, rng};
use minicity::geometry::{Pose2D, Vec2};
use minicity::grid::{CellState, GridGeometry, OccupancyGrid};
use minicity::sensing::{depth_cluster, simulate_scan, update_tracks, LidarParams, TrackerParams};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn depth_cluster_matches_union_find_oracle() {
    let mut r = rng(10);
    for case in 0..500 {
        let scan = random_scan(&mut r, 360);
        let th = [5.0_f64, 10.0, 20.0][case % 3].to_radians();
        let min = 1 + case % 4;
        assert_eq!(
            partition(&depth_cluster(&scan, th, min)),
            cluster_oracle(&scan, th, min),
            "case {case}"
        );
    }
}

#[test]
fn every_valid_beam_is_in_one_cluster_without_size_filter() {
    let mut r = rng(11);
    for _ in 0..100 {
        let scan = random_scan(&mut r, 360);
        let clusters = depth_cluster(&scan, 10f64.to_radians(), 1);
        let mut seen = BTreeSet::new();
        for c in &clusters {
            for &b in &c.beams {
                assert!(seen.insert(b), "beam {b} in two clusters");
            }
        }
        let valid: BTreeSet<usize> = (0..360).filter(|&k| scan.ranges[k].is_some()).collect();
        assert_eq!(seen, valid);
    }
}

/// Ray/AABB slab intersection distance.
fn slab(o: Vec2, a: f64, lo: Vec2, hi: Vec2) -> Option<f64> {
    let d = Vec2::from_angle(a);
    let (mut t0, mut t1) = (0.0_f64, f64::INFINITY);
    for (oc, dc, l, h) in [(o.x, d.x, lo.x, hi.x), (o.y, d.y, lo.y, hi.y)] {
        if dc.abs() < 1e-12 {
            if oc < l || oc > h {
                return None;
            }
        } else {
            let (a, b) = ((l - oc) / dc, (h - oc) / dc);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 <= t1).then_some(t0)
}

#[test]
fn noiseless_scan_is_deterministic_and_matches_geometry() {
    let res = 0.05;
    let g = GridGeometry::new(100, 100, res, Pose2D::default()).unwrap();
    let mut grid = OccupancyGrid::filled(g, CellState::Free);
    let (i0, i1, j0, j1) = (60, 70, 20, 80);
    for j in j0..j1 {
        for i in i0..i1 {
            grid.set(i, j, CellState::Occupied);
        }
    }
    let lo = Vec2::new(i0 as f64 * res, j0 as f64 * res);
    let hi = Vec2::new(i1 as f64 * res, j1 as f64 * res);
    let params = LidarParams {
        range_noise_sigma: 0.0,
        max_range: 8.0,
        ..LidarParams::default()
    };
    let mut r = rng(12);
    for _ in 0..20 {
        let pose = Pose2D::new(
            r.random_range(0.5..2.5),
            r.random_range(0.5..4.5),
            r.random_range(-3.0..3.0),
        );
        let s1 = simulate_scan(&grid, &[], &pose, &params, 0.0, &mut rng(1));
        let s2 = simulate_scan(&grid, &[], &pose, &params, 0.0, &mut rng(2));
        assert_eq!(s1, s2);
        for (k, range) in s1.ranges.iter().enumerate() {
            let expect = slab(pose.position(), pose.theta + s1.angles[k], lo, hi).filter(|&t| t <= params.max_range);
            match (range, expect) {
                (Some(m), Some(e)) => assert!((m - e).abs() <= res, "beam {k}: {m} vs {e}"),
                (None, None) => {}
                // grazing rays may differ in whether they clip a corner cell
                (m, e) => {
                    let grazing = slab(pose.position(), pose.theta + s1.angles[k] + 0.02, lo, hi).is_some()
                        != slab(pose.position(), pose.theta + s1.angles[k] - 0.02, lo, hi).is_some();
                    assert!(grazing, "beam {k}: {m:?} vs {e:?}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tracker_merge_discipline_and_count_bound(
        frames in prop::collection::vec(prop::collection::vec((0.0..4.0f64, 0.0..4.0f64), 0..6), 1..8),
        gate in 0.2..1.0f64,
    ) {
        let params = TrackerParams { gate, ..TrackerParams::default() };
        let mut tracks = Vec::new();
        let mut next = 0;
        for f in frames {
            let c: Vec<Vec2> = f.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
            let before = tracks.len();
            tracks = update_tracks(tracks, &c, 0.1, &params, &mut next);
            prop_assert!(tracks.len() <= c.len() + before);
            for a in 0..tracks.len() {
                for b in a + 1..tracks.len() {
                    prop_assert!(tracks[a].position.distance(tracks[b].position) >= gate / 2.0);
                }
            }
        }
    }
}
