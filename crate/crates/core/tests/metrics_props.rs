mod common;

use common::{iou_oracle, knn_oracle, random_grid, random_points, rmse_oracle, rng};
use minicity::geometry::Pose2D;
use minicity::geometry::Vec2;
use minicity::grid::{CellState, GridGeometry, OccupancyGrid};
use minicity::gridio::{load_grid, save_grid};
use minicity::metrics::{align_maps, evaluate_maps, iou, knn_distance, rmse, transform_grid, AlignSearch};
use proptest::prelude::*;

#[test]
fn knn_matches_double_loop_both_directions() {
    let mut r = rng(1);
    for case in 0..200 {
        let a = random_points(&mut r, 1 + case % 37);
        let b = random_points(&mut r, 1 + (case * 7) % 41);
        assert_eq!(knn_distance(&a, &b).unwrap(), knn_oracle(&a, &b), "case {case}");
        assert_eq!(knn_distance(&b, &a).unwrap(), knn_oracle(&b, &a), "case {case}");
    }
}

#[test]
fn knn_is_asymmetric() {
    let a = vec![Vec2::new(0.0, 0.0)];
    let b = vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)];
    assert_eq!(knn_distance(&a, &b).unwrap(), 0.0);
    assert_eq!(knn_distance(&b, &a).unwrap(), 5.0);
}

#[test]
fn iou_and_rmse_match_cell_oracle_on_16x16() {
    let mut r = rng(2);
    for case in 0..200 {
        let a = random_grid(&mut r, 16, 16, 0.05);
        let b = random_grid(&mut r, 16, 16, 0.05);
        assert_eq!(iou(&a, &b).unwrap(), iou_oracle(&a, &b), "case {case}");
        assert_eq!(rmse(&a, &b).ok(), rmse_oracle(&a, &b), "case {case}");
        assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
        assert_eq!(rmse(&a, &b).ok(), rmse(&b, &a).ok());
    }
}

#[test]
fn metrics_survive_file_round_trip() {
    let mut r = rng(3);
    let dir = tempfile::tempdir().unwrap();
    for case in 0..20 {
        let a = random_grid(&mut r, 16, 16, 0.05);
        let b = random_grid(&mut r, 16, 16, 0.05);
        let (pa, pb) = (
            dir.path().join(format!("a{case}.pgm")),
            dir.path().join(format!("b{case}.pgm")),
        );
        save_grid(&a, &pa).unwrap();
        save_grid(&b, &pb).unwrap();
        let (a2, b2) = (load_grid(&pa).unwrap(), load_grid(&pb).unwrap());
        assert_eq!(a, a2);
        assert_eq!(evaluate_maps(&a, &b).unwrap(), evaluate_maps(&a2, &b2).unwrap());
    }
}

fn blob_grid(shift: (usize, usize)) -> OccupancyGrid {
    let g = GridGeometry::new(40, 40, 0.05, Pose2D::default()).unwrap();
    let mut m = OccupancyGrid::filled(g, CellState::Free);
    for (i, j) in [
        (10, 10),
        (11, 10),
        (12, 10),
        (10, 11),
        (10, 12),
        (25, 30),
        (26, 30),
        (27, 31),
    ] {
        m.set(i + shift.0, j + shift.1, CellState::Occupied);
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn alignment_never_worse_than_identity(dx in 0usize..4, dy in 0usize..4) {
        let gt = blob_grid((0, 0));
        let est = blob_grid((dx, dy));
        let t = align_maps(&est, &gt, &AlignSearch::default()).unwrap();
        let moved = transform_grid(&est, &t, &gt);
        prop_assert!(iou(&gt, &moved).unwrap() >= iou(&gt, &est).unwrap());
    }
}
