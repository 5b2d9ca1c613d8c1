mod common;

use interdictor::geometry::{GaussianBelief, Point3};
use interdictor::planning::{learn_roadmap, LearnConfig};
use interdictor::tracking::KalmanConfig;
use interdictor::validation::{dense_reachability_scan, mc_first_passage, mc_instantaneous, voxelize_configuration, OracleConfig, ScanGrid};
use nalgebra::{DMatrix, DVector, Matrix3};

fn grid() -> ScanGrid {
    let o = LearnConfig::new(1, 0).octree;
    ScanGrid::for_octree(o.center, o.half_width, o.max_depth)
}

#[test]
fn zero_budget_scan_is_empty() {
    let model = common::model();
    let scan = dense_reachability_scan(&model, None, &grid(), 0, 1).unwrap();
    assert_eq!(scan.len(), model.n_links());
    assert!(scan.iter().all(|s| s.is_empty()));
}

#[test]
fn pinned_model_scan_is_its_own_voxelization() {
    let mut model = common::model();
    let home = model.home.clone();
    for j in &mut model.joints {
        let v = home[j.coord] * j.ratio;
        j.limits = [v, v];
    }
    let g = grid();
    let scan = dense_reachability_scan(&model, None, &g, 5, 2).unwrap();
    assert_eq!(scan, voxelize_configuration(&model, &home, &g));
    assert!(scan.iter().all(|s| !s.is_empty()));
}

#[test]
fn scans_are_seed_deterministic() {
    let model = common::model();
    let g = grid();
    let a = dense_reachability_scan(&model, None, &g, 600, 9).unwrap();
    assert_eq!(a, dense_reachability_scan(&model, None, &g, 600, 9).unwrap());
}

#[test]
fn octree_volumes_lie_inside_the_dilated_dense_scan() {
    let model = common::model();
    let task = model.home_task(0.01).unwrap();
    let learn = LearnConfig::new(10_000, 0);
    let (_, volumes) = learn_roadmap(&model, &task, true, &learn).unwrap();
    let g = ScanGrid::for_octree(learn.octree.center, learn.octree.half_width, learn.octree.max_depth);
    let scan = dense_reachability_scan(&model, Some(&task), &g, 100_000, 0).unwrap();
    for (l, (cells, octree)) in scan.iter().zip(&volumes.octrees).enumerate() {
        let dilated = ScanGrid::dilate(cells);
        let leaves = octree.occupied_leaf_keys();
        let outside = leaves.difference(&dilated).count();
        assert_eq!(outside, 0, "link {l}: {outside} of {} leaves outside", leaves.len());
    }
}

#[test]
fn quadrupling_samples_halves_the_stderr() {
    let a = GaussianBelief::point3(Point3::zeros(), Matrix3::identity() * 0.3).unwrap();
    let b = GaussianBelief::point3(Point3::new(0.5, 0.0, 0.0), Matrix3::identity() * 0.2).unwrap();
    let run = |samples| mc_instantaneous(&a, &b, 0.4, 0.3, &OracleConfig { samples, seed: 4, ..Default::default() }).unwrap();
    let (small, big) = (run(40_000), run(160_000));
    let ratio = big.stderr / small.stderr;
    assert!((ratio / 0.5 - 1.0).abs() <= 0.2, "{ratio}");
}

#[test]
fn noiseless_parallel_lines_never_meet() {
    let kcfg = KalmanConfig::noiseless(1.0 / 30.0);
    let state = |p: [f64; 3]| {
        let mean = DVector::from_vec(vec![p[0], p[1], p[2], 1.0, 0.0, 0.0]);
        GaussianBelief::new(mean, DMatrix::zeros(6, 6)).unwrap()
    };
    let (a, b) = (state([0.0, 0.0, 0.0]), state([0.0, 1.0, 0.0]));
    let s = mc_first_passage([&a, &b], [0.2, 0.2], &kcfg, 60, &OracleConfig::default()).unwrap();
    assert_eq!(s.p_ac.len(), 60);
    assert!(s.p_ac.iter().chain(&s.stderr).all(|&p| p == 0.0));
}

#[test]
fn first_passage_is_seed_deterministic_and_monotone() {
    let kcfg = KalmanConfig::noiseless(1.0 / 30.0);
    let kcfg = KalmanConfig {
        sigma_alpha: Matrix3::identity() * 0.5,
        ..kcfg
    };
    let state = |p: f64, v: f64| GaussianBelief::new(DVector::from_vec(vec![p, 0.0, 0.0, v, 0.0, 0.0]), DMatrix::identity(6, 6) * 0.01).unwrap();
    let (a, b) = (state(-1.0, 1.0), state(1.0, -1.0));
    let cfg = OracleConfig { samples: 20_000, seed: 6, ..Default::default() };
    let s = mc_first_passage([&a, &b], [0.3, 0.3], &kcfg, 45, &cfg).unwrap();
    assert_eq!(s, mc_first_passage([&a, &b], [0.3, 0.3], &kcfg, 45, &cfg).unwrap());
    assert!(s.p_ac.windows(2).all(|w| w[1] >= w[0]));
    assert!(*s.p_ac.last().unwrap() > 0.5);
}
