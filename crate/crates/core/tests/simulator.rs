mod common;

use interdictor::planning::Planner;
use interdictor::simulator::{run_with_planner, trace_csv, ContactTarget, Scenario, World};
use nalgebra::{DVector, Vector3};

fn scenario(extra: &str) -> Scenario {
    Scenario::from_toml(&common::scenario_text(extra), common::repo_root()).unwrap()
}

fn home() -> DVector<f64> {
    common::model().home
}

#[test]
fn constant_velocity_covers_the_expected_distance() {
    let s = scenario(
        r#"
duration = 1.0
truth_noise_scale = 0.0
[[objects]]
id = 1
radius = 0.1
role = "hazard"
start = [3.0, 0.0, 1.0]
script = [{ t = 0.0, v = [0.0, 1.0, 0.0] }]
"#,
    );
    let mut w = World::new(&s, home());
    for _ in 0..30 {
        w.step_objects();
    }
    let moved = w.objects[0].p - Vector3::new(3.0, 0.0, 1.0);
    assert!((moved - Vector3::new(0.0, 0.99, 0.0)).norm() < 1e-12, "{moved}");
}

#[test]
fn speed_changes_only_at_script_waypoints() {
    let s = scenario(
        r#"
duration = 1.0
truth_noise_scale = 0.0
[[objects]]
id = 1
radius = 0.1
role = "hazard"
start = [3.0, 0.0, 1.0]
script = [{ t = 0.0, v = [0.0, 1.0, 0.0] }, { t = 0.4, v = [0.5, 0.0, 0.0] }, { t = 0.7, v = [0.0, 0.0, -0.2] }]
"#,
    );
    let model = common::model();
    let mut w = World::new(&s, home());
    for _ in 0..s.steps() {
        let t = w.t;
        let events = w.step(&model);
        assert!(events.is_empty());
        assert_eq!(w.objects[0].velocity(), s.objects[0].scripted_velocity(t));
    }
}

fn observation_scenario(sigma_s: f64, dropout: f64) -> Scenario {
    scenario(&format!(
        r#"
duration = 1.0
truth_noise_scale = 0.0
[noise]
sigma_d = 0.01
sigma_alpha = 1.5
sigma_s = {sigma_s}
[[objects]]
id = 1
radius = 0.1
role = "hazard"
start = [3.0, 0.0, 1.0]
dropout = {dropout}
"#
    ))
}

#[test]
fn sensor_noise_matches_its_covariance() {
    let s = observation_scenario(0.01, 0.0);
    let kcfg = s.kalman();
    let mut w = World::new(&s, home());
    let truth = w.objects[0].p;
    let n = 10_000;
    let samples: Vec<Vector3<f64>> = (0..n).map(|_| w.sensor_observe(&kcfg)[&1] - truth).collect();
    let mean = samples.iter().sum::<Vector3<f64>>() / n as f64;
    let cov = samples.iter().map(|e| (e - mean) * (e - mean).transpose()).sum::<nalgebra::Matrix3<f64>>() / (n - 1) as f64;
    for r in 0..3 {
        for c in 0..3 {
            assert!((cov[(r, c)] - kcfg.sigma_s[(r, c)]).abs() <= 0.05 * 0.01, "{cov}");
        }
    }
}

#[test]
fn noiseless_sensor_reports_truth() {
    let s = observation_scenario(0.0, 0.0);
    let kcfg = s.kalman();
    let mut w = World::new(&s, home());
    assert_eq!(w.sensor_observe(&kcfg)[&1], w.objects[0].p);
}

#[test]
fn full_dropout_hides_the_object() {
    let s = observation_scenario(0.01, 1.0);
    let kcfg = s.kalman();
    let mut w = World::new(&s, home());
    assert!((0..100).all(|_| w.sensor_observe(&kcfg).is_empty()));
}

#[test]
fn runs_are_reproducible() {
    let s = scenario(
        r#"
duration = 2.0
[[objects]]
id = 1
radius = 0.25
role = "protected"
start = [0.4, 0.9, 1.0]
contact = "pass"
[[objects]]
id = 2
radius = 0.08
role = "hazard"
start = [0.4, -1.5, 1.0]
script = [{ t = 0.0, v = [0.0, 1.2, 0.0] }]
"#,
    );
    let a = interdictor::simulator::run(&s, false).unwrap();
    let b = interdictor::simulator::run(&s, false).unwrap();
    assert_eq!(trace_csv(&s, &a.records), trace_csv(&s, &b.records));
    assert_eq!(serde_json::to_string(&a.summary).unwrap(), serde_json::to_string(&b.summary).unwrap());
    assert_eq!(a.records.len(), s.steps() + 1);
    assert!(a.records.windows(2).all(|r| r[1].t > r[0].t));
}

#[test]
fn shipped_scenarios_hold_their_assertions() {
    let mut planners: Vec<(Scenario, Planner)> = Vec::new();
    for name in [
        "ball_block_constrained",
        "ball_block_unconstrained",
        "shoulder_block",
        "mobile_robot_block",
        "approach_recede",
        "no_hazard",
    ] {
        let s = common::scenario(name);
        let idx = match planners.iter().position(|(o, _)| o.robot == s.robot) {
            Some(i) => i,
            None => {
                planners.push((s.clone(), Planner::for_scenario(&s, false).unwrap()));
                planners.len() - 1
            }
        };
        let planner = &planners[idx].1;
        let out = run_with_planner(&s, planner).unwrap();
        let sum = &out.summary;
        assert!(sum.passed, "{name}: {:?}", sum.assertions);
        assert!(sum.joint_limits_respected && sum.joint_speed_respected, "{name}");
        assert_eq!(sum.robot_protected_contacts, 0, "{name}");
        for r in &out.records {
            planner.model.check_limits(&DVector::from_column_slice(&r.q)).unwrap();
        }
        for e in &sum.contacts {
            assert!(e.depth >= 0.0);
            let deflects = s.objects.iter().any(|o| o.id == e.object && o.contact == interdictor::simulator::ContactRule::Deflect);
            if deflects && matches!(e.other, ContactTarget::Link(_)) {
                let dot: f64 = e.velocity_after.iter().zip(&e.normal).map(|(v, n)| v * n).sum();
                assert!(dot >= 0.0, "{name}: {e:?}");
            }
        }
        if name == "no_hazard" {
            assert_eq!(sum.interventions, 0);
        }
    }
}
