use interdictor::geometry::GaussianBelief;
use interdictor::prediction::{instantaneous_probability, predict_series, PredictionConfig};
use interdictor::tracking::KalmanConfig;
use nalgebra::{DMatrix, DVector, Matrix3};
use proptest::prelude::*;

fn state(p: [f64; 3], v: [f64; 3], pos_var: f64, vel_var: f64) -> GaussianBelief {
    let mean: Vec<f64> = p.iter().chain(&v).copied().collect();
    let diag = DVector::from_fn(6, |k, _| if k < 3 { pos_var } else { vel_var });
    GaussianBelief::new(DVector::from_vec(mean), DMatrix::from_diagonal(&diag)).unwrap()
}

fn arr(r: f64) -> impl Strategy<Value = [f64; 3]> {
    proptest::array::uniform3(-r..r)
}

fn short_horizon() -> PredictionConfig {
    PredictionConfig {
        horizon: 1.0,
        t_th: 1.0,
        ..PredictionConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cumulative_series_is_monotone_and_bounded(
        pi in arr(1.5), vi in arr(1.5), pj in arr(1.5), vj in arr(1.5),
        pos_var in 1e-4..0.05f64, vel_var in 1e-4..0.5f64, ri in 0.02..0.3f64, rj in 0.02..0.3f64,
    ) {
        let (bi, bj) = (state(pi, vi, pos_var, vel_var), state(pj, vj, pos_var, vel_var));
        let Ok((p_ic, p_ac)) = predict_series(&bi, &bj, ri, rj, &short_horizon(), &KalmanConfig::default()) else {
            // Starting in certain overlap is rejected rather than predicted.
            return Ok(());
        };
        prop_assert_eq!(p_ic.len(), p_ac.len());
        for w in p_ac.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        prop_assert!(p_ac.iter().chain(&p_ic).all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn instantaneous_probability_is_symmetric(mi in arr(1.0), mj in arr(1.0), si in 1e-3..0.5f64, sj in 1e-3..0.5f64, ri in 0.0..0.5f64, rj in 0.0..0.5f64) {
        let bi = GaussianBelief::point3(mi.into(), Matrix3::identity() * si).unwrap();
        let bj = GaussianBelief::point3(mj.into(), Matrix3::identity() * sj).unwrap();
        let a = instantaneous_probability(&bi, &bj, ri, rj).unwrap();
        let b = instantaneous_probability(&bj, &bi, rj, ri).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn noiseless_parallel_tracks_never_collide() {
    let kcfg = KalmanConfig::noiseless(0.033);
    let bi = state([0.0, -1.0, 0.0], [0.0, 1.0, 0.0], 0.0, 0.0);
    let bj = state([1.0, -1.0, 0.0], [0.0, 1.0, 0.0], 0.0, 0.0);
    let (p_ic, p_ac) = predict_series(&bi, &bj, 0.2, 0.2, &PredictionConfig::default(), &kcfg).unwrap();
    assert!(p_ic.iter().chain(&p_ac).all(|&p| p == 0.0));
}
