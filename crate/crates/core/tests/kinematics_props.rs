mod common;

use interdictor::kinematics::{constrained_null_basis, ee_jacobian, fk_unchecked, mass_matrix, numerical_rank, project_displacement, RobotModel};
use interdictor::planning::{solve_goal, STEP};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::sync::OnceLock;

fn model() -> &'static RobotModel {
    static M: OnceLock<RobotModel> = OnceLock::new();
    M.get_or_init(common::model)
}

/// Uniform configuration within limits, kept slightly inside them.
fn config() -> impl Strategy<Value = DVector<f64>> {
    let limits = model().coord_limits();
    proptest::collection::vec(0.02..0.98f64, limits.len())
        .prop_map(move |u| DVector::from_iterator(u.len(), u.iter().zip(&limits).map(|(u, [lo, hi])| lo + u * (hi - lo))))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn null_basis_is_orthonormal_and_annihilated(q in config()) {
        let m = model();
        let task = m.home_task(0.01).unwrap();
        let basis = constrained_null_basis(m, &q, &task).unwrap();
        let j = ee_jacobian(m, &q).unwrap();
        for k in 0..basis.ncols() {
            prop_assert!((&j * basis.column(k)).norm() <= 1e-8, "k {} of {}: {:e} rank {}", k, basis.ncols(), (&j * basis.column(k)).norm(), numerical_rank(&j));
        }
        let gram = basis.transpose() * &basis;
        prop_assert!((gram - DMatrix::identity(basis.ncols(), basis.ncols())).amax() <= 1e-10);
        prop_assert_eq!(basis.ncols() + numerical_rank(&j), m.dof());
    }

    #[test]
    fn mass_matrix_is_positive_definite(q in config()) {
        let a = mass_matrix(model(), &q).unwrap();
        prop_assert!(a.symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn small_projected_steps_keep_the_task(dir in proptest::collection::vec(-1.0..1.0f64, 9), scale in 0.0..=1.0f64) {
        let m = model();
        let task = m.home_task(0.01).unwrap();
        let q = solve_goal(m, &m.home, &task).unwrap();
        let mut dq = DVector::from_vec(dir);
        if dq.norm() > 0.0 {
            dq *= STEP * scale / dq.norm();
        }
        let d = project_displacement(m, &q, &dq, &task).unwrap();
        let err = (fk_unchecked(m, &(&q + &d)).ee - task.ee_goal).norm();
        prop_assert!(err <= task.epsilon, "end-effector off by {err}");
    }
}
