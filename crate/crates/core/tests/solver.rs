mod common;

use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;

use common::{cold_guess, dense_lq_oracle, scenario};
use replan::dynamics::DoubleIntegrator;
use replan::ocp::{build_tt_ocp, CorridorAssignment, DecisionVector, Ocp};
use replan::solver::{solve, SolverError, SqpSettings};

fn truck_problem() -> Ocp {
    let sc = scenario("truck_straight");
    let goal = DVector::from_column_slice(&sc.goal);
    let a = CorridorAssignment::uniform(0, sc.ocp.n + 1);
    build_tt_ocp(&sc.x0(), 0.0, &sc.corridors, &a, &goal, &sc.ocp, &sc.params).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unconstrained_lq_matches_the_dense_kkt_solution(
        n in 3usize..40,
        p0 in -3.0f64..3.0,
        v0 in -2.0f64..2.0,
        q in (0.01f64..10.0, 0.01f64..10.0),
        qf in (0.01f64..50.0, 0.01f64..50.0),
        r in 0.01f64..5.0,
        start in prop::collection::vec(-3.0f64..3.0, 3 * 41 + 2),
    ) {
        let mut ocp = Ocp::new(Arc::new(DoubleIntegrator), n, 0.1, 0.0, DVector::from_vec(vec![p0, v0]));
        ocp.cost.state_weight = DVector::from_vec(vec![q.0, q.1]);
        ocp.cost.terminal_weight = DVector::from_vec(vec![qf.0, qf.1]);
        ocp.cost.input_weight = DVector::from_vec(vec![r]);
        let oracle = dense_lq_oracle(&ocp);

        let cold = DecisionVector::zeros(ocp.layout());
        let mut warm = cold.clone();
        for (v, s) in warm.z.iter_mut().zip(&start) {
            *v = *s;
        }
        for z0 in [cold, warm] {
            let res = solve(&ocp, &z0, &SqpSettings::default()).unwrap();
            prop_assert!(res.is_converged(), "{:?}", res.status);
            for (k, u) in oracle.iter().enumerate() {
                prop_assert!((res.solution.input(k)[0] - u).abs() < 1e-6, "node {}", k);
            }
        }
    }
}

#[test]
fn accepted_steps_never_increase_the_merit() {
    let sc = scenario("truck_straight");
    let ocp = truck_problem();
    let r = solve(&ocp, &cold_guess(&ocp), &sc.solver).unwrap();
    assert!(r.is_converged());
    assert_eq!(r.merit_trace.len(), r.iterations);
    for (i, m) in r.merit_trace.iter().enumerate() {
        assert!(m.step > 0.0 && m.step <= 1.0);
        assert!(m.after <= m.before + 1e-13 * (1.0 + m.before.abs()), "step {i}: {m:?}");
    }
}

#[test]
fn rti_takes_exactly_one_step() {
    let ocp = truck_problem();
    let r = solve(&ocp, &cold_guess(&ocp), &SqpSettings::rti()).unwrap();
    assert_eq!(r.iterations, 1);
    assert_eq!(r.merit_trace.len(), 0);
}

#[test]
fn restarting_at_the_optimum_is_nearly_free() {
    let sc = scenario("truck_straight");
    let ocp = truck_problem();
    let first = solve(&ocp, &cold_guess(&ocp), &sc.solver).unwrap();
    assert!(first.is_converged());
    let again = solve(&ocp, &first.solution, &sc.solver).unwrap();
    assert!(again.is_converged());
    assert!(again.iterations <= 2, "{} iterations", again.iterations);
    assert!(again.iterations < first.iterations);
}

#[test]
fn pinned_inputs_are_left_untouched() {
    let sc = scenario("truck_straight");
    let mut ocp = truck_problem();
    let pin = DVector::from_vec(vec![0.3, -0.1]);
    ocp.pinned[0] = Some(pin.clone());
    ocp.pinned[1] = Some(pin.clone());
    let r = solve(&ocp, &cold_guess(&ocp), &sc.solver).unwrap();
    assert_eq!(r.solution.input(0), pin);
    assert_eq!(r.solution.input(1), pin);
    assert!(r.max_defect < 1e-6);
}

#[test]
fn bad_settings_are_rejected() {
    let ocp = truck_problem();
    let settings = SqpSettings {
        backtracking: 1.0,
        ..SqpSettings::default()
    };
    let err = solve(&ocp, &cold_guess(&ocp), &settings).unwrap_err();
    assert!(matches!(err, SolverError::Settings(_)));
}
