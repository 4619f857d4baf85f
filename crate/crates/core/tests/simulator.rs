mod common;

use nalgebra::DVector;

use common::{close, scenario};
use replan::harness::Scenario;
use replan::ocp::SphereObstacle;
use replan::schemes::{Provenance, SchemeKind, UpdateOutcome};
use replan::simulator::{
    check_safety, environment, run, run_with, DelayModel, Environment, MismatchModel, Outcome, RunOptions, SimLog,
    TickRecord,
};
use replan::tracking::FeedbackGain;

fn nominal(name: &str, delay: DelayModel, duration: f64) -> Scenario {
    let mut sc = scenario(name);
    sc.mismatch = MismatchModel::default();
    sc.delay = delay;
    sc.duration = duration;
    sc
}

fn worst_tracking_error(log: &SimLog) -> f64 {
    log.ticks
        .iter()
        .map(|r| (&r.x_true - &r.x_ref).amax())
        .fold(0.0, f64::max)
}

#[test]
fn nominal_plant_follows_the_first_solution_exactly() {
    let sc = nominal("truck_straight", DelayModel::Deterministic { value: 0.0 }, 4.0);
    let log = run(&sc, SchemeKind::Asap, 3).unwrap();
    assert_eq!(log.outcome, Outcome::Completed);
    assert!(log.ticks.iter().all(|r| !r.clamped));
    let pos = log.position_indices();
    let worst = log
        .ticks
        .iter()
        .map(|r| {
            pos.iter()
                .map(|&i| (r.x_true[i] - r.x_ref[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn lur_matches_open_loop_asap_with_delta_delays() {
    let sc = nominal("truck_straight", DelayModel::Deterministic { value: 0.0 }, 4.0);
    let mut delayed = sc.clone();
    delayed.delay = DelayModel::Deterministic { value: sc.delta() };
    let lur = run(&sc, SchemeKind::Lur, 4).unwrap();
    let options = RunOptions {
        gain: Some(FeedbackGain::zero(sc.nx(), sc.nu())),
    };
    let asap = run_with(&delayed, SchemeKind::Asap, 4, &options).unwrap();
    assert_eq!(lur.ticks.len(), asap.ticks.len());
    let worst = lur
        .ticks
        .iter()
        .zip(&asap.ticks)
        .map(|(a, b)| (&a.x_true - &b.x_true).amax())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn input_gain_mismatch_separates_plant_from_plan() {
    let mut sc = nominal("truck_straight", DelayModel::Deterministic { value: 0.05 }, 4.0);
    sc.mismatch.input_gain = vec![1.1, 1.0];
    let log = run(&sc, SchemeKind::Lur, 3).unwrap();
    assert!(worst_tracking_error(&log) > 1e-3);
}

#[test]
fn identical_seeds_give_identical_logs() {
    let mut sc = scenario("truck_straight");
    sc.duration = 3.0;
    for kind in SchemeKind::ALL {
        if sc.validate_for(kind).is_err() {
            continue;
        }
        assert_eq!(run(&sc, kind, 7).unwrap(), run(&sc, kind, 7).unwrap(), "{kind}");
    }
    assert_ne!(
        run(&sc, SchemeKind::Asap, 7).unwrap(),
        run(&sc, SchemeKind::Asap, 8).unwrap()
    );
}

#[test]
fn ticks_fall_exactly_on_the_sample_grid() {
    let mut sc = scenario("truck_straight");
    sc.duration = 2.0;
    let log = run(&sc, SchemeKind::Asap, 1).unwrap();
    assert_eq!(log.ticks.len(), 101);
    for (i, r) in log.ticks.iter().enumerate() {
        assert_eq!(r.t, i as f64 * sc.scheme.ts);
    }
}

#[test]
fn delay_trace_stitches_at_hand_computed_times() {
    let mut sc = nominal(
        "truck_straight",
        DelayModel::Trace {
            values: vec![0.045, 0.045, 0.542],
        },
        2.0,
    );
    sc.scheme.m = 30;
    assert!(close(sc.delta(), 0.6));
    let log = run(&sc, SchemeKind::Asap, 0).unwrap();
    assert_eq!(log.outcome, Outcome::Completed);
    // Each cycle starts when the previous solve returns and switches one
    // update interval after its request.
    let expect = [(0.0, 0.6), (0.045, 0.645), (0.09, 0.69), (0.632, 1.232), (1.174, 1.774)];
    let online: Vec<_> = log.online_solves().collect();
    for (s, (req, sw)) in online.iter().zip(expect) {
        assert!((s.request_time - req).abs() < 1e-9, "{s:?}");
        assert_eq!(s.provenance, Provenance::OnTrajectory);
        if s.outcome == UpdateOutcome::Applied {
            assert!((s.switch_time.unwrap() - sw).abs() < 1e-9, "{s:?}");
            assert_eq!(s.state_jump, Some(0.0));
        }
    }
    assert!(online.len() >= expect.len());
}

#[test]
fn schemes_share_process_and_measurement_streams() {
    let mut sc = scenario("truck_straight");
    sc.duration = 2.0;
    sc.mismatch.process_noise = vec![1e-4; 4];
    let a = run(&sc, SchemeKind::Asap, 5).unwrap();
    let b = run(&sc, SchemeKind::Lur, 5).unwrap();
    assert_eq!(a.ticks.len(), b.ticks.len());
    assert_eq!(a.draws.process, b.draws.process);
    assert_eq!(a.draws.measurement, b.draws.measurement);
    assert_ne!(a.draws.delay, b.draws.delay);
    // The first measurement noise sample is the same draw in both runs.
    let n0 = |l: &SimLog| &l.ticks[0].x_meas - &l.ticks[0].x_true;
    assert_eq!(n0(&a), n0(&b));
}

fn tick_at(t: f64, x: DVector<f64>) -> TickRecord {
    let z4 = DVector::zeros(4);
    TickRecord {
        t,
        x_meas: x.clone(),
        x_ref: x.clone(),
        x_true: x,
        u_ff: z4.clone(),
        u_fb: z4.clone(),
        u_applied: z4,
        clamped: false,
        emergency: false,
    }
}

/// Brute-force minimum distance over a dense sample of each inflated sphere.
fn sampled_clearance(p: [f64; 3], o: &SphereObstacle, t: f64, vehicle_radius: f64) -> f64 {
    let c = o.center_after(t);
    let r = o.radius + vehicle_radius;
    let mut best = f64::INFINITY;
    for i in 0..=180 {
        let th = std::f64::consts::PI * i as f64 / 180.0;
        for j in 0..360 {
            let ph = 2.0 * std::f64::consts::PI * j as f64 / 360.0;
            let q = [
                c.x + r * th.sin() * ph.cos(),
                c.y + r * th.sin() * ph.sin(),
                c.z + r * th.cos(),
            ];
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    let inside = ((p[0] - c.x).powi(2) + (p[1] - c.y).powi(2) + (p[2] - c.z).powi(2)).sqrt() < r;
    if inside {
        -best
    } else {
        best
    }
}

#[test]
fn drone_starting_inside_an_obstacle_is_flagged_at_the_first_tick() {
    let sc = scenario("drone_cluttered");
    let o = SphereObstacle {
        center: [1.0, 0.5, 1.5],
        velocity: [0.2, 0.0, 0.0],
        radius: 0.4,
    };
    let env = Environment::Obstacles {
        obstacles: vec![o],
        vehicle_radius: sc.ocp.vehicle_radius,
    };
    let path = [[1.1, 0.5, 1.5], [1.0, 1.4, 1.5], [2.0, 0.5, 1.5], [1.5, 0.5, 2.4]];
    let ticks: Vec<TickRecord> = path
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut x = DVector::zeros(9);
            x.rows_mut(0, 3).copy_from_slice(p);
            tick_at(i as f64 * 0.5, x)
        })
        .collect();
    let mut log = run(
        &nominal("drone_cluttered", DelayModel::Deterministic { value: 0.05 }, 0.1),
        SchemeKind::Asap,
        0,
    )
    .unwrap();
    log.ticks = ticks;
    let report = check_safety(&log, &env);
    assert_eq!(report.violations.first(), Some(&0));
    for (i, p) in path.iter().enumerate() {
        let oracle = sampled_clearance(*p, &o, i as f64 * 0.5, sc.ocp.vehicle_radius);
        assert!(
            (report.clearance[i] - oracle).abs() < 0.02,
            "tick {i}: {} vs {oracle}",
            report.clearance[i]
        );
        assert_eq!(report.clearance[i] < 0.0, oracle < 0.0);
    }
}

#[test]
fn completed_runs_are_safe_in_their_own_environment() {
    let mut sc = scenario("truck_straight");
    sc.duration = 4.0;
    let log = run(&sc, SchemeKind::Asap, 2).unwrap();
    let report = check_safety(&log, &environment(&sc));
    assert!(report.is_safe(), "min clearance {}", report.min_clearance);
    assert!(report.min_clearance > 0.0);
}

#[test]
fn wall_clock_asap_runs_in_real_time() {
    let mut sc = scenario("truck_straight");
    sc.delay = DelayModel::Measured;
    sc.duration = 1.0;
    let started = std::time::Instant::now();
    let log = replan::simulator::run_wall_clock(&sc, 1).unwrap();
    // The loop paces itself to the sample period.
    assert!(started.elapsed().as_secs_f64() >= 0.9);
    assert_eq!(log.scheme, SchemeKind::Asap);
    assert!(!log.ticks.is_empty());
    for w in log.ticks.windows(2) {
        assert!(w[1].t > w[0].t);
    }
    for s in log.online_solves() {
        assert!(s.computation_time > 0.0);
        if s.outcome == UpdateOutcome::Applied {
            assert_eq!(s.state_jump, Some(0.0));
        }
    }
    // Measured delays have no meaning in virtual time.
    assert!(run(&sc, SchemeKind::Asap, 1).is_err());
}
