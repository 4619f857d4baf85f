//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use replan::dynamics::{integrate, rk4_step, DoubleIntegrator, Dynamics};
use replan::harness::Scenario;
use replan::ocp::{build_tt_ocp, CorridorAssignment, DecisionVector, Ocp};
use replan::schemes::{
    EmergencyStyle, PlannedTrajectory, Provenance, SchemeConfig, SchemeKind, SchemeState, SchemeStatus, SolveReply,
    SolveRequest, SolveService,
};
use replan::solver::{shift_warm_start, solve, SolveResult};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e:?}"))
}

/// `max |analytic − central difference|` over both Jacobians, relative to
/// the larger of one and the largest finite-difference entry.
pub fn jacobian_error(model: &dyn Dynamics, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let (a, b) = model.jacobians(x, u).expect("valid point");
    let fd = |wrt_x: bool| {
        let n = if wrt_x { x.len() } else { u.len() };
        let mut out = DMatrix::zeros(x.len(), n);
        for j in 0..n {
            let base = if wrt_x { x[j] } else { u[j] };
            let h = 1e-6 * (1.0 + base.abs());
            let eval = |s: f64| {
                let (mut xp, mut up) = (x.clone(), u.clone());
                if wrt_x {
                    xp[j] += s;
                } else {
                    up[j] += s;
                }
                model.ode(&xp, &up).expect("valid point")
            };
            out.set_column(j, &((eval(h) - eval(-h)) / (2.0 * h)));
        }
        out
    };
    let (fa, fb) = (fd(true), fd(false));
    let err = (&a - &fa).amax().max((&b - &fb).amax());
    err / fa.amax().max(fb.amax()).max(1.0)
}

pub fn random_drone_point(rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
    let mut x = DVector::zeros(9);
    for i in 0..6 {
        x[i] = rng.random_range(-3.0..3.0);
    }
    x[6] = rng.random_range(-1.2..1.2);
    x[7] = rng.random_range(-1.2..1.2);
    x[8] = rng.random_range(-3.1..3.1);
    let u = DVector::from_vec(vec![
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(2.0..18.0),
    ]);
    (x, u)
}

pub fn random_truck_point(rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
    let x = DVector::from_vec(vec![
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-3.1..3.1),
        rng.random_range(-3.1..3.1),
    ]);
    let u = DVector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
    (x, u)
}

/// `log2(err(h) / err(h/2))` of RK4 over one second against a grid 64 times
/// finer.
pub fn rk4_order(model: &dyn Dynamics, x: &DVector<f64>, u: &DVector<f64>, h: f64) -> f64 {
    let steps = (1.0 / h).round() as usize;
    let reference = integrate(model, x, u, 1.0, steps * 64).expect("integrates");
    let err = |k: usize| {
        let mut s = x.clone();
        let hk = 1.0 / k as f64;
        for _ in 0..k {
            s = rk4_step(model, &s, u, hk).expect("integrates");
        }
        (s - &reference).amax()
    };
    (err(steps) / err(2 * steps)).log2()
}

/// Plans are open-loop double-integrator rollouts of the pins followed by a
/// constant input; computation times follow `delays`, repeating the last one.
pub struct Scripted {
    pub delays: Vec<f64>,
    pub calls: usize,
}

impl Scripted {
    pub fn new(delays: &[f64]) -> Self {
        Self {
            delays: delays.to_vec(),
            calls: 0,
        }
    }
}

impl SolveService for Scripted {
    fn solve(&mut self, req: &SolveRequest<'_>) -> SolveReply {
        let t_c = self.delays[self.calls.min(self.delays.len() - 1)];
        self.calls += 1;
        let mut inputs: Vec<DVector<f64>> = req.pinned.to_vec();
        inputs.resize(60, DVector::from_vec(vec![0.5]));
        SolveReply {
            trajectory: PlannedTrajectory::from_rollout(&DoubleIntegrator, req.plan_t0, 0.1, req.x0, inputs)
                .map_err(|e| e.to_string()),
            computation_time: t_c,
        }
    }
}

pub fn scripted_scheme(kind: SchemeKind, m: usize) -> SchemeState {
    let inputs = (0..60)
        .map(|k| DVector::from_vec(vec![(k as f64 * 0.3).sin()]))
        .collect();
    let first =
        PlannedTrajectory::from_rollout(&DoubleIntegrator, 0.0, 0.1, &DVector::from_vec(vec![0.0, 1.0]), inputs)
            .expect("rollout");
    let x0 = first.states[0].clone();
    let config = SchemeConfig {
        kind,
        ts: 0.02,
        m,
        ocp_dt: 0.1,
        emergency: EmergencyStyle::Ramp { duration: 0.5 },
    };
    SchemeState::new(config, Arc::new(DoubleIntegrator), first, &x0).expect("valid scheme")
}

/// Runs `ticks` control ticks with the measurement equal to the reference.
pub fn drive(s: &mut SchemeState, svc: &mut Scripted, ticks: u64) {
    for i in 0..ticks {
        let t = i as f64 * s.config.ts;
        s.advance(t, svc).expect("advance");
        if matches!(s.status, SchemeStatus::Failed { .. }) {
            return;
        }
        let x = s.reference.state_at(t).unwrap_or_else(|_| DVector::zeros(2));
        s.tick(t, &x, svc).expect("tick");
    }
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

/// `(request_time, switch_time, provenance)` of the online updates.
pub fn timeline(s: &SchemeState) -> Vec<(f64, Option<f64>, Provenance)> {
    s.online_updates()
        .map(|u| (u.request_time, u.switch_time, u.provenance))
        .collect()
}

/// Dense KKT solve of the double-integrator LQ problem with the exact
/// zero-order-hold discretization; returns the stacked inputs.
pub fn dense_lq_oracle(ocp: &Ocp) -> Vec<f64> {
    let (n, h) = (ocp.n, ocp.dt);
    let nz = 2 * (n + 1) + n;
    let ne = 2 * (n + 1);
    let xi = |k: usize| 2 * k;
    let ui = |k: usize| 2 * (n + 1) + k;
    let mut kkt = DMatrix::<f64>::zeros(nz + ne, nz + ne);
    let mut rhs = DVector::<f64>::zeros(nz + ne);
    for k in 0..=n {
        let w = if k == n {
            &ocp.cost.terminal_weight
        } else {
            &ocp.cost.state_weight
        };
        for i in 0..2 {
            kkt[(xi(k) + i, xi(k) + i)] = w[i];
        }
        if k < n {
            kkt[(ui(k), ui(k))] = ocp.cost.input_weight[0];
        }
    }
    let mut put = |row: usize, col: usize, v: f64| {
        kkt[(nz + row, col)] = v;
        kkt[(col, nz + row)] = v;
    };
    for i in 0..2 {
        put(i, xi(0) + i, 1.0);
    }
    rhs[nz] = ocp.x0[0];
    rhs[nz + 1] = ocp.x0[1];
    for k in 0..n {
        let r = 2 * (k + 1);
        // x_{k+1} − A x_k − B u_k = 0
        put(r, xi(k + 1), 1.0);
        put(r, xi(k), -1.0);
        put(r, xi(k) + 1, -h);
        put(r, ui(k), -0.5 * h * h);
        put(r + 1, xi(k + 1) + 1, 1.0);
        put(r + 1, xi(k) + 1, -1.0);
        put(r + 1, ui(k), -h);
    }
    let sol = kkt.lu().solve(&rhs).expect("nonsingular KKT");
    (0..n).map(|k| sol[ui(k)]).collect()
}

/// Single fixed-time truck-trailer problem whose nodes switch from the first
/// corridor to the second at `switch`.
pub struct CorridorSwitch {
    pub scenario: Scenario,
    pub switch: usize,
    pub assignment: CorridorAssignment,
    pub ocp: Ocp,
    pub converged: SolveResult,
}

pub fn switch_assignment(n: usize, switch: usize) -> CorridorAssignment {
    CorridorAssignment::new((0..=n).map(|k| usize::from(k >= switch)).collect()).expect("monotone")
}

pub fn cold_guess(ocp: &Ocp) -> DecisionVector {
    ocp.rollout_guess(&vec![DVector::zeros(ocp.model.nu()); ocp.n])
        .expect("rollout")
}

/// Picks the switch node (even nodes only) whose converged cold solve has
/// the lowest objective.
pub fn corridor_switch() -> CorridorSwitch {
    let sc = scenario("truck_corridor_switch");
    let n = sc.ocp.n;
    let goal = DVector::from_column_slice(&sc.goal);
    let mut best: Option<CorridorSwitch> = None;
    for switch in (2..=n).step_by(2) {
        let assignment = switch_assignment(n, switch);
        let ocp = build_tt_ocp(&sc.x0(), 0.0, &sc.corridors, &assignment, &goal, &sc.ocp, &sc.params)
            .expect("problem builds");
        let r = solve(&ocp, &cold_guess(&ocp), &sc.solver).expect("solver runs");
        if !r.is_converged() || best.as_ref().is_some_and(|b| b.converged.objective <= r.objective) {
            continue;
        }
        best = Some(CorridorSwitch {
            scenario: sc.clone(),
            switch,
            assignment,
            ocp,
            converged: r,
        });
    }
    best.expect("some switch node gives a converged solve")
}

/// Largest distance by which a footprint point leaves its assigned corridor,
/// without the safety margin; negative when everything is inside.
pub fn containment_violation(cs: &CorridorSwitch, z: &DecisionVector) -> f64 {
    let fp = cs.scenario.ocp.footprint(&cs.scenario.params);
    (0..=cs.ocp.n)
        .map(|k| -fp.margin_in(&cs.scenario.corridors[cs.assignment.indices()[k]], &z.state(k)))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Iteration counts of warm- and cold-started solves on `count` successive
/// problems that start one node further along the converged plan.
pub fn warm_and_cold_iterations(cs: &CorridorSwitch, count: usize) -> (Vec<SolveResult>, Vec<SolveResult>) {
    let sc = &cs.scenario;
    let (n, dt) = (sc.ocp.n, sc.ocp.dt);
    let goal = DVector::from_column_slice(&sc.goal);
    let mut prev = cs.converged.solution.clone();
    let (mut warm, mut cold) = (Vec::new(), Vec::new());
    for j in 1..=count {
        let x0 = cs.converged.solution.state(j);
        let assignment = switch_assignment(n, cs.switch.saturating_sub(j));
        let ocp = build_tt_ocp(
            &x0,
            j as f64 * dt,
            &sc.corridors,
            &assignment,
            &goal,
            &sc.ocp,
            &sc.params,
        )
        .expect("problem builds");
        let mut ws = shift_warm_start(&prev, 1, ocp.model.as_ref(), dt).expect("shift");
        ws.set_state(0, &x0);
        let w = solve(&ocp, &ws, &sc.solver).expect("solver runs");
        let c = solve(&ocp, &cold_guess(&ocp), &sc.solver).expect("solver runs");
        prev = w.solution.clone();
        warm.push(w);
        cold.push(c);
    }
    (warm, cold)
}

pub fn median(v: &[usize]) -> f64 {
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2]) as f64
    }
}
