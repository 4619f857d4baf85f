use std::sync::Arc;

use nalgebra::DVector;

use super::delay::DelaySampler;
use crate::dynamics::{rk4_step, Dynamics, ModelId, Vehicle, VehicleParams};
use crate::harness::Scenario;
use crate::ocp::{
    assign_corridors, build_drone_ocp, build_tt_ocp, initial_assignment, resample_assignment, Corridor,
    CorridorAssignment, DecisionVector, DroneGoal, Footprint, Ocp, OcpError, OcpSpec, SphereObstacle,
    HYSTERESIS_MARGIN,
};
use crate::schemes::{PlannedTrajectory, SolveReply, SolveRequest, SolveService, SolveSummary};
use crate::solver::{solve, SolveResult, SolveStatus, SqpSettings};

/// A non-converged result is still used when it is dynamically consistent
/// and violates no constraint by more than this, m.
pub const ACCEPT_VIOLATION: f64 = 1e-3;
const ACCEPT_DEFECT: f64 = 1e-6;
/// Iteration budget multiplier for the solve before motion starts.
const OFFLINE_ITERATION_FACTOR: usize = 5;
/// Corridor reassignment rounds for the offline truck-trailer solve.
const OFFLINE_ASSIGNMENT_ROUNDS: usize = 8;

#[derive(Debug, Clone)]
enum World {
    Drone {
        obstacles: Vec<SphereObstacle>,
        goal: DroneGoal,
    },
    TruckTrailer {
        corridors: Vec<Corridor>,
        footprint: Footprint,
        goal: DVector<f64>,
        assignment: Option<(f64, CorridorAssignment)>,
    },
}

/// Builds, warm-starts and solves the horizon problem for solve requests.
#[derive(Debug, Clone)]
pub struct Planner {
    params: VehicleParams,
    model: Arc<Vehicle>,
    spec: OcpSpec,
    settings: SqpSettings,
    world: World,
    trim: DVector<f64>,
    last: Option<PlannedTrajectory>,
    pub delay: DelaySampler,
    /// Every solver result, in request order.
    pub results: Vec<SolveResult>,
}

impl Planner {
    pub fn new(scenario: &Scenario, delay: DelaySampler) -> Self {
        let id = scenario.model;
        let params = scenario.params.clone();
        let model = Arc::new(Vehicle::new(id, &params));
        let world = match id {
            ModelId::Drone => World::Drone {
                obstacles: scenario.obstacles.clone(),
                goal: scenario.drone_goal(),
            },
            ModelId::TruckTrailer => World::TruckTrailer {
                corridors: scenario.corridors.clone(),
                footprint: scenario.ocp.footprint(&params),
                goal: DVector::from_column_slice(&scenario.goal),
                assignment: None,
            },
        };
        Self {
            params,
            model,
            spec: scenario.ocp.clone(),
            settings: scenario.solver.clone(),
            world,
            trim: scenario.trim_input(),
            last: None,
            delay,
            results: Vec::new(),
        }
    }

    pub fn model(&self) -> Arc<Vehicle> {
        self.model.clone()
    }

    pub fn last_plan(&self) -> Option<&PlannedTrajectory> {
        self.last.as_ref()
    }

    /// Whether a solver result may be handed to the scheme.
    pub fn usable(r: &SolveResult, settings: &SqpSettings) -> bool {
        r.status == SolveStatus::Converged
            || (r.max_defect < ACCEPT_DEFECT
                && r.max_inequality_violation < ACCEPT_VIOLATION.max(settings.feasibility_tolerance))
    }

    fn warm_start(&self, t0: f64, x0: &DVector<f64>, n: usize, pinned: &[DVector<f64>]) -> DecisionVector {
        let dt = self.spec.dt;
        let model: &dyn Dynamics = self.model.as_ref();
        let mut states = vec![x0.clone()];
        let mut inputs = Vec::with_capacity(n);
        for k in 0..n {
            let tk = t0 + k as f64 * dt;
            let u = if k < pinned.len() {
                pinned[k].clone()
            } else {
                match &self.last {
                    Some(prev) if tk < prev.t_end() => prev.input_at(tk).expect("inside plan"),
                    Some(prev) => prev.inputs.last().expect("plans are non-empty").clone(),
                    None => self.trim.clone(),
                }
            };
            let t_next = tk + dt;
            let follow_prev = k + 1 > pinned.len();
            let next = match &self.last {
                Some(prev) if follow_prev && t_next >= prev.t0 && t_next <= prev.t_end() => {
                    prev.state_at(t_next).expect("inside plan")
                }
                _ => rk4_step(model, &states[k], &u, dt)
                    .ok()
                    .filter(|x| x.iter().all(|v| v.is_finite()))
                    .unwrap_or_else(|| states[k].clone()),
            };
            inputs.push(u);
            states.push(next);
        }
        DecisionVector::from_trajectory(&states, &inputs)
    }

    fn horizon_spec(&self, pinned: usize) -> OcpSpec {
        let mut spec = self.spec.clone();
        spec.n += pinned;
        spec.horizon = None;
        spec
    }

    fn build(
        &mut self,
        request_time: f64,
        t0: f64,
        x0: &DVector<f64>,
        spec: &OcpSpec,
        ws: &DecisionVector,
        fresh_assignment: bool,
    ) -> Result<Ocp, OcpError> {
        match &mut self.world {
            World::Drone { obstacles, goal } => {
                let seen: Vec<SphereObstacle> = obstacles.iter().map(|o| o.advanced(request_time)).collect();
                build_drone_ocp(x0, t0, &seen, request_time, goal, spec, &self.params)
            }
            World::TruckTrailer {
                corridors,
                footprint,
                goal,
                assignment,
            } => {
                let states = ws.states();
                let mut a = match assignment.as_ref().filter(|_| !fresh_assignment) {
                    Some((t_prev, prev)) => {
                        let carried = resample_assignment(prev, *t_prev, t0, spec.dt, spec.n);
                        assign_corridors(&states, corridors, &carried, footprint, HYSTERESIS_MARGIN).unwrap_or(carried)
                    }
                    None => {
                        let start = corridors
                            .iter()
                            .position(|c| footprint.margin_in(c, x0) >= 0.0)
                            .unwrap_or(0);
                        initial_assignment(&states, corridors, footprint, start, HYSTERESIS_MARGIN)
                    }
                };
                // The first node must hold the start footprint.
                let first = a.indices()[0];
                if footprint.margin_in(&corridors[first], x0) < 0.0 {
                    if let Some(better) =
                        (first + 1..corridors.len()).find(|&c| footprint.margin_in(&corridors[c], x0) >= 0.0)
                    {
                        a = CorridorAssignment::new(a.indices().iter().map(|&i| i.max(better)).collect())?;
                    }
                }
                let ocp = build_tt_ocp(x0, t0, corridors, &a, goal, spec, &self.params)?;
                *assignment = Some((t0, a));
                Ok(ocp)
            }
        }
    }

    fn run_solve(
        &mut self,
        request_time: f64,
        t0: f64,
        x0: &DVector<f64>,
        pinned: &[DVector<f64>],
        settings: &SqpSettings,
        fresh: bool,
    ) -> Result<SolveResult, String> {
        let spec = self.horizon_spec(pinned.len());
        let ws = self.warm_start(t0, x0, spec.n, pinned);
        let mut ocp = self
            .build(request_time, t0, x0, &spec, &ws, fresh)
            .map_err(|e| e.to_string())?;
        for (k, u) in pinned.iter().enumerate() {
            ocp.pinned[k] = Some(u.clone());
        }
        solve(&ocp, &ws, settings).map_err(|e| e.to_string())
    }

    fn finish(&mut self, t0: f64, r: &SolveResult) -> Result<PlannedTrajectory, String> {
        let plan = PlannedTrajectory::from_solution(t0, self.spec.dt, &r.solution)
            .map_err(|e| e.to_string())?
            .with_summary(SolveSummary::from(r));
        if !Self::usable(r, &self.settings) {
            return Err(format!(
                "solver returned {} (kkt {:.2e}, defect {:.2e}, violation {:.2e})",
                r.status, r.kkt_residual, r.max_defect, r.max_inequality_violation
            ));
        }
        self.last = Some(plan.clone());
        Ok(plan)
    }

    /// Plans from `x0` at `t0` with `pinned` leading inputs. Returns the plan
    /// or a description of why none is usable, plus the solver wall time.
    pub fn plan(
        &mut self,
        request_time: f64,
        t0: f64,
        x0: &DVector<f64>,
        pinned: &[DVector<f64>],
    ) -> (Result<PlannedTrajectory, String>, f64) {
        let settings = self.settings.clone();
        match self.run_solve(request_time, t0, x0, pinned, &settings, false) {
            Ok(r) => {
                let wall = r.wall_time;
                let out = self.finish(t0, &r);
                self.results.push(r);
                (out, wall)
            }
            Err(e) => (Err(e), 0.0),
        }
    }

    /// The solve before motion starts: a larger iteration budget and, for the
    /// truck-trailer, corridor reassignment until it settles.
    pub fn offline(&mut self, t0: f64, x0: &DVector<f64>) -> Result<PlannedTrajectory, String> {
        let mut settings = self.settings.clone();
        settings.max_iterations *= OFFLINE_ITERATION_FACTOR;
        let rounds = match self.world {
            World::Drone { .. } => 1,
            World::TruckTrailer { .. } => OFFLINE_ASSIGNMENT_ROUNDS,
        };
        let mut best = None;
        for round in 0..rounds {
            let before = self.assignment_indices();
            let r = self.run_solve(t0, t0, x0, &[], &settings, round == 0)?;
            let usable = Self::usable(&r, &settings);
            if usable {
                self.last =
                    Some(PlannedTrajectory::from_solution(t0, self.spec.dt, &r.solution).map_err(|e| e.to_string())?);
            }
            best = Some(r);
            if round > 0 && usable && before == self.next_assignment_preview(t0, x0) {
                break;
            }
        }
        let r = best.expect("at least one round");
        let out = self.finish(t0, &r);
        self.results.push(r);
        out
    }

    fn assignment_indices(&self) -> Option<Vec<usize>> {
        match &self.world {
            World::TruckTrailer { assignment, .. } => assignment.as_ref().map(|(_, a)| a.indices().to_vec()),
            World::Drone { .. } => None,
        }
    }

    /// Assignment the next solve at `t0` would use, without changing state.
    fn next_assignment_preview(&self, t0: f64, x0: &DVector<f64>) -> Option<Vec<usize>> {
        let World::TruckTrailer {
            corridors,
            footprint,
            assignment: Some((t_prev, prev)),
            ..
        } = &self.world
        else {
            return None;
        };
        let spec = &self.spec;
        let ws = self.warm_start(t0, x0, spec.n, &[]);
        let carried = resample_assignment(prev, *t_prev, t0, spec.dt, spec.n);
        let a = assign_corridors(&ws.states(), corridors, &carried, footprint, HYSTERESIS_MARGIN).unwrap_or(carried);
        Some(a.indices().to_vec())
    }
}

impl SolveService for Planner {
    fn solve(&mut self, req: &SolveRequest<'_>) -> SolveReply {
        let (trajectory, wall) = self.plan(req.request_time, req.plan_t0, req.x0, req.pinned);
        let computation_time = match self.delay.sample(Some(wall)) {
            Ok(t) => t,
            Err(e) => {
                return SolveReply {
                    trajectory: Err(e.to_string()),
                    computation_time: 0.0,
                }
            }
        };
        SolveReply {
            trajectory,
            computation_time,
        }
    }
}
