//! Replanning schemes: when solves are requested, from which initial state,
//! and how finished plans enter the reference handed to the tracker.
//!
//! All four schemes share one event model. A request launches a solve whose
//! result becomes visible at `request_time + t_c`; a solve that has not
//! finished by its deadline is a breach. Events at the same instant are
//! handled before the control tick at that instant.

mod trajectory;

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{rk4_step, Dynamics, DynamicsError};

pub use trajectory::{ActiveReference, PlannedTrajectory, ReferenceError, ReferenceSample, SolveSummary, TIME_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Fur,
    Lur,
    Asap,
    NaiveStitch,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::Fur,
        SchemeKind::Lur,
        SchemeKind::Asap,
        SchemeKind::NaiveStitch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Fur => "fur",
            SchemeKind::Lur => "lur",
            SchemeKind::Asap => "asap",
            SchemeKind::NaiveStitch => "naive_stitch",
        }
    }

    /// Whether the tracker adds state feedback to the feedforward input.
    pub fn uses_feedback(self) -> bool {
        matches!(self, SchemeKind::Asap | SchemeKind::NaiveStitch)
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fur" => Ok(SchemeKind::Fur),
            "lur" => Ok(SchemeKind::Lur),
            "asap" => Ok(SchemeKind::Asap),
            "naive_stitch" | "naive" => Ok(SchemeKind::NaiveStitch),
            other => Err(format!(
                "unknown scheme '{other}', expected fur, lur, asap or naive_stitch"
            )),
        }
    }
}

/// Where the initial state of a solve came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Measured,
    OneStepPredicted,
    OnTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOutcome {
    Pending,
    Applied,
    Failed,
    DeadlineMiss,
    Abandoned,
}

/// One solve request and what became of it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanUpdate {
    pub request_time: f64,
    pub plan_t0: f64,
    pub provenance: Provenance,
    pub initial_state: DVector<f64>,
    pub computation_time: f64,
    pub deadline: f64,
    pub switch_time: Option<f64>,
    /// State jump of the reference at the switch (incoming minus outgoing).
    pub jump: Option<DVector<f64>>,
    pub outcome: UpdateOutcome,
    pub summary: Option<SolveSummary>,
    pub error: Option<String>,
    /// The initial solve before motion starts.
    pub offline: bool,
}

impl PlanUpdate {
    pub fn completion_time(&self) -> f64 {
        self.request_time + self.computation_time
    }
}

pub struct SolveRequest<'a> {
    pub request_time: f64,
    pub plan_t0: f64,
    pub x0: &'a DVector<f64>,
    /// Inputs fixed on the first intervals of the new plan.
    pub pinned: &'a [DVector<f64>],
    pub provenance: Provenance,
}

pub struct SolveReply {
    pub trajectory: Result<PlannedTrajectory, String>,
    pub computation_time: f64,
}

/// Produces plans and their computation times.
pub trait SolveService {
    fn solve(&mut self, request: &SolveRequest<'_>) -> SolveReply;
}

/// Model-specific terminal behavior after a breach.
#[derive(Debug, Clone, PartialEq)]
pub enum EmergencyStyle {
    /// Hold the end state of the active plan with `zeroed` components set to
    /// zero, using `trim` as feedforward.
    Hover { trim: DVector<f64>, zeroed: Vec<usize> },
    /// Ramp the feedforward input linearly to zero.
    Ramp { duration: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmergencyPolicy {
    Hover {
        setpoint: DVector<f64>,
        trim: DVector<f64>,
    },
    Ramp {
        start: f64,
        from: DVector<f64>,
        duration: f64,
        hold: DVector<f64>,
    },
}

impl EmergencyPolicy {
    /// Policy for a breach at `t` while following `reference`.
    pub fn for_reference(style: &EmergencyStyle, reference: &ActiveReference, t: f64) -> Self {
        let seg = reference.segment_at(t);
        let last_state = seg.states.last().expect("plans are non-empty").clone();
        let state_now = seg.state_at(t).unwrap_or_else(|_| last_state.clone());
        let input_now = seg
            .input_at(t)
            .unwrap_or_else(|_| seg.inputs.last().expect("plans are non-empty").clone());
        match style {
            EmergencyStyle::Hover { trim, zeroed } => {
                let mut setpoint = last_state;
                for &i in zeroed {
                    setpoint[i] = 0.0;
                }
                EmergencyPolicy::Hover {
                    setpoint,
                    trim: trim.clone(),
                }
            }
            EmergencyStyle::Ramp { duration } => EmergencyPolicy::Ramp {
                start: t,
                from: input_now,
                duration: *duration,
                hold: state_now,
            },
        }
    }

    pub fn command(&self, t: f64) -> TickCommand {
        match self {
            EmergencyPolicy::Hover { setpoint, trim } => TickCommand {
                reference: ReferenceSample {
                    state: setpoint.clone(),
                    input: trim.clone(),
                },
                feedback: true,
                emergency: true,
            },
            EmergencyPolicy::Ramp {
                start,
                from,
                duration,
                hold,
            } => {
                let remaining = 1.0 - (t - start) / duration;
                let input = if remaining <= 0.0 {
                    DVector::zeros(from.len())
                } else {
                    from * remaining.min(1.0)
                };
                TickCommand {
                    reference: ReferenceSample {
                        state: hold.clone(),
                        input,
                    },
                    feedback: false,
                    emergency: true,
                }
            }
        }
    }
}

/// What the tracker should follow at a tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickCommand {
    pub reference: ReferenceSample,
    pub feedback: bool,
    pub emergency: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub ts: f64,
    pub m: usize,
    /// Node spacing of the plans; LUR pins whole intervals.
    pub ocp_dt: f64,
    pub emergency: EmergencyStyle,
}

impl SchemeConfig {
    pub fn delta(&self) -> f64 {
        self.m as f64 * self.ts
    }

    /// Number of plan intervals covered by one LUR update period.
    pub fn pinned_intervals(&self) -> usize {
        (self.delta() / self.ocp_dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        let bad = |m: String| Err(SchemeError::Config(m));
        if !(self.ts > 0.0) {
            return bad(format!("T_s must be positive, got {}", self.ts));
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if !(self.ocp_dt > 0.0) {
            return bad(format!("plan step must be positive, got {}", self.ocp_dt));
        }
        if self.kind == SchemeKind::Lur {
            let ratio = self.delta() / self.ocp_dt;
            if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
                return bad(format!(
                    "LUR needs m·T_s = {} to be a multiple of the plan step {}",
                    self.delta(),
                    self.ocp_dt
                ));
            }
        }
        if let EmergencyStyle::Ramp { duration } = self.emergency {
            if !(duration > 0.0) {
                return bad("emergency ramp duration must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    DeadlineMiss,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SchemeStatus {
    Running,
    Emergency { time: f64, policy: EmergencyPolicy },
    Failed { time: f64, reason: FailureReason },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemeError {
    #[error("invalid scheme configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("a solve is already pending")]
    PendingSolve,
    #[error("scheme has terminated")]
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SwitchRule {
    Stitch(f64),
    At(f64),
    AtCompletion,
}

#[derive(Debug, Clone)]
struct Pending {
    update: usize,
    completion: f64,
    deadline: f64,
    rule: SwitchRule,
    x0: DVector<f64>,
    trajectory: Result<PlannedTrajectory, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Completion,
    Breach,
    Cycle,
}

/// Runtime state of one scheme controlling one vehicle.
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub config: SchemeConfig,
    model: Arc<dyn Dynamics>,
    /// Control ticks processed so far.
    pub tick_index: u64,
    /// Solve cycles launched so far, including the offline one.
    pub cycles: u64,
    pub reference: ActiveReference,
    pub updates: Vec<PlanUpdate>,
    pub status: SchemeStatus,
    pending: Option<Pending>,
    next_cycle: Option<f64>,
    next_request: f64,
}

impl SchemeState {
    /// Starts a scheme from a plan computed before motion starts from `x0`.
    pub fn new(
        config: SchemeConfig,
        model: Arc<dyn Dynamics>,
        first: PlannedTrajectory,
        x0: &DVector<f64>,
    ) -> Result<Self, SchemeError> {
        config.validate()?;
        let start = first.t0;
        let summary = first.summary;
        let offline = PlanUpdate {
            request_time: start,
            plan_t0: start,
            provenance: Provenance::Measured,
            initial_state: x0.clone(),
            computation_time: 0.0,
            deadline: start,
            switch_time: Some(start),
            jump: None,
            outcome: UpdateOutcome::Applied,
            summary,
            error: None,
            offline: true,
        };
        Ok(Self {
            next_cycle: (config.kind == SchemeKind::Asap).then_some(start),
            config,
            model,
            tick_index: 0,
            cycles: 1,
            reference: ActiveReference::new(first),
            updates: vec![offline],
            status: SchemeStatus::Running,
            pending: None,
            next_request: start,
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.config.kind
    }

    pub fn delta(&self) -> f64 {
        self.config.delta()
    }

    /// Position `k` of the current tick inside its update period.
    pub fn k(&self) -> u64 {
        self.tick_index % self.config.m as u64
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    pub fn is_running(&self) -> bool {
        self.status == SchemeStatus::Running
    }

    fn next_event(&self) -> Option<(f64, Event)> {
        if !self.is_running() {
            return None;
        }
        if let Some(p) = &self.pending {
            return Some(if p.completion <= p.deadline + TIME_EPS {
                (p.completion, Event::Completion)
            } else {
                (p.deadline, Event::Breach)
            });
        }
        self.next_cycle.map(|t| (t, Event::Cycle))
    }

    /// Time of the next internal event, if any.
    pub fn next_event_time(&self) -> Option<f64> {
        self.next_event().map(|e| e.0)
    }

    /// Handles every completion, breach and ASAP cycle start up to `t`.
    pub fn advance(&mut self, t: f64, svc: &mut dyn SolveService) -> Result<(), SchemeError> {
        while let Some((te, ev)) = self.next_event() {
            if te > t + TIME_EPS {
                break;
            }
            match ev {
                Event::Completion => self.complete()?,
                Event::Breach => self.breach(),
                Event::Cycle => match self.asap_update_cycle(te, svc) {
                    // The cycle has already switched to the emergency policy.
                    Err(SchemeError::Reference(ReferenceError::Exhausted { .. })) => {}
                    other => other?,
                },
            }
        }
        Ok(())
    }

    fn launch(
        &mut self,
        svc: &mut dyn SolveService,
        request_time: f64,
        plan_t0: f64,
        x0: DVector<f64>,
        pinned: &[DVector<f64>],
        provenance: Provenance,
        deadline: f64,
        rule: SwitchRule,
    ) -> Result<(), SchemeError> {
        if self.pending.is_some() {
            return Err(SchemeError::PendingSolve);
        }
        let reply = svc.solve(&SolveRequest {
            request_time,
            plan_t0,
            x0: &x0,
            pinned,
            provenance,
        });
        let t_c = reply.computation_time.max(0.0);
        let summary = reply.trajectory.as_ref().ok().and_then(|p| p.summary);
        self.updates.push(PlanUpdate {
            request_time,
            plan_t0,
            provenance,
            initial_state: x0.clone(),
            computation_time: t_c,
            deadline,
            switch_time: None,
            jump: None,
            outcome: UpdateOutcome::Pending,
            summary,
            error: reply.trajectory.as_ref().err().cloned(),
            offline: false,
        });
        self.pending = Some(Pending {
            update: self.updates.len() - 1,
            completion: request_time + t_c,
            deadline,
            rule,
            x0,
            trajectory: reply.trajectory,
        });
        self.cycles += 1;
        Ok(())
    }

    fn complete(&mut self) -> Result<(), SchemeError> {
        let p = self.pending.take().expect("completion without pending solve");
        let update = &self.updates[p.update];
        let (request, t_c) = (update.request_time, update.computation_time);
        match p.trajectory {
            Err(_) => self.updates[p.update].outcome = UpdateOutcome::Failed,
            Ok(mut traj) => {
                // The plan starts exactly at the requested state; the solver
                // only guarantees it to the defect tolerance.
                traj.states[0] = p.x0.clone();
                let (time, jump) = match p.rule {
                    SwitchRule::Stitch(ts) => {
                        let state = traj.state_at(ts)?;
                        self.reference.stitch(ts, traj)?;
                        (ts, DVector::zeros(state.len()))
                    }
                    SwitchRule::At(ts) => (ts, self.reference.switch_to(ts, traj)?),
                    SwitchRule::AtCompletion => (p.completion, self.reference.switch_to(p.completion, traj)?),
                };
                let u = &mut self.updates[p.update];
                u.outcome = UpdateOutcome::Applied;
                u.switch_time = Some(time);
                u.jump = Some(jump);
            }
        }
        match self.config.kind {
            SchemeKind::Asap => {
                self.next_cycle = Some(if t_c < TIME_EPS {
                    request + self.config.ts
                } else {
                    p.completion
                });
            }
            SchemeKind::NaiveStitch => self.next_request = p.completion,
            _ => {}
        }
        Ok(())
    }

    fn breach(&mut self) {
        let p = self.pending.take().expect("breach without pending solve");
        self.updates[p.update].outcome = UpdateOutcome::DeadlineMiss;
        match self.config.kind {
            SchemeKind::Fur | SchemeKind::Lur => {
                self.status = SchemeStatus::Failed {
                    time: p.deadline,
                    reason: FailureReason::DeadlineMiss,
                };
            }
            SchemeKind::Asap | SchemeKind::NaiveStitch => self.enter_emergency(p.deadline),
        }
    }

    fn enter_emergency(&mut self, t: f64) {
        if let Some(p) = self.pending.take() {
            self.updates[p.update].outcome = UpdateOutcome::Abandoned;
        }
        self.next_cycle = None;
        let policy = self.emergency_reaction(t);
        self.status = SchemeStatus::Emergency { time: t, policy };
    }

    /// Terminal policy after a breach at `t`.
    pub fn emergency_reaction(&self, t: f64) -> EmergencyPolicy {
        EmergencyPolicy::for_reference(&self.config.emergency, &self.reference, t)
    }

    fn command(&self, t: f64) -> Result<TickCommand, SchemeError> {
        Ok(TickCommand {
            reference: self.reference.sample(t)?,
            feedback: self.config.kind.uses_feedback(),
            emergency: false,
        })
    }

    /// Full update rate: follow the plan that starts at `t` and request the
    /// next one from the one-step prediction of the measured state.
    pub fn fur_tick(
        &mut self,
        t: f64,
        x_meas: &DVector<f64>,
        svc: &mut dyn SolveService,
    ) -> Result<TickCommand, SchemeError> {
        if self.pending.is_some() {
            return Err(SchemeError::PendingSolve);
        }
        let cmd = self.command(t)?;
        let ts = self.config.ts;
        let x_hat = rk4_step(self.model.as_ref(), x_meas, &cmd.reference.input, ts)?;
        let next = t + ts;
        self.launch(
            svc,
            t,
            next,
            x_hat,
            &[],
            Provenance::OneStepPredicted,
            next,
            SwitchRule::At(next),
        )?;
        Ok(cmd)
    }

    /// Low update rate: every δt, solve from the measurement with the inputs
    /// of the coming period pinned, and apply them open loop.
    pub fn lur_tick(
        &mut self,
        t: f64,
        x_meas: &DVector<f64>,
        svc: &mut dyn SolveService,
    ) -> Result<TickCommand, SchemeError> {
        if self.k() == 0 {
            if self.pending.is_some() {
                return Err(SchemeError::PendingSolve);
            }
            let dt = self.config.ocp_dt;
            let pins = (0..self.config.pinned_intervals())
                .map(|j| self.reference.input_at(t + j as f64 * dt))
                .collect::<Result<Vec<_>, _>>()?;
            let switch = t + self.delta();
            self.launch(
                svc,
                t,
                t,
                x_meas.clone(),
                &pins,
                Provenance::Measured,
                switch,
                SwitchRule::At(switch),
            )?;
        }
        self.command(t)
    }

    /// Starts an ASAP cycle at `t`: predict from the reference at `t + δt`,
    /// solve, and stitch there.
    pub fn asap_update_cycle(&mut self, t: f64, svc: &mut dyn SolveService) -> Result<(), SchemeError> {
        self.next_cycle = None;
        let switch = t + self.delta();
        let x_hat = match self.reference.state_at(switch) {
            Ok(x) => x,
            Err(e) => {
                self.enter_emergency(t);
                return Err(e.into());
            }
        };
        self.launch(
            svc,
            t,
            switch,
            x_hat,
            &[],
            Provenance::OnTrajectory,
            switch,
            SwitchRule::Stitch(switch),
        )
    }

    /// Naive stitching: solve from the measurement and switch to the result
    /// the moment it arrives.
    pub fn naive_stitch_tick(
        &mut self,
        t: f64,
        x_meas: &DVector<f64>,
        svc: &mut dyn SolveService,
    ) -> Result<TickCommand, SchemeError> {
        if self.pending.is_none() && t >= self.next_request - TIME_EPS {
            self.launch(
                svc,
                t,
                t,
                x_meas.clone(),
                &[],
                Provenance::Measured,
                t + self.delta(),
                SwitchRule::AtCompletion,
            )?;
        }
        self.command(t)
    }

    /// One control tick at `t`. Pending events up to `t` must have been
    /// handled with [`SchemeState::advance`].
    pub fn tick(
        &mut self,
        t: f64,
        x_meas: &DVector<f64>,
        svc: &mut dyn SolveService,
    ) -> Result<TickCommand, SchemeError> {
        let out = match &self.status {
            SchemeStatus::Failed { .. } => return Err(SchemeError::Terminated),
            SchemeStatus::Emergency { policy, .. } => Ok(policy.command(t)),
            SchemeStatus::Running => {
                let res = match self.config.kind {
                    SchemeKind::Fur => self.fur_tick(t, x_meas, svc),
                    SchemeKind::Lur => self.lur_tick(t, x_meas, svc),
                    SchemeKind::Asap => self.command(t),
                    SchemeKind::NaiveStitch => self.naive_stitch_tick(t, x_meas, svc),
                };
                match res {
                    Err(SchemeError::Reference(ReferenceError::Exhausted { .. })) => {
                        self.enter_emergency(t);
                        match &self.status {
                            SchemeStatus::Emergency { policy, .. } => Ok(policy.command(t)),
                            _ => unreachable!(),
                        }
                    }
                    other => other,
                }
            }
        };
        self.tick_index += 1;
        self.reference.prune(t);
        out
    }

    /// Solve requests after the offline one.
    pub fn online_updates(&self) -> impl Iterator<Item = &PlanUpdate> {
        self.updates.iter().filter(|u| !u.offline)
    }
}
