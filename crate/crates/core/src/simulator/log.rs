use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::ModelId;
use crate::schemes::{PlanUpdate, Provenance, SchemeKind, UpdateOutcome};
use crate::solver::SolveStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    DeadlineMiss,
    Emergency,
    Collision,
    Jackknife,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::DeadlineMiss => "deadline_miss",
            Outcome::Emergency => "emergency",
            Outcome::Collision => "collision",
            Outcome::Jackknife => "jackknife",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub x_true: DVector<f64>,
    pub x_meas: DVector<f64>,
    pub x_ref: DVector<f64>,
    pub u_ff: DVector<f64>,
    pub u_fb: DVector<f64>,
    pub u_applied: DVector<f64>,
    pub clamped: bool,
    pub emergency: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveRecord {
    pub request_time: f64,
    pub plan_t0: f64,
    pub provenance: Provenance,
    pub start_state: DVector<f64>,
    pub computation_time: f64,
    pub outcome: UpdateOutcome,
    pub status: Option<SolveStatus>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub switch_time: Option<f64>,
    /// ‖Δx‖_∞ of the reference at the switch, over the full state.
    pub state_jump: Option<f64>,
    /// ‖Δp‖ of the reference at the switch.
    pub position_jump: Option<f64>,
    /// Signed horizontal jump perpendicular to the direction of travel.
    pub lateral_jump: Option<f64>,
    pub offline: bool,
}

impl SolveRecord {
    pub fn from_update(u: &PlanUpdate, position: &[usize], heading: Heading) -> Self {
        let jump = u.jump.as_ref().filter(|j| j.iter().all(|v| v.is_finite()));
        let position_jump = jump.map(|j| position.iter().map(|&i| j[i] * j[i]).sum::<f64>().sqrt());
        let lateral_jump = jump.and_then(|j| {
            let (cx, cy) = heading.direction(&u.initial_state)?;
            Some(-cy * j[position[0]] + cx * j[position[1]])
        });
        Self {
            request_time: u.request_time,
            plan_t0: u.plan_t0,
            provenance: u.provenance,
            start_state: u.initial_state.clone(),
            computation_time: u.computation_time,
            outcome: u.outcome,
            status: u.summary.map(|s| s.status),
            iterations: u.summary.map(|s| s.iterations).unwrap_or(0),
            kkt_residual: u.summary.map(|s| s.kkt_residual).unwrap_or(f64::NAN),
            max_violation: u.summary.map(|s| s.max_inequality_violation).unwrap_or(f64::NAN),
            switch_time: u.switch_time,
            state_jump: jump.map(|j| j.amax()),
            position_jump,
            lateral_jump,
            offline: u.offline,
        }
    }
}

/// How the direction of travel is read from a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Heading {
    /// Horizontal velocity components.
    Velocity(usize, usize),
    /// Heading angle.
    Angle(usize),
}

impl Heading {
    pub fn for_model(id: ModelId) -> Self {
        match id {
            ModelId::Drone => Heading::Velocity(3, 4),
            ModelId::TruckTrailer => Heading::Angle(2),
        }
    }

    /// Unit direction, if defined.
    pub fn direction(self, x: &DVector<f64>) -> Option<(f64, f64)> {
        match self {
            Heading::Velocity(i, j) => {
                let n = x[i].hypot(x[j]);
                (n > 1e-6).then(|| (x[i] / n, x[j] / n))
            }
            Heading::Angle(i) => {
                let (s, c) = x[i].sin_cos();
                Some((c, s))
            }
        }
    }
}

/// Random numbers consumed per stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamDraws {
    pub process: u64,
    pub measurement: u64,
    pub delay: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub scenario: String,
    pub scheme: SchemeKind,
    pub model: ModelId,
    pub ts: f64,
    pub delta: f64,
    pub seed: u64,
    pub ticks: Vec<TickRecord>,
    pub solves: Vec<SolveRecord>,
    pub outcome: Outcome,
    pub outcome_time: f64,
    pub draws: StreamDraws,
}

impl SimLog {
    pub fn position_indices(&self) -> &'static [usize] {
        position_indices(self.model)
    }

    pub fn online_solves(&self) -> impl Iterator<Item = &SolveRecord> {
        self.solves.iter().filter(|s| !s.offline)
    }
}

pub fn position_indices(id: ModelId) -> &'static [usize] {
    match id {
        ModelId::Drone => &[0, 1, 2],
        ModelId::TruckTrailer => &[0, 1],
    }
}
