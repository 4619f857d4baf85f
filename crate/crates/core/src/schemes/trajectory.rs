use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{rk4_step, Dynamics, DynamicsError};
use crate::ocp::DecisionVector;
use crate::solver::{SolveResult, SolveStatus};

/// Tolerance for comparing event times, s.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("reference exhausted: requested t = {t:.6} s, available [{start:.6}, {end:.6}] s")]
    Exhausted { t: f64, start: f64, end: f64 },
    #[error("switch time {time:.6} s does not follow the last switch at {last:.6} s")]
    NonIncreasingSwitch { time: f64, last: f64 },
    #[error("stitch at {time:.6} s is discontinuous by {jump:.3e}")]
    Discontinuous { time: f64, jump: f64 },
    #[error("trajectory is malformed: {0}")]
    Malformed(String),
}

/// Solver diagnostics attached to a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_defect: f64,
    pub max_inequality_violation: f64,
    pub modeled_time: f64,
    pub wall_time: f64,
}

impl From<&SolveResult> for SolveSummary {
    fn from(r: &SolveResult) -> Self {
        Self {
            status: r.status,
            iterations: r.iterations,
            kkt_residual: r.kkt_residual,
            max_defect: r.max_defect,
            max_inequality_violation: r.max_inequality_violation,
            modeled_time: r.modeled_time,
            wall_time: r.wall_time,
        }
    }
}

/// State and feedforward input of a reference at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    pub state: DVector<f64>,
    pub input: DVector<f64>,
}

/// An optimized trajectory on the grid `t0 + k·dt`.
///
/// States are interpolated linearly between nodes and inputs are held
/// constant over each interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub summary: Option<SolveSummary>,
}

impl PlannedTrajectory {
    pub fn new(t0: f64, dt: f64, states: Vec<DVector<f64>>, inputs: Vec<DVector<f64>>) -> Result<Self, ReferenceError> {
        if inputs.is_empty() || states.len() != inputs.len() + 1 {
            return Err(ReferenceError::Malformed(format!(
                "{} states for {} inputs",
                states.len(),
                inputs.len()
            )));
        }
        if !(dt > 0.0) || !t0.is_finite() {
            return Err(ReferenceError::Malformed(format!("t0 = {t0}, dt = {dt}")));
        }
        Ok(Self {
            t0,
            dt,
            states,
            inputs,
            summary: None,
        })
    }

    pub fn from_solution(t0: f64, dt: f64, z: &DecisionVector) -> Result<Self, ReferenceError> {
        Self::new(t0, dt, z.states(), z.inputs())
    }

    /// Open-loop rollout of `inputs` from `x0`.
    pub fn from_rollout(
        model: &dyn Dynamics,
        t0: f64,
        dt: f64,
        x0: &DVector<f64>,
        inputs: Vec<DVector<f64>>,
    ) -> Result<Self, DynamicsError> {
        let states = crate::dynamics::rollout(model, x0, &inputs, dt)?;
        Ok(Self::new(t0, dt, states, inputs).expect("rollout has N + 1 states"))
    }

    pub fn with_summary(mut self, summary: SolveSummary) -> Self {
        self.summary = Some(summary);
        self
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.n() as f64 * self.dt
    }

    pub fn node_time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    fn position(&self, t: f64) -> Result<(usize, f64), ReferenceError> {
        let end = self.t_end();
        if !(t >= self.t0 - TIME_EPS && t <= end + TIME_EPS) {
            return Err(ReferenceError::Exhausted { t, start: self.t0, end });
        }
        let s = ((t - self.t0) / self.dt).max(0.0);
        let idx = (s + TIME_EPS).floor() as usize;
        if idx >= self.n() {
            return Ok((self.n(), 0.0));
        }
        let frac = (s - idx as f64).max(0.0);
        // Snap sub-nanosecond offsets onto the node so node samples are exact.
        let frac = if frac * self.dt < TIME_EPS { 0.0 } else { frac };
        Ok((idx, frac))
    }

    pub fn state_at(&self, t: f64) -> Result<DVector<f64>, ReferenceError> {
        let (idx, frac) = self.position(t)?;
        if frac == 0.0 {
            return Ok(self.states[idx].clone());
        }
        Ok(&self.states[idx] * (1.0 - frac) + &self.states[idx + 1] * frac)
    }

    pub fn input_at(&self, t: f64) -> Result<DVector<f64>, ReferenceError> {
        let (idx, _) = self.position(t)?;
        Ok(self.inputs[idx.min(self.n() - 1)].clone())
    }

    pub fn sample(&self, t: f64) -> Result<ReferenceSample, ReferenceError> {
        Ok(ReferenceSample {
            state: self.state_at(t)?,
            input: self.input_at(t)?,
        })
    }

    /// Largest shooting defect `‖F(x_k, u_k) − x_{k+1}‖_∞`.
    pub fn max_defect(&self, model: &dyn Dynamics) -> Result<f64, DynamicsError> {
        let mut worst = 0.0f64;
        for k in 0..self.n() {
            let next = rk4_step(model, &self.states[k], &self.inputs[k], self.dt)?;
            worst = worst.max((next - &self.states[k + 1]).amax());
        }
        Ok(worst)
    }
}

/// A time-ordered chain of plans. At any time the segment with the latest
/// switch time not after `t` is active.
#[derive(Debug, Clone)]
pub struct ActiveReference {
    segments: Vec<(f64, Arc<PlannedTrajectory>)>,
}

impl ActiveReference {
    pub fn new(first: PlannedTrajectory) -> Self {
        Self {
            segments: vec![(first.t0, Arc::new(first))],
        }
    }

    pub fn segments(&self) -> &[(f64, Arc<PlannedTrajectory>)] {
        &self.segments
    }

    pub fn last_switch(&self) -> f64 {
        self.segments.last().map(|s| s.0).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn latest(&self) -> &PlannedTrajectory {
        &self.segments.last().expect("reference is never empty").1
    }

    pub fn segment_at(&self, t: f64) -> &PlannedTrajectory {
        let idx = self.segments.iter().rposition(|(s, _)| *s <= t + TIME_EPS).unwrap_or(0);
        &self.segments[idx].1
    }

    pub fn sample(&self, t: f64) -> Result<ReferenceSample, ReferenceError> {
        self.segment_at(t).sample(t)
    }

    pub fn state_at(&self, t: f64) -> Result<DVector<f64>, ReferenceError> {
        self.segment_at(t).state_at(t)
    }

    pub fn input_at(&self, t: f64) -> Result<DVector<f64>, ReferenceError> {
        self.segment_at(t).input_at(t)
    }

    /// Reference end time, reached on the last segment.
    pub fn t_end(&self) -> f64 {
        self.latest().t_end()
    }

    fn prepare(&self, time: f64, incoming: &PlannedTrajectory) -> Result<DVector<f64>, ReferenceError> {
        let last = self.last_switch();
        if time <= last + TIME_EPS {
            return Err(ReferenceError::NonIncreasingSwitch { time, last });
        }
        let new_state = incoming.state_at(time)?;
        match self.segment_at(time).state_at(time) {
            Ok(old) => Ok(new_state - old),
            Err(_) => Ok(DVector::from_element(new_state.len(), f64::NAN)),
        }
    }

    /// Appends `incoming` at `time`, requiring exact state continuity.
    pub fn stitch(&mut self, time: f64, incoming: PlannedTrajectory) -> Result<(), ReferenceError> {
        let jump = self.prepare(time, &incoming)?;
        let size = jump.amax();
        if !(size == 0.0) {
            return Err(ReferenceError::Discontinuous { time, jump: size });
        }
        self.segments.push((time, Arc::new(incoming)));
        Ok(())
    }

    /// Switches to `incoming` at `time`, allowing a jump. Returns the state
    /// jump (incoming minus outgoing); NaN entries mean the outgoing segment
    /// had already ended.
    pub fn switch_to(&mut self, time: f64, incoming: PlannedTrajectory) -> Result<DVector<f64>, ReferenceError> {
        let jump = self.prepare(time, &incoming)?;
        self.segments.push((time, Arc::new(incoming)));
        Ok(jump)
    }

    /// Drops segments that can no longer become active after `t`.
    pub fn prune(&mut self, t: f64) {
        let keep = self.segments.iter().rposition(|(s, _)| *s <= t + TIME_EPS).unwrap_or(0);
        if keep > 0 {
            self.segments.drain(..keep);
        }
    }
}
