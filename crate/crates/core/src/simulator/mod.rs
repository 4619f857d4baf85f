//! Virtual-time closed loop: plant, measurement, scheme, tracker and a
//! computation-delay model advanced on a common clock.
//!
//! Control ticks fall exactly on multiples of `T_s`. Solve completions are
//! events at request time plus the sampled delay and are handled before the
//! tick at the same instant, never during one.

mod delay;
mod log;
mod mismatch;
mod planner;
mod safety;
mod wallclock;

pub use delay::{DelayModel, DelaySampler};
pub use log::{position_indices, Heading, Outcome, SimLog, SolveRecord, StreamDraws, TickRecord};
pub use mismatch::{MismatchModel, NoiseStream, Plant};
pub use planner::{Planner, ACCEPT_VIOLATION};
pub use safety::{check_safety, Environment, SafetyReport};
pub use wallclock::run_wall_clock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{wrap_angle, DynamicsError, ModelId};
use crate::harness::{FieldError, Scenario};
use crate::schemes::{SchemeError, SchemeKind, SchemeState, SchemeStatus};
use crate::tracking::{feedback_law, FeedbackGain, TrackingError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] FieldError),
    #[error("scheme: {0}")]
    Scheme(#[from] SchemeError),
    #[error("plant: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("first solve failed: {0}")]
    Plan(String),
    #[error("tracker design: {0}")]
    Tracking(#[from] TrackingError),
}

/// Independent random streams, one per noise source.
pub const PROCESS_STREAM: u64 = 1;
pub const MEASUREMENT_STREAM: u64 = 2;
pub const DELAY_STREAM: u64 = 3;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Overrides for ablations.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the designed gain for schemes that use feedback.
    pub gain: Option<FeedbackGain>,
}

/// Environment used for safety checks of `scenario`.
pub fn environment(scenario: &Scenario) -> Environment {
    match scenario.model {
        ModelId::Drone if scenario.obstacles.is_empty() => Environment::Free,
        ModelId::Drone => Environment::Obstacles {
            obstacles: scenario.obstacles.clone(),
            vehicle_radius: scenario.ocp.vehicle_radius,
        },
        ModelId::TruckTrailer => Environment::Corridors {
            corridors: scenario.corridors.clone(),
            footprint: scenario.ocp.footprint(&scenario.params),
        },
    }
}

pub fn run(scenario: &Scenario, kind: SchemeKind, seed: u64) -> Result<SimLog, SimError> {
    run_with(scenario, kind, seed, &RunOptions::default())
}

pub fn run_with(scenario: &Scenario, kind: SchemeKind, seed: u64, options: &RunOptions) -> Result<SimLog, SimError> {
    scenario.validate_for(kind)?;
    if matches!(scenario.delay, DelayModel::Measured) {
        return Err(SimError::Config("measured delays need wall-clock mode".into()));
    }
    let (nx, nu) = (scenario.nx(), scenario.nu());
    let ts = scenario.scheme.ts;
    let gain = if kind.uses_feedback() {
        match &options.gain {
            Some(g) => g.clone(),
            None => scenario.feedback_gain()?,
        }
    } else {
        FeedbackGain::zero(nx, nu)
    };
    let open_loop = FeedbackGain::zero(nx, nu);
    let bounds = scenario.input_bounds();
    let plant = Plant::new(
        scenario.model,
        &scenario.params,
        &scenario.mismatch,
        scenario.plant_substeps,
    );
    let noise = |v: &[f64]| if v.is_empty() { vec![0.0; nx] } else { v.to_vec() };
    let mut process = NoiseStream::new(noise(&scenario.mismatch.process_noise), stream(seed, PROCESS_STREAM));
    let mut measure = NoiseStream::new(
        noise(&scenario.mismatch.measurement_noise),
        stream(seed, MEASUREMENT_STREAM),
    );
    let mut planner = Planner::new(
        scenario,
        DelaySampler::new(scenario.delay.clone(), stream(seed, DELAY_STREAM)),
    );
    let env = environment(scenario);

    let mut x_true = scenario.x0();
    let x_meas0 = measure.perturb(&x_true);
    let first = planner.offline(0.0, &x_meas0).map_err(SimError::Plan)?;
    let mut scheme = SchemeState::new(scenario.scheme_config(kind), planner.model(), first, &x_meas0)?;

    let goal_pos: Vec<f64> = position_indices(scenario.model)
        .iter()
        .map(|&i| scenario.goal[i])
        .collect();
    let n_ticks = (scenario.duration / ts + 1e-9).floor() as u64;
    let mut ticks = Vec::with_capacity(n_ticks as usize + 1);
    let mut outcome = Outcome::Completed;
    let mut outcome_time = n_ticks as f64 * ts;
    let mut emergency_since: Option<f64> = None;

    for i in 0..=n_ticks {
        let t = i as f64 * ts;
        scheme.advance(t, &mut planner)?;
        if let SchemeStatus::Failed { time, .. } = scheme.status {
            outcome = Outcome::DeadlineMiss;
            outcome_time = time;
            break;
        }
        let x_meas = if i == 0 {
            x_meas0.clone()
        } else {
            measure.perturb(&x_true)
        };
        let cmd = scheme.tick(t, &x_meas, &mut planner)?;
        let out = feedback_law(
            if cmd.feedback { &gain } else { &open_loop },
            &cmd.reference,
            &x_meas,
            &bounds,
        );
        ticks.push(TickRecord {
            t,
            x_true: x_true.clone(),
            x_meas,
            x_ref: cmd.reference.state.clone(),
            u_ff: out.u_ff,
            u_fb: out.u_fb,
            u_applied: out.u.clone(),
            clamped: out.clamped,
            emergency: cmd.emergency,
        });

        if env.clearance(&x_true, t) < 0.0 {
            outcome = Outcome::Collision;
            outcome_time = t;
            break;
        }
        if scenario.model == ModelId::TruckTrailer && wrap_angle(x_true[3] - x_true[2]).abs() > scenario.jackknife_limit
        {
            outcome = Outcome::Jackknife;
            outcome_time = t;
            break;
        }
        if cmd.emergency {
            let since = *emergency_since.get_or_insert(t);
            if t - since >= scenario.emergency_hold - 1e-9 {
                outcome = Outcome::Emergency;
                outcome_time = since;
                break;
            }
        } else if let Some(tol) = scenario.goal_tolerance {
            let d: f64 = position_indices(scenario.model)
                .iter()
                .zip(&goal_pos)
                .map(|(&j, g)| (x_true[j] - g).powi(2))
                .sum::<f64>()
                .sqrt();
            if d < tol {
                outcome_time = t;
                break;
            }
        }
        if i == n_ticks {
            break;
        }
        x_true = plant.step(&x_true, &out.u, ts)?;
        x_true = process.perturb(&x_true);
        if x_true.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Dynamics(DynamicsError::NonFinite));
        }
    }
    if outcome == Outcome::Completed {
        if let Some(since) = emergency_since {
            outcome = Outcome::Emergency;
            outcome_time = since;
        }
    }

    let heading = Heading::for_model(scenario.model);
    let positions = position_indices(scenario.model);
    let solves = scheme
        .updates
        .iter()
        .map(|u| SolveRecord::from_update(u, positions, heading))
        .collect();
    Ok(SimLog {
        scenario: scenario.name.clone(),
        scheme: kind,
        model: scenario.model,
        ts,
        delta: scenario.delta(),
        seed,
        ticks,
        solves,
        outcome,
        outcome_time,
        draws: StreamDraws {
            process: process.draws(),
            measurement: measure.draws(),
            delay: planner.delay.draws(),
        },
    })
}
