use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{
    environment, position_indices, stream, DelayModel, DelaySampler, Heading, NoiseStream, Outcome, Planner, Plant,
    SimError, SimLog, SolveRecord, StreamDraws, TickRecord, DELAY_STREAM, MEASUREMENT_STREAM, PROCESS_STREAM,
};
use crate::harness::Scenario;
use crate::schemes::{ActiveReference, EmergencyPolicy, PlanUpdate, Provenance, SchemeKind, UpdateOutcome, TIME_EPS};
use crate::tracking::feedback_law;

/// Runs ASAP in real time: a solver worker thread stitches results into the
/// shared reference while the control loop ticks every `T_s` of wall time.
/// Computation times are the measured solve times, so results depend on the
/// machine.
pub fn run_wall_clock(scenario: &Scenario, seed: u64) -> Result<SimLog, SimError> {
    let kind = SchemeKind::Asap;
    scenario.validate_for(kind)?;
    if !matches!(scenario.delay, DelayModel::Measured) {
        return Err(SimError::Config(
            "wall-clock mode needs the measured delay model".into(),
        ));
    }
    let (nx, ts, delta) = (scenario.nx(), scenario.scheme.ts, scenario.delta());
    let gain = scenario.feedback_gain()?;
    let bounds = scenario.input_bounds();
    let style = scenario.scheme_config(kind).emergency;
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
        DelaySampler::new(DelayModel::Measured, stream(seed, DELAY_STREAM)),
    );
    let env = environment(scenario);

    let mut x_true = scenario.x0();
    let x_meas0 = measure.perturb(&x_true);
    let first = planner.offline(0.0, &x_meas0).map_err(SimError::Plan)?;
    let offline = PlanUpdate {
        request_time: 0.0,
        plan_t0: 0.0,
        provenance: Provenance::Measured,
        initial_state: x_meas0.clone(),
        computation_time: 0.0,
        deadline: 0.0,
        switch_time: Some(0.0),
        jump: None,
        outcome: UpdateOutcome::Applied,
        summary: first.summary,
        error: None,
        offline: true,
    };

    let reference = Arc::new(Mutex::new(ActiveReference::new(first)));
    // Set once by the worker at the deadline of a late solve.
    let breach: Arc<Mutex<Option<f64>>> = Arc::new(Mutex::new(None));
    let stop = Arc::new(AtomicBool::new(false));
    let clock = Instant::now();

    let worker = {
        let (reference, breach, stop) = (reference.clone(), breach.clone(), stop.clone());
        thread::spawn(move || {
            let mut updates = vec![offline];
            while !stop.load(Ordering::Relaxed) {
                let request = clock.elapsed().as_secs_f64();
                let switch = request + delta;
                let x0 = match reference.lock().expect("reference lock").state_at(switch) {
                    Ok(x) => x,
                    // Out of plan: stop asking; the control loop falls back.
                    Err(_) => break,
                };
                let (result, _) = planner.plan(request, switch, &x0, &[]);
                let done = clock.elapsed().as_secs_f64();
                let mut u = PlanUpdate {
                    request_time: request,
                    plan_t0: switch,
                    provenance: Provenance::OnTrajectory,
                    initial_state: x0.clone(),
                    computation_time: done - request,
                    deadline: switch,
                    switch_time: None,
                    jump: None,
                    outcome: UpdateOutcome::Failed,
                    summary: planner.results.last().map(Into::into),
                    error: result.as_ref().err().cloned(),
                    offline: false,
                };
                if done > switch + TIME_EPS {
                    u.outcome = UpdateOutcome::DeadlineMiss;
                    *breach.lock().expect("breach lock") = Some(switch);
                    updates.push(u);
                    break;
                }
                if let Ok(mut traj) = result {
                    traj.states[0] = x0.clone();
                    if reference.lock().expect("reference lock").stitch(switch, traj).is_ok() {
                        u.outcome = UpdateOutcome::Applied;
                        u.switch_time = Some(switch);
                        u.jump = Some(nalgebra::DVector::zeros(x0.len()));
                    }
                }
                updates.push(u);
            }
            (updates, planner.delay.draws())
        })
    };

    let n_ticks = (scenario.duration / ts + 1e-9).floor() as u64;
    let mut ticks = Vec::with_capacity(n_ticks as usize + 1);
    let mut outcome = Outcome::Completed;
    let mut outcome_time = n_ticks as f64 * ts;
    let mut emergency: Option<(f64, EmergencyPolicy)> = None;
    let mut failure = None;

    for i in 0..=n_ticks {
        let t = i as f64 * ts;
        let now = clock.elapsed().as_secs_f64();
        if t > now {
            thread::sleep(Duration::from_secs_f64(t - now));
        }
        let x_meas = if i == 0 {
            x_meas0.clone()
        } else {
            measure.perturb(&x_true)
        };
        if emergency.is_none() {
            let breached = breach.lock().expect("breach lock").filter(|&b| b <= t + TIME_EPS);
            let sample = reference.lock().expect("reference lock").sample(t);
            if breached.is_some() || sample.is_err() {
                let at = breached.unwrap_or(t);
                let policy = EmergencyPolicy::for_reference(&style, &reference.lock().expect("reference lock"), at);
                emergency = Some((at, policy));
            }
        }
        let cmd = match &emergency {
            Some((_, policy)) => policy.command(t),
            None => crate::schemes::TickCommand {
                reference: reference
                    .lock()
                    .expect("reference lock")
                    .sample(t)
                    .expect("checked above"),
                feedback: true,
                emergency: false,
            },
        };
        let zero = crate::tracking::FeedbackGain::zero(nx, scenario.nu());
        let out = feedback_law(
            if cmd.feedback { &gain } else { &zero },
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
        if let Some((since, _)) = &emergency {
            if t - since >= scenario.emergency_hold - 1e-9 {
                outcome = Outcome::Emergency;
                outcome_time = *since;
                break;
            }
        }
        if i == n_ticks {
            break;
        }
        match plant.step(&x_true, &out.u, ts) {
            Ok(x) => x_true = process.perturb(&x),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    stop.store(true, Ordering::Relaxed);
    let (updates, delay_draws) = worker.join().expect("solver worker panicked");
    if let Some(e) = failure {
        return Err(e.into());
    }
    if outcome == Outcome::Completed {
        if let Some((since, _)) = emergency {
            outcome = Outcome::Emergency;
            outcome_time = since;
        }
    }
    let heading = Heading::for_model(scenario.model);
    let positions = position_indices(scenario.model);
    Ok(SimLog {
        scenario: scenario.name.clone(),
        scheme: kind,
        model: scenario.model,
        ts,
        delta,
        seed,
        ticks,
        solves: updates
            .iter()
            .map(|u| SolveRecord::from_update(u, positions, heading))
            .collect(),
        outcome,
        outcome_time,
        draws: StreamDraws {
            process: process.draws(),
            measurement: measure.draws(),
            delay: delay_draws,
        },
    })
}
