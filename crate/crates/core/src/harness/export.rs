use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

use super::metrics::MetricsReport;
use crate::schemes::{Provenance, UpdateOutcome};
use crate::simulator::{SimLog, SolveRecord, TickRecord};
use crate::solver::SolveStatus;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
}

/// Floats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn vec_header(out: &mut Vec<String>, name: &str, n: usize) {
    out.extend((0..n).map(|i| format!("{name}_{i}")));
}

pub fn ticks_header(nx: usize, nu: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    vec_header(&mut h, "x_true", nx);
    vec_header(&mut h, "x_meas", nx);
    vec_header(&mut h, "x_ref", nx);
    vec_header(&mut h, "u_ff", nu);
    vec_header(&mut h, "u_fb", nu);
    vec_header(&mut h, "u_applied", nu);
    h.push("clamped".into());
    h.push("emergency".into());
    h
}

pub fn solves_header(nx: usize) -> Vec<String> {
    let mut h: Vec<String> = ["request_t", "plan_t0", "provenance"].map(String::from).to_vec();
    vec_header(&mut h, "start_state", nx);
    h.extend(
        [
            "t_c",
            "outcome",
            "status",
            "iterations",
            "kkt",
            "max_violation",
            "switch_t",
            "state_jump",
            "position_jump",
            "lateral_jump",
            "offline",
        ]
        .map(String::from),
    );
    h
}

pub fn write_ticks<W: Write>(log: &SimLog, w: W) -> Result<(), ExportError> {
    let (nx, nu) = (log.model.nx(), log.model.nu());
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ticks_header(nx, nu))?;
    for r in &log.ticks {
        let mut row = vec![fmt_f64(r.t)];
        for v in [&r.x_true, &r.x_meas, &r.x_ref, &r.u_ff, &r.u_fb, &r.u_applied] {
            row.extend(v.iter().map(|&x| fmt_f64(x)));
        }
        row.push(u8::from(r.clamped).to_string());
        row.push(u8::from(r.emergency).to_string());
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}

fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Measured => "measured",
        Provenance::OneStepPredicted => "one_step_predicted",
        Provenance::OnTrajectory => "on_trajectory",
    }
}

fn parse_provenance(s: &str) -> Option<Provenance> {
    Some(match s {
        "measured" => Provenance::Measured,
        "one_step_predicted" => Provenance::OneStepPredicted,
        "on_trajectory" => Provenance::OnTrajectory,
        _ => return None,
    })
}

fn outcome_name(o: UpdateOutcome) -> &'static str {
    match o {
        UpdateOutcome::Pending => "pending",
        UpdateOutcome::Applied => "applied",
        UpdateOutcome::Failed => "failed",
        UpdateOutcome::DeadlineMiss => "deadline_miss",
        UpdateOutcome::Abandoned => "abandoned",
    }
}

fn parse_outcome(s: &str) -> Option<UpdateOutcome> {
    Some(match s {
        "pending" => UpdateOutcome::Pending,
        "applied" => UpdateOutcome::Applied,
        "failed" => UpdateOutcome::Failed,
        "deadline_miss" => UpdateOutcome::DeadlineMiss,
        "abandoned" => UpdateOutcome::Abandoned,
        _ => return None,
    })
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Converged => "converged",
        SolveStatus::IterationLimit => "iteration_limit",
        SolveStatus::LineSearchFailure => "line_search_failure",
    }
}

fn parse_status(s: &str) -> Option<SolveStatus> {
    Some(match s {
        "converged" => SolveStatus::Converged,
        "iteration_limit" => SolveStatus::IterationLimit,
        "line_search_failure" => SolveStatus::LineSearchFailure,
        _ => return None,
    })
}

pub fn write_solves<W: Write>(log: &SimLog, w: W) -> Result<(), ExportError> {
    let nx = log.model.nx();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(solves_header(nx))?;
    for s in &log.solves {
        let mut row = vec![
            fmt_f64(s.request_time),
            fmt_f64(s.plan_t0),
            provenance_name(s.provenance).to_string(),
        ];
        row.extend(s.start_state.iter().map(|&x| fmt_f64(x)));
        row.push(fmt_f64(s.computation_time));
        row.push(outcome_name(s.outcome).to_string());
        row.push(s.status.map(status_name).unwrap_or_default().to_string());
        row.push(s.iterations.to_string());
        row.push(fmt_f64(s.kkt_residual));
        row.push(fmt_f64(s.max_violation));
        row.push(fmt_opt(s.switch_time));
        row.push(fmt_opt(s.state_jump));
        row.push(fmt_opt(s.position_jump));
        row.push(fmt_opt(s.lateral_jump));
        row.push(u8::from(s.offline).to_string());
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}

struct Fields<'a> {
    rec: &'a csv::StringRecord,
    pos: usize,
    row: usize,
}

impl<'a> Fields<'a> {
    fn err(&self, message: String) -> ExportError {
        ExportError::Parse { row: self.row, message }
    }

    fn next(&mut self) -> Result<&'a str, ExportError> {
        let v = self
            .rec
            .get(self.pos)
            .ok_or_else(|| self.err(format!("missing column {}", self.pos)))?;
        self.pos += 1;
        Ok(v)
    }

    fn f64(&mut self) -> Result<f64, ExportError> {
        let s = self.next()?;
        s.parse().map_err(|_| self.err(format!("bad number {s:?}")))
    }

    fn opt_f64(&mut self) -> Result<Option<f64>, ExportError> {
        let s = self.next()?;
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|_| self.err(format!("bad number {s:?}")))
    }

    fn vector(&mut self, n: usize) -> Result<DVector<f64>, ExportError> {
        let v = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(v))
    }

    fn flag(&mut self) -> Result<bool, ExportError> {
        match self.next()? {
            "0" => Ok(false),
            "1" => Ok(true),
            s => Err(self.err(format!("bad flag {s:?}"))),
        }
    }

    fn parsed<T>(&mut self, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<T, ExportError> {
        let s = self.next()?;
        f(s).ok_or_else(|| self.err(format!("bad {what} {s:?}")))
    }
}

pub fn read_ticks<R: Read>(r: R, nx: usize, nu: usize) -> Result<Vec<TickRecord>, ExportError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let mut f = Fields { rec: &rec, pos: 0, row };
        out.push(TickRecord {
            t: f.f64()?,
            x_true: f.vector(nx)?,
            x_meas: f.vector(nx)?,
            x_ref: f.vector(nx)?,
            u_ff: f.vector(nu)?,
            u_fb: f.vector(nu)?,
            u_applied: f.vector(nu)?,
            clamped: f.flag()?,
            emergency: f.flag()?,
        });
    }
    Ok(out)
}

pub fn read_solves<R: Read>(r: R, nx: usize) -> Result<Vec<SolveRecord>, ExportError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let mut f = Fields { rec: &rec, pos: 0, row };
        let request_time = f.f64()?;
        let plan_t0 = f.f64()?;
        let provenance = f.parsed("provenance", parse_provenance)?;
        let start_state = f.vector(nx)?;
        let computation_time = f.f64()?;
        let outcome = f.parsed("outcome", parse_outcome)?;
        let status = f.parsed("status", |s| {
            if s.is_empty() {
                Some(None)
            } else {
                parse_status(s).map(Some)
            }
        })?;
        let iterations = f.parsed("iterations", |s| s.parse().ok())?;
        out.push(SolveRecord {
            request_time,
            plan_t0,
            provenance,
            start_state,
            computation_time,
            outcome,
            status,
            iterations,
            kkt_residual: f.f64()?,
            max_violation: f.f64()?,
            switch_time: f.opt_f64()?,
            state_jump: f.opt_f64()?,
            position_jump: f.opt_f64()?,
            lateral_jump: f.opt_f64()?,
            offline: f.flag()?,
        });
    }
    Ok(out)
}

/// Writes `ticks.csv`, `solves.csv` and `summary.json` into `dir`.
pub fn write_run(dir: &Path, log: &SimLog, report: &MetricsReport) -> Result<(), ExportError> {
    fs::create_dir_all(dir)?;
    write_ticks(log, fs::File::create(dir.join("ticks.csv"))?)?;
    write_solves(log, fs::File::create(dir.join("solves.csv"))?)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(dir.join("summary.json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        let v = 0.1 + 0.2;
        let s = fmt_f64(v);
        assert_eq!(s.parse::<f64>().unwrap(), v);
        assert_eq!(s.split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
        assert_eq!(fmt_f64(f64::NAN).parse::<f64>().unwrap().is_nan(), true);
    }

    #[test]
    fn solve_rows_round_trip() {
        let rec = SolveRecord {
            request_time: 0.12,
            plan_t0: 0.32,
            provenance: Provenance::OnTrajectory,
            start_state: DVector::from_vec(vec![1.0 / 3.0, -2.5, 0.0, 1e-300]),
            computation_time: 0.045,
            outcome: UpdateOutcome::Applied,
            status: Some(SolveStatus::Converged),
            iterations: 4,
            kkt_residual: 3.2e-7,
            max_violation: 0.0,
            switch_time: Some(0.32),
            state_jump: Some(0.0),
            position_jump: Some(0.0),
            lateral_jump: None,
            offline: false,
        };
        let log = SimLog {
            scenario: "s".into(),
            scheme: crate::schemes::SchemeKind::Asap,
            model: crate::dynamics::ModelId::TruckTrailer,
            ts: 0.02,
            delta: 0.2,
            seed: 0,
            ticks: vec![],
            solves: vec![rec.clone()],
            outcome: crate::simulator::Outcome::Completed,
            outcome_time: 1.0,
            draws: Default::default(),
        };
        let mut buf = Vec::new();
        write_solves(&log, &mut buf).unwrap();
        let back = read_solves(buf.as_slice(), 4).unwrap();
        assert_eq!(back, vec![rec]);
    }
}
