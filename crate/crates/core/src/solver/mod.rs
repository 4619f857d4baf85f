//! Gauss-Newton SQP over the penalized multiple-shooting NLP.
//!
//! Each iteration solves the equality-constrained QP with a Riccati sweep
//! ([`riccati`]), then backtracks on the ℓ1 merit `f_μ(z) + ν‖c(z)‖₁`. An
//! outer loop raises the penalty weight `μ` until the inequalities hold to
//! the feasibility tolerance. In RTI mode exactly one full QP step is taken.

mod riccati;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{rk4_step, Dynamics, DynamicsError};
use crate::ocp::{DecisionVector, Ocp, OcpError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error("KKT system singular at node {node} after regularization retries")]
    SingularKkt { node: usize },
    #[error("invalid solver settings: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqpSettings {
    pub max_iterations: usize,
    /// Stationarity tolerance `‖∇L‖_∞`.
    pub kkt_tolerance: f64,
    /// Stationarity tolerance used at penalty levels that are not yet final.
    pub intermediate_kkt_tolerance: f64,
    pub defect_tolerance: f64,
    pub feasibility_tolerance: f64,
    pub backtracking: f64,
    pub armijo: f64,
    pub regularization: f64,
    pub rti_mode: bool,
    pub mu_initial: f64,
    pub mu_factor: f64,
    pub mu_max: f64,
    /// Surrogate cost of one iteration, s (machine-independent timing).
    pub iteration_cost: f64,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            kkt_tolerance: 1e-6,
            intermediate_kkt_tolerance: 1e-3,
            defect_tolerance: 1e-6,
            feasibility_tolerance: 1e-4,
            backtracking: 0.5,
            armijo: 1e-4,
            regularization: 1e-8,
            rti_mode: false,
            mu_initial: 1e2,
            mu_factor: 10.0,
            mu_max: 1e6,
            iteration_cost: 2e-3,
        }
    }
}

impl SqpSettings {
    pub fn rti() -> Self {
        Self {
            rti_mode: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Settings(m.to_string()));
        if !(self.kkt_tolerance > 0.0 && self.defect_tolerance > 0.0 && self.feasibility_tolerance > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.backtracking > 0.0 && self.backtracking < 1.0) {
            return bad("backtracking factor must lie in (0, 1)");
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return bad("Armijo constant must lie in (0, 0.5)");
        }
        if !(self.mu_initial > 0.0 && self.mu_factor > 1.0 && self.mu_max >= self.mu_initial) {
            return bad("penalty schedule needs 0 < mu_initial ≤ mu_max and mu_factor > 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    LineSearchFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Converged => "converged",
            SolveStatus::IterationLimit => "iteration_limit",
            SolveStatus::LineSearchFailure => "line_search_failure",
        };
        f.write_str(s)
    }
}

/// Merit values around one accepted step, evaluated with the same `ν` and `μ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritStep {
    pub before: f64,
    pub after: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub solution: DecisionVector,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_defect: f64,
    pub max_inequality_violation: f64,
    pub objective: f64,
    pub mu: f64,
    pub wall_time: f64,
    /// `iterations × iteration_cost`.
    pub modeled_time: f64,
    pub merit_trace: Vec<MeritStep>,
}

impl SolveResult {
    pub fn is_converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

enum Inner {
    Stationary,
    Limit,
    LineSearch,
}

struct State<'a> {
    ocp: &'a Ocp,
    settings: &'a SqpSettings,
    z: DecisionVector,
    iterations: usize,
    nu: f64,
    trace: Vec<MeritStep>,
}

impl State<'_> {
    fn measures(&self, mu: f64) -> Result<(f64, f64, f64, f64), SolverError> {
        let eval = self.ocp.eval_nlp(&self.z, mu)?;
        Ok((
            riccati::reduced_gradient_norm(self.ocp, &eval),
            eval.residuals.amax(),
            eval.max_violation,
            eval.objective,
        ))
    }

    fn qp_step(&self, eval: &crate::ocp::NlpEval) -> Result<riccati::QpStep, SolverError> {
        let mut reg = self.settings.regularization;
        let mut last = 0;
        for _ in 0..4 {
            match riccati::solve_qp(self.ocp, eval, reg) {
                Ok(step) => return Ok(step),
                Err(node) => {
                    last = node;
                    reg = (reg * 100.0).max(1e-6);
                }
            }
        }
        Err(SolverError::SingularKkt { node: last })
    }

    /// SQP iterations at fixed `μ` until stationarity `tol` and defect tolerance.
    fn inner(&mut self, mu: f64, tol: f64) -> Result<Inner, SolverError> {
        let s = self.settings;
        loop {
            let eval = self.ocp.eval_nlp(&self.z, mu)?;
            let kkt = riccati::reduced_gradient_norm(self.ocp, &eval);
            let defect = eval.residuals.amax();
            if kkt < tol && defect < s.defect_tolerance {
                return Ok(Inner::Stationary);
            }
            if self.iterations >= s.max_iterations {
                return Ok(Inner::Limit);
            }
            let step = self.qp_step(&eval)?;
            self.iterations += 1;

            if step.max_multiplier >= self.nu {
                self.nu = 1.5 * step.max_multiplier + 1e-3;
            }
            let c1 = eval.residuals.lp_norm(1);
            let merit0 = eval.objective + self.nu * c1;
            let slope = eval.gradient.dot(&step.dz) - self.nu * c1;
            let floor = 1e-13 * (1.0 + merit0.abs());
            let mut alpha = 1.0;
            loop {
                let mut trial = self.z.clone();
                trial.z.axpy(alpha, &step.dz, 1.0);
                // Infinite or failed evaluations count as rejected trial points.
                let merit = match self.ocp.eval_values(&trial, mu) {
                    Ok(v) => v.objective + self.nu * v.residual_l1,
                    Err(_) => f64::INFINITY,
                };
                let armijo_ok = merit <= merit0 + s.armijo * alpha * slope;
                let at_precision_floor = slope > -floor && merit <= merit0 + floor;
                if merit.is_finite() && (armijo_ok || at_precision_floor) {
                    self.trace.push(MeritStep {
                        before: merit0,
                        after: merit,
                        step: alpha,
                    });
                    self.z = trial;
                    break;
                }
                alpha *= s.backtracking;
                if alpha < 1e-10 {
                    return Ok(Inner::LineSearch);
                }
            }
        }
    }

    fn finish(self, status: SolveStatus, mu: f64, started: Instant) -> Result<SolveResult, SolverError> {
        let (kkt, defect, viol, objective) = self.measures(mu)?;
        Ok(SolveResult {
            status,
            kkt_residual: kkt,
            max_defect: defect,
            max_inequality_violation: viol,
            objective,
            mu,
            wall_time: started.elapsed().as_secs_f64(),
            modeled_time: self.iterations as f64 * self.settings.iteration_cost,
            iterations: self.iterations,
            merit_trace: self.trace,
            solution: self.z,
        })
    }
}

/// Solves `ocp` from `warm_start`. Pinned inputs are written into the warm
/// start and never modified.
pub fn solve(ocp: &Ocp, warm_start: &DecisionVector, settings: &SqpSettings) -> Result<SolveResult, SolverError> {
    settings.validate()?;
    ocp.validate()?;
    let started = Instant::now();
    if warm_start.layout != ocp.layout() {
        return Err(OcpError::Layout {
            expected: ocp.layout().len(),
            got: warm_start.z.len(),
        }
        .into());
    }
    let mut z = warm_start.clone();
    for (k, pin) in ocp.pinned.iter().enumerate() {
        if let Some(u) = pin {
            z.set_input(k, u);
        }
    }
    let mut st = State {
        ocp,
        settings,
        z,
        iterations: 0,
        nu: 0.0,
        trace: Vec::new(),
    };

    if settings.rti_mode {
        let mu = settings.mu_max;
        let eval = ocp.eval_nlp(&st.z, mu)?;
        let step = st.qp_step(&eval)?;
        st.z.z += step.dz;
        st.iterations = 1;
        let (kkt, defect, viol, _) = st.measures(mu)?;
        let ok =
            kkt < settings.kkt_tolerance && defect < settings.defect_tolerance && viol < settings.feasibility_tolerance;
        let status = if ok {
            SolveStatus::Converged
        } else {
            SolveStatus::IterationLimit
        };
        return st.finish(status, mu, started);
    }

    // A warm start that already meets the final tolerances needs no
    // continuation from a small penalty weight.
    let mut mu = settings.mu_initial;
    loop {
        let (kkt, defect, viol, _) = st.measures(mu)?;
        if kkt < settings.kkt_tolerance && defect < settings.defect_tolerance && viol < settings.feasibility_tolerance {
            return st.finish(SolveStatus::Converged, mu, started);
        }
        if mu >= settings.mu_max {
            break;
        }
        mu = (mu * settings.mu_factor).min(settings.mu_max);
    }

    let mut mu = settings.mu_initial;
    loop {
        let last_level = mu >= settings.mu_max;
        let loose = settings.intermediate_kkt_tolerance.max(settings.kkt_tolerance);
        if !last_level && loose > settings.kkt_tolerance {
            match st.inner(mu, loose)? {
                Inner::Stationary => {}
                Inner::Limit => return st.finish(SolveStatus::IterationLimit, mu, started),
                Inner::LineSearch => return st.finish(SolveStatus::LineSearchFailure, mu, started),
            }
            let (_, _, viol, _) = st.measures(mu)?;
            if viol >= settings.feasibility_tolerance {
                mu = (mu * settings.mu_factor).min(settings.mu_max);
                continue;
            }
        }
        match st.inner(mu, settings.kkt_tolerance)? {
            Inner::Stationary => {}
            Inner::Limit => return st.finish(SolveStatus::IterationLimit, mu, started),
            Inner::LineSearch => return st.finish(SolveStatus::LineSearchFailure, mu, started),
        }
        let (_, _, viol, _) = st.measures(mu)?;
        if viol < settings.feasibility_tolerance {
            return st.finish(SolveStatus::Converged, mu, started);
        }
        if last_level {
            return st.finish(SolveStatus::IterationLimit, mu, started);
        }
        mu = (mu * settings.mu_factor).min(settings.mu_max);
    }
}

/// Shifts a solution left by `shift` nodes, padding the tail by repeating the
/// last input and integrating the dynamics.
pub fn shift_warm_start(
    prev: &DecisionVector,
    shift: usize,
    model: &dyn Dynamics,
    dt: f64,
) -> Result<DecisionVector, DynamicsError> {
    let n = prev.layout.n;
    assert!(shift < n.max(1), "shift must be smaller than N");
    let mut out = prev.clone();
    if shift == 0 {
        return Ok(out);
    }
    for k in 0..=n - shift {
        out.set_state(k, &prev.state(k + shift));
    }
    for k in 0..n - shift {
        out.set_input(k, &prev.input(k + shift));
    }
    let last_u = prev.input(n - 1);
    for k in n - shift..n {
        out.set_input(k, &last_u);
        let next = rk4_step(model, &out.state(k), &last_u, dt)?;
        out.set_state(k + 1, &next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DoubleIntegrator;
    use crate::ocp::{Ocp, PathConstraint};
    use nalgebra::DVector;
    use std::sync::Arc;

    fn di_ocp(n: usize) -> Ocp {
        let mut ocp = Ocp::new(
            Arc::new(DoubleIntegrator),
            n,
            0.1,
            0.0,
            DVector::from_vec(vec![1.0, -0.5]),
        );
        ocp.cost.state_weight = DVector::from_vec(vec![1.0, 0.1]);
        ocp.cost.input_weight = DVector::from_vec(vec![0.5]);
        ocp.cost.terminal_weight = DVector::from_vec(vec![10.0, 1.0]);
        ocp
    }

    fn cold(ocp: &Ocp) -> DecisionVector {
        DecisionVector::zeros(ocp.layout())
    }

    /// Condensed least squares over the stacked inputs, using the exact
    /// discretization of the double integrator.
    fn condensed_lq_oracle(ocp: &Ocp) -> Vec<f64> {
        use nalgebra::{DMatrix, Matrix2, Vector2};
        let (n, h) = (ocp.n, ocp.dt);
        let a = Matrix2::new(1.0, h, 0.0, 1.0);
        let b = Vector2::new(0.5 * h * h, h);
        let x0 = Vector2::new(ocp.x0[0], ocp.x0[1]);
        // x_k = a^k x0 + sum_{j<k} a^{k-1-j} b u_j
        let mut rows = DMatrix::<f64>::zeros(2 * (n + 1) + n, n);
        let mut rhs = DVector::<f64>::zeros(2 * (n + 1) + n);
        let mut ak = Matrix2::identity();
        for k in 0..=n {
            let w = if k == n {
                &ocp.cost.terminal_weight
            } else {
                &ocp.cost.state_weight
            };
            let free = ak * x0;
            for i in 0..2 {
                let s = w[i].sqrt();
                rhs[2 * k + i] = -s * free[i];
                let mut p = Matrix2::identity();
                for j in (0..k).rev() {
                    rows[(2 * k + i, j)] = s * (p * b)[i];
                    p = a * p;
                }
            }
            ak = a * ak;
        }
        for j in 0..n {
            rows[(2 * (n + 1) + j, j)] = ocp.cost.input_weight[0].sqrt();
        }
        let normal = rows.transpose() * &rows;
        let u = normal.lu().solve(&(rows.transpose() * rhs)).unwrap();
        u.iter().copied().collect()
    }

    #[test]
    fn unconstrained_lq_matches_condensed_oracle() {
        let ocp = di_ocp(25);
        let r = solve(&ocp, &cold(&ocp), &SqpSettings::default()).unwrap();
        assert!(r.is_converged());
        assert!(
            r.iterations <= 2,
            "linear-quadratic problem took {} iterations",
            r.iterations
        );
        let oracle = condensed_lq_oracle(&ocp);
        for (k, u) in oracle.iter().enumerate() {
            assert!((r.solution.input(k)[0] - u).abs() < 1e-8, "k={k}");
        }
    }

    #[test]
    fn settings_are_validated() {
        let mut s = SqpSettings::default();
        s.armijo = 0.6;
        assert!(s.validate().is_err());
        s.armijo = 1e-4;
        s.backtracking = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn warm_start_at_optimum_converges_immediately() {
        let ocp = di_ocp(20);
        let first = solve(&ocp, &cold(&ocp), &SqpSettings::default()).unwrap();
        assert!(first.is_converged());
        let again = solve(&ocp, &first.solution, &SqpSettings::default()).unwrap();
        assert!(again.is_converged());
        assert!(again.iterations <= 2);
    }

    #[test]
    fn rti_takes_exactly_one_step() {
        let mut ocp = di_ocp(10);
        for k in 0..=10 {
            ocp.constraints[k].push(PathConstraint::StateBox {
                index: 0,
                lower: 0.2,
                upper: f64::INFINITY,
            });
        }
        let r = solve(&ocp, &cold(&ocp), &SqpSettings::rti()).unwrap();
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn merit_never_increases() {
        let mut ocp = di_ocp(15);
        for k in 0..=15 {
            ocp.constraints[k].push(PathConstraint::StateBox {
                index: 0,
                lower: 0.3,
                upper: f64::INFINITY,
            });
        }
        let r = solve(&ocp, &cold(&ocp), &SqpSettings::default()).unwrap();
        assert!(r.is_converged(), "{:?}", r.status);
        assert!(!r.merit_trace.is_empty());
        for m in &r.merit_trace {
            assert!(m.after <= m.before + 1e-12 * (1.0 + m.before.abs()), "{m:?}");
        }
        assert!(r.max_inequality_violation < 1e-4);
    }

    #[test]
    fn pinned_inputs_stay_fixed() {
        let mut ocp = di_ocp(10);
        ocp.pinned[0] = Some(DVector::from_vec(vec![0.7]));
        ocp.pinned[1] = Some(DVector::from_vec(vec![-0.2]));
        let r = solve(&ocp, &cold(&ocp), &SqpSettings::default()).unwrap();
        assert!(r.is_converged());
        assert_eq!(r.solution.input(0)[0], 0.7);
        assert_eq!(r.solution.input(1)[0], -0.2);
    }

    #[test]
    fn shift_zero_is_identity_and_tail_is_consistent() {
        let ocp = di_ocp(8);
        let r = solve(&ocp, &cold(&ocp), &SqpSettings::default()).unwrap();
        let same = shift_warm_start(&r.solution, 0, &DoubleIntegrator, 0.1).unwrap();
        assert_eq!(same, r.solution);
        let s = shift_warm_start(&r.solution, 7, &DoubleIntegrator, 0.1).unwrap();
        assert_eq!(s.state(0), r.solution.state(7));
        for k in 1..8 {
            let next = rk4_step(&DoubleIntegrator, &s.state(k), &s.input(k), 0.1).unwrap();
            assert!((next - s.state(k + 1)).amax() == 0.0);
        }
    }
}
