//! Direct multiple-shooting transcription of the horizon problems.
//!
//! Decision vector layout (`N` intervals, `nx` states, `nu` inputs):
//!
//! ```text
//! z = [ x_0 | x_1 | … | x_N | u_0 | u_1 | … | u_{N−1} ]
//!       ^ k·nx                ^ (N+1)·nx + k·nu
//! ```
//!
//! Equality residuals are `c_0 = x_0 − x̄_0` followed by the shooting defects
//! `c_{k+1} = F(x_k, u_k) − x_{k+1}` where `F` is one RK4 step of length `dt`.
//! Inequalities enter the objective through the exterior penalty
//! `μ · Σ max(0, g)²`.

mod build;
mod constraints;
mod corridor;

pub use build::{
    build_drone_ocp, build_tt_ocp, DroneGoal, OcpSpec, StateBound, TrailerGeometry, INPUT_BOUND_MARGIN, R_DRONE,
};
pub use constraints::{
    Corridor, Footprint, FootprintPoint, Inequality, PathConstraint, SphereObstacle, ACTIVATION_TOL,
};
pub use corridor::{assign_corridors, initial_assignment, resample_assignment, CorridorAssignment, HYSTERESIS_MARGIN};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{rk4_step, rk4_step_sensitivity, Dynamics, DynamicsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcpError {
    #[error("infeasible start: {0}")]
    InfeasibleStart(String),
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("dynamics failed at node {node}: {source}")]
    Dynamics {
        node: usize,
        #[source]
        source: DynamicsError,
    },
    #[error("decision vector has length {got}, layout expects {expected}")]
    Layout { expected: usize, got: usize },
    #[error("corridor assignment failed at node {node}: inside neither corridor {current} nor its successor")]
    Assignment { node: usize, current: usize },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Index map of the stacked decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub nx: usize,
    pub nu: usize,
    pub n: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        (self.n + 1) * self.nx + self.n * self.nu
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_offset(&self, k: usize) -> usize {
        k * self.nx
    }

    pub fn input_offset(&self, k: usize) -> usize {
        (self.n + 1) * self.nx + k * self.nu
    }

    pub fn n_equalities(&self) -> usize {
        (self.n + 1) * self.nx
    }
}

/// Stacked unknowns of one transcribed problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVector {
    pub layout: Layout,
    pub z: DVector<f64>,
}

impl DecisionVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            layout,
            z: DVector::zeros(layout.len()),
        }
    }

    pub fn from_trajectory(states: &[DVector<f64>], inputs: &[DVector<f64>]) -> Self {
        assert_eq!(states.len(), inputs.len() + 1, "need N+1 states for N inputs");
        let layout = Layout {
            nx: states[0].len(),
            nu: inputs.first().map_or(0, |u| u.len()),
            n: inputs.len(),
        };
        let mut dv = Self::zeros(layout);
        for (k, x) in states.iter().enumerate() {
            dv.set_state(k, x);
        }
        for (k, u) in inputs.iter().enumerate() {
            dv.set_input(k, u);
        }
        dv
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        let o = self.layout.state_offset(k);
        self.z.rows(o, self.layout.nx).into_owned()
    }

    pub fn input(&self, k: usize) -> DVector<f64> {
        let o = self.layout.input_offset(k);
        self.z.rows(o, self.layout.nu).into_owned()
    }

    pub fn set_state(&mut self, k: usize, x: &DVector<f64>) {
        let o = self.layout.state_offset(k);
        self.z.rows_mut(o, self.layout.nx).copy_from(x);
    }

    pub fn set_input(&mut self, k: usize, u: &DVector<f64>) {
        let o = self.layout.input_offset(k);
        self.z.rows_mut(o, self.layout.nu).copy_from(u);
    }

    pub fn states(&self) -> Vec<DVector<f64>> {
        (0..=self.layout.n).map(|k| self.state(k)).collect()
    }

    pub fn inputs(&self) -> Vec<DVector<f64>> {
        (0..self.layout.n).map(|k| self.input(k)).collect()
    }
}

/// Diagonal least-squares tracking cost.
///
/// `Σ_k ½‖x_k − x̄_k‖²_Wx + ½‖u_k − ū_k‖²_Wu + ½‖x_N − x̄_N‖²_Wf`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingCost {
    pub state_ref: Vec<DVector<f64>>,
    pub input_ref: Vec<DVector<f64>>,
    pub state_weight: DVector<f64>,
    pub input_weight: DVector<f64>,
    pub terminal_weight: DVector<f64>,
}

/// A transcribed horizon problem. Immutable once built.
#[derive(Debug, Clone)]
pub struct Ocp {
    pub model: Arc<dyn Dynamics>,
    pub n: usize,
    pub dt: f64,
    /// Absolute time of node 0.
    pub t0: f64,
    pub x0: DVector<f64>,
    pub cost: TrackingCost,
    /// Constraints per node, `N+1` entries.
    pub constraints: Vec<Vec<PathConstraint>>,
    /// Inputs fixed to given values, `N` entries.
    pub pinned: Vec<Option<DVector<f64>>>,
}

/// Everything the SQP iteration needs at one point.
#[derive(Debug, Clone)]
pub struct NlpEval {
    pub objective: f64,
    pub cost: f64,
    pub penalty: f64,
    pub gradient: DVector<f64>,
    /// `[c_0, c_1, …, c_N]`, each of length `nx`.
    pub residuals: DVector<f64>,
    /// `∂F/∂x_k` per interval.
    pub dyn_x: Vec<DMatrix<f64>>,
    /// `∂F/∂u_k` per interval.
    pub dyn_u: Vec<DMatrix<f64>>,
    /// Gauss-Newton Hessian per stage over `(x_k, u_k)`; the last entry is
    /// the terminal `nx × nx` block.
    pub hessian: Vec<DMatrix<f64>>,
    pub max_violation: f64,
}

/// Objective and constraint values without derivatives (line search).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlpValues {
    pub objective: f64,
    pub residual_l1: f64,
    pub residual_inf: f64,
    pub max_violation: f64,
}

impl Ocp {
    /// Bare problem with zero weights and no constraints.
    pub fn new(model: Arc<dyn Dynamics>, n: usize, dt: f64, t0: f64, x0: DVector<f64>) -> Self {
        let (nx, nu) = (model.nx(), model.nu());
        Self {
            n,
            dt,
            t0,
            cost: TrackingCost {
                state_ref: vec![DVector::zeros(nx); n + 1],
                input_ref: vec![DVector::zeros(nu); n],
                state_weight: DVector::zeros(nx),
                input_weight: DVector::zeros(nu),
                terminal_weight: DVector::zeros(nx),
            },
            constraints: vec![Vec::new(); n + 1],
            pinned: vec![None; n],
            x0,
            model,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout {
            nx: self.model.nx(),
            nu: self.model.nu(),
            n: self.n,
        }
    }

    pub fn node_time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn validate(&self) -> Result<(), OcpError> {
        let l = self.layout();
        if self.n < 2 {
            return Err(OcpError::Invalid(format!("N must be ≥ 2, got {}", self.n)));
        }
        if !(self.dt > 0.0) {
            return Err(OcpError::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        let c = &self.cost;
        if c.state_ref.len() != self.n + 1
            || c.input_ref.len() != self.n
            || self.constraints.len() != self.n + 1
            || self.pinned.len() != self.n
        {
            return Err(OcpError::Invalid("per-node data has wrong length".into()));
        }
        if c.state_weight.len() != l.nx || c.terminal_weight.len() != l.nx || c.input_weight.len() != l.nu {
            return Err(OcpError::Invalid("weight vector has wrong length".into()));
        }
        if c.state_weight
            .iter()
            .chain(c.input_weight.iter())
            .chain(c.terminal_weight.iter())
            .any(|w| !(*w >= 0.0))
        {
            return Err(OcpError::Invalid("weights must be non-negative".into()));
        }
        if self.x0.len() != l.nx {
            return Err(OcpError::Invalid("initial state has wrong length".into()));
        }
        Ok(())
    }

    fn check_len(&self, z: &DecisionVector) -> Result<(), OcpError> {
        let expected = self.layout().len();
        if z.z.len() != expected || z.layout != self.layout() {
            return Err(OcpError::Layout {
                expected,
                got: z.z.len(),
            });
        }
        Ok(())
    }

    fn node_inequalities(&self, k: usize, z: &DecisionVector, out: &mut Vec<Inequality>) {
        out.clear();
        let x = z.state(k);
        let u = (k < self.n).then(|| z.input(k));
        for c in &self.constraints[k] {
            c.evaluate(&x, u.as_ref(), out);
        }
    }

    /// A warm start obtained by applying `inputs` from `x0`.
    pub fn rollout_guess(&self, inputs: &[DVector<f64>]) -> Result<DecisionVector, OcpError> {
        let mut states = vec![self.x0.clone()];
        for (k, u) in inputs.iter().enumerate() {
            let next = rk4_step(self.model.as_ref(), &states[k], u, self.dt)
                .map_err(|source| OcpError::Dynamics { node: k, source })?;
            states.push(next);
        }
        Ok(DecisionVector::from_trajectory(&states, inputs))
    }

    /// Largest inequality value over all nodes (0 when all are satisfied).
    pub fn max_violation(&self, z: &DecisionVector) -> Result<f64, OcpError> {
        self.check_len(z)?;
        let mut buf = Vec::new();
        let mut worst = 0.0f64;
        for k in 0..=self.n {
            self.node_inequalities(k, z, &mut buf);
            for g in &buf {
                worst = worst.max(g.value);
            }
        }
        Ok(worst)
    }

    /// Objective, defect norms and violation at `z`, without derivatives.
    pub fn eval_values(&self, z: &DecisionVector, mu: f64) -> Result<NlpValues, OcpError> {
        self.check_len(z)?;
        let n = self.n;
        let c = &self.cost;
        let mut objective = 0.0;
        let mut l1 = 0.0;
        let mut linf = 0.0f64;
        let mut worst = 0.0f64;
        let mut buf = Vec::new();
        for k in 0..=n {
            let x = z.state(k);
            let w = if k == n { &c.terminal_weight } else { &c.state_weight };
            let e = &x - &c.state_ref[k];
            objective += 0.5 * e.component_mul(&e).dot(w);
            if k < n {
                let u = z.input(k);
                let eu = &u - &c.input_ref[k];
                objective += 0.5 * eu.component_mul(&eu).dot(&c.input_weight);
                let next = rk4_step(self.model.as_ref(), &x, &u, self.dt)
                    .map_err(|source| OcpError::Dynamics { node: k, source })?;
                let d = next - z.state(k + 1);
                l1 += d.lp_norm(1);
                linf = linf.max(d.amax());
            }
            self.node_inequalities(k, z, &mut buf);
            for g in &buf {
                worst = worst.max(g.value);
                if g.is_active() {
                    objective += mu * g.value * g.value;
                }
            }
        }
        let d0 = z.state(0) - &self.x0;
        l1 += d0.lp_norm(1);
        linf = linf.max(d0.amax());
        if !objective.is_finite() || !l1.is_finite() {
            return Err(OcpError::NonFinite { node: 0 });
        }
        Ok(NlpValues {
            objective,
            residual_l1: l1,
            residual_inf: linf,
            max_violation: worst,
        })
    }

    /// Objective with gradient, equality residuals with their Jacobian blocks,
    /// and the Gauss-Newton Hessian of the penalized objective.
    pub fn eval_nlp(&self, z: &DecisionVector, mu: f64) -> Result<NlpEval, OcpError> {
        self.check_len(z)?;
        let layout = self.layout();
        let (nx, nu, n) = (layout.nx, layout.nu, layout.n);
        let c = &self.cost;

        let mut gradient = DVector::zeros(layout.len());
        let mut residuals = DVector::zeros(layout.n_equalities());
        let mut dyn_x = Vec::with_capacity(n);
        let mut dyn_u = Vec::with_capacity(n);
        let mut hessian = Vec::with_capacity(n + 1);
        let mut cost = 0.0;
        let mut penalty = 0.0;
        let mut worst = 0.0f64;
        let mut buf = Vec::new();

        residuals.rows_mut(0, nx).copy_from(&(z.state(0) - &self.x0));

        for k in 0..=n {
            let x = z.state(k);
            let terminal = k == n;
            let w = if terminal { &c.terminal_weight } else { &c.state_weight };
            let dim = if terminal { nx } else { nx + nu };
            let mut h = DMatrix::zeros(dim, dim);

            let e = &x - &c.state_ref[k];
            cost += 0.5 * e.component_mul(&e).dot(w);
            let xo = layout.state_offset(k);
            for i in 0..nx {
                gradient[xo + i] += w[i] * e[i];
                h[(i, i)] += w[i];
            }

            let uo = layout.input_offset(k.min(n.saturating_sub(1)));
            if !terminal {
                let u = z.input(k);
                let eu = &u - &c.input_ref[k];
                cost += 0.5 * eu.component_mul(&eu).dot(&c.input_weight);
                for j in 0..nu {
                    gradient[uo + j] += c.input_weight[j] * eu[j];
                    h[(nx + j, nx + j)] += c.input_weight[j];
                }
                let (next, fx, fu) = rk4_step_sensitivity(self.model.as_ref(), &x, &u, self.dt)
                    .map_err(|source| OcpError::Dynamics { node: k, source })?;
                let d = next - z.state(k + 1);
                residuals.rows_mut((k + 1) * nx, nx).copy_from(&d);
                dyn_x.push(fx);
                dyn_u.push(fu);
            }

            self.node_inequalities(k, z, &mut buf);
            for g in &buf {
                worst = worst.max(g.value);
                if !g.is_active() {
                    continue;
                }
                penalty += mu * g.value * g.value;
                // Dense gradient over the stage variables (x_k, u_k).
                let mut dense = DVector::zeros(dim);
                for &(i, v) in &g.dx {
                    dense[i] += v;
                }
                if !terminal {
                    for &(j, v) in &g.du {
                        dense[nx + j] += v;
                    }
                }
                let scale = 2.0 * mu * g.value;
                for i in 0..nx {
                    gradient[xo + i] += scale * dense[i];
                }
                if !terminal {
                    for j in 0..nu {
                        gradient[uo + j] += scale * dense[nx + j];
                    }
                }
                h.ger(2.0 * mu, &dense, &dense, 1.0);
            }

            if gradient.rows(xo, nx).iter().any(|v: &f64| !v.is_finite()) || h.iter().any(|v: &f64| !v.is_finite()) {
                return Err(OcpError::NonFinite { node: k });
            }
            hessian.push(h);
        }

        let objective = cost + penalty;
        if !objective.is_finite() {
            return Err(OcpError::NonFinite { node: n });
        }
        Ok(NlpEval {
            objective,
            cost,
            penalty,
            gradient,
            residuals,
            dyn_x,
            dyn_u,
            hessian,
            max_violation: worst,
        })
    }

    /// Dense `∂c/∂z` assembled from the stage blocks of `eval`.
    pub fn equality_jacobian_dense(&self, eval: &NlpEval) -> DMatrix<f64> {
        let l = self.layout();
        let (nx, nu) = (l.nx, l.nu);
        let mut j = DMatrix::zeros(l.n_equalities(), l.len());
        for i in 0..nx {
            j[(i, i)] = 1.0;
        }
        for k in 0..l.n {
            let row = (k + 1) * nx;
            j.view_mut((row, l.state_offset(k)), (nx, nx)).copy_from(&eval.dyn_x[k]);
            j.view_mut((row, l.input_offset(k)), (nx, nu)).copy_from(&eval.dyn_u[k]);
            for i in 0..nx {
                j[(row + i, l.state_offset(k + 1) + i)] = -1.0;
            }
        }
        j
    }
}
