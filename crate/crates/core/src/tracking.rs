//! High-rate state feedback around the planned feedforward input.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{rk4_step_sensitivity, wrap_angle, Dynamics, DynamicsError};
use crate::schemes::{ActiveReference, ReferenceError, ReferenceSample};

const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackingError {
    #[error("linearization is not stabilizable: {0}")]
    NotStabilizable(String),
    #[error("Riccati iteration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("weights have wrong size: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
}

/// Planar position components whose error is rotated into the frame of the
/// reference heading before the gain is applied. The gain is designed at
/// heading zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanarFrame {
    pub x: usize,
    pub y: usize,
    pub heading: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain {
    /// `nu × nx`.
    pub k: DMatrix<f64>,
    /// State components whose error is wrapped to (−π, π].
    pub angles: Vec<usize>,
    pub frame: Option<PlanarFrame>,
}

impl FeedbackGain {
    pub fn zero(nx: usize, nu: usize) -> Self {
        Self {
            k: DMatrix::zeros(nu, nx),
            angles: Vec::new(),
            frame: None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.k.iter().all(|&v| v == 0.0)
    }

    /// Reference error `x_ref − x_meas` as seen by the gain.
    pub fn error(&self, x_ref: &DVector<f64>, x_meas: &DVector<f64>) -> DVector<f64> {
        let mut e = x_ref - x_meas;
        for &i in &self.angles {
            e[i] = wrap_angle(e[i]);
        }
        if let Some(f) = self.frame {
            let (s, c) = x_ref[f.heading].sin_cos();
            let local = Matrix2::new(c, s, -s, c) * Vector2::new(e[f.x], e[f.y]);
            e[f.x] = local.x;
            e[f.y] = local.y;
        }
        e
    }
}

/// Input bounds enforced after feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl InputBounds {
    pub fn unbounded(nu: usize) -> Self {
        Self {
            lower: DVector::from_element(nu, f64::NEG_INFINITY),
            upper: DVector::from_element(nu, f64::INFINITY),
        }
    }

    pub fn clamp(&self, u: &DVector<f64>) -> (DVector<f64>, bool) {
        let mut out = u.clone();
        let mut clamped = false;
        for i in 0..u.len() {
            let v = u[i].clamp(self.lower[i], self.upper[i]);
            if v != u[i] {
                clamped = true;
            }
            out[i] = v;
        }
        (out, clamped)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u_ff: DVector<f64>,
    pub u_fb: DVector<f64>,
    pub u: DVector<f64>,
    pub clamped: bool,
}

/// `u = clamp(u_ff + K·e)` for a given reference sample.
pub fn feedback_law(
    gain: &FeedbackGain,
    sample: &ReferenceSample,
    x_meas: &DVector<f64>,
    bounds: &InputBounds,
) -> ControlOutput {
    let u_fb = &gain.k * gain.error(&sample.state, x_meas);
    let (u, clamped) = bounds.clamp(&(&sample.input + &u_fb));
    ControlOutput {
        u_ff: sample.input.clone(),
        u_fb,
        u,
        clamped,
    }
}

pub fn feedback_control(
    gain: &FeedbackGain,
    reference: &ActiveReference,
    t: f64,
    x_meas: &DVector<f64>,
    bounds: &InputBounds,
) -> Result<ControlOutput, TrackingError> {
    let sample = reference.sample(t)?;
    Ok(feedback_law(gain, &sample, x_meas, bounds))
}

/// Infinite-horizon discrete LQR gain at the design point `(x, u)`.
pub fn design_gain(
    model: &dyn Dynamics,
    x: &DVector<f64>,
    u: &DVector<f64>,
    ts: f64,
    q: &[f64],
    r: &[f64],
) -> Result<FeedbackGain, TrackingError> {
    let (nx, nu) = (model.nx(), model.nu());
    if q.len() != nx {
        return Err(TrackingError::Dimension {
            expected: nx,
            got: q.len(),
        });
    }
    if r.len() != nu {
        return Err(TrackingError::Dimension {
            expected: nu,
            got: r.len(),
        });
    }
    let (_, a, b) = rk4_step_sensitivity(model, x, u, ts)?;
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(q));
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(r));
    let k = dlqr(&a, &b, &q, &r)?;
    Ok(FeedbackGain {
        k,
        angles: model.angle_indices().to_vec(),
        frame: None,
    })
}

/// Discrete LQR by iterating the Riccati map to a fixed point.
pub fn dlqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, TrackingError> {
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let bt_p = b.transpose() * &p;
        let s = r + &bt_p * b;
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| TrackingError::NotStabilizable("R + BᵀPB is not positive definite".into()))?;
        let k = chol.solve(&(&bt_p * a));
        let next = q + a.transpose() * &p * a - a.transpose() * p.transpose() * b * &k;
        let next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) || next.norm() > 1e14 {
            return Err(TrackingError::NotStabilizable("Riccati iterate diverged".into()));
        }
        let change = (&next - &p).norm();
        p = next;
        if change <= RICCATI_TOL * p.norm().max(1e-300) {
            let bt_p = b.transpose() * &p;
            let k = (r + &bt_p * b).cholesky().expect("checked above").solve(&(&bt_p * a));
            let rho = spectral_radius(&(a - b * &k));
            if !(rho < 1.0) {
                return Err(TrackingError::NotStabilizable(format!(
                    "closed-loop spectral radius {rho:.6}"
                )));
            }
            return Ok(k);
        }
    }
    Err(TrackingError::NoConvergence(RICCATI_MAX_ITER))
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}
