//! Continuous-time vehicle models, their analytic Jacobians and fixed-step
//! Runge-Kutta integration with zero-order-hold inputs.
//!
//! Every model works on flat `DVector<f64>` states so that the transcription
//! and the solver can stay model agnostic. Typed views (`DroneState`,
//! `TruckTrailerState`, ...) convert to and from that representation.

mod drone;
mod truck_trailer;

pub use drone::{DroneInput, DroneModel, DroneState};
pub use truck_trailer::{TruckTrailerInput, TruckTrailerModel, TruckTrailerState};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pitch angles closer than this to ±π/2 are rejected as singular.
pub const SINGULAR_PITCH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("singular attitude: pitch {pitch} rad is within {tol} of ±π/2")]
    SingularAttitude { pitch: f64, tol: f64 },
    #[error("non-finite state derivative")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("integration step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("rollout needs at least one input")]
    EmptyInputs,
}

/// A continuous-time model `ẋ = f(x, u)`.
pub trait Dynamics: Send + Sync + std::fmt::Debug {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn ode(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError>;
    /// Analytic `(∂f/∂x, ∂f/∂u)`.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError>;
    /// State components that are angles (wrapped when forming errors).
    fn angle_indices(&self) -> &[usize] {
        &[]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    Drone,
    TruckTrailer,
}

impl ModelId {
    pub fn nx(self) -> usize {
        match self {
            ModelId::Drone => 9,
            ModelId::TruckTrailer => 4,
        }
    }

    pub fn nu(self) -> usize {
        match self {
            ModelId::Drone => 4,
            ModelId::TruckTrailer => 2,
        }
    }
}

/// Physical parameters shared by both vehicle families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Gravity, m/s².
    pub g: f64,
    /// Hitch-to-trailer-axle distance, m.
    pub l1: f64,
    /// Truck-axle-to-hitch distance, m.
    pub m0: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            g: 9.81,
            l1: 0.6,
            m0: 0.2,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.g > 0.0) {
            return Err(format!("g must be positive, got {}", self.g));
        }
        if !(self.l1 > 0.0) {
            return Err(format!("l1 must be positive, got {}", self.l1));
        }
        if !(self.m0 >= 0.0) {
            return Err(format!("m0 must be non-negative, got {}", self.m0));
        }
        Ok(())
    }
}

/// Either of the two vehicle models, selected by [`ModelId`].
#[derive(Debug, Clone, PartialEq)]
pub enum Vehicle {
    Drone(DroneModel),
    TruckTrailer(TruckTrailerModel),
}

impl Vehicle {
    pub fn new(id: ModelId, params: &VehicleParams) -> Self {
        match id {
            ModelId::Drone => Vehicle::Drone(DroneModel { g: params.g }),
            ModelId::TruckTrailer => Vehicle::TruckTrailer(TruckTrailerModel {
                l1: params.l1,
                m0: params.m0,
            }),
        }
    }

    pub fn id(&self) -> ModelId {
        match self {
            Vehicle::Drone(_) => ModelId::Drone,
            Vehicle::TruckTrailer(_) => ModelId::TruckTrailer,
        }
    }

    fn inner(&self) -> &dyn Dynamics {
        match self {
            Vehicle::Drone(m) => m,
            Vehicle::TruckTrailer(m) => m,
        }
    }
}

impl Dynamics for Vehicle {
    fn nx(&self) -> usize {
        self.inner().nx()
    }
    fn nu(&self) -> usize {
        self.inner().nu()
    }
    fn ode(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        self.inner().ode(x, u)
    }
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        self.inner().jacobians(x, u)
    }
    fn angle_indices(&self) -> &[usize] {
        self.inner().angle_indices()
    }
}

/// `ẍ = u` in one dimension: state `[position, velocity]`, input `[acceleration]`.
///
/// Linear and nilpotent, so RK4 with a held input is its exact discretization.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoubleIntegrator;

impl Dynamics for DoubleIntegrator {
    fn nx(&self) -> usize {
        2
    }
    fn nu(&self) -> usize {
        1
    }
    fn ode(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        check_dims(self, x, u)?;
        Ok(DVector::from_vec(vec![x[1], u[0]]))
    }
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        check_dims(self, x, u)?;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        Ok((a, b))
    }
}

pub(crate) fn check_dims(model: &dyn Dynamics, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), DynamicsError> {
    if x.len() != model.nx() {
        return Err(DynamicsError::Dimension {
            expected: model.nx(),
            got: x.len(),
        });
    }
    if u.len() != model.nu() {
        return Err(DynamicsError::Dimension {
            expected: model.nu(),
            got: u.len(),
        });
    }
    Ok(())
}

fn finite(v: DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(DynamicsError::NonFinite)
    }
}

/// One classical RK4 step of an arbitrary right-hand side with `u` held constant.
pub fn rk4_step_with<F>(f: F, x: &DVector<f64>, u: &DVector<f64>, h: f64) -> Result<DVector<f64>, DynamicsError>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>, DynamicsError>,
{
    if !(h > 0.0) {
        return Err(DynamicsError::NonPositiveStep(h));
    }
    let k1 = f(x, u)?;
    let k2 = f(&(x + &k1 * (0.5 * h)), u)?;
    let k3 = f(&(x + &k2 * (0.5 * h)), u)?;
    let k4 = f(&(x + &k3 * h), u)?;
    finite(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

pub fn rk4_step(
    model: &dyn Dynamics,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>, DynamicsError> {
    rk4_step_with(|x, u| model.ode(x, u), x, u, h)
}

/// `substeps` RK4 steps of size `h / substeps`.
pub fn integrate(
    model: &dyn Dynamics,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    substeps: usize,
) -> Result<DVector<f64>, DynamicsError> {
    let n = substeps.max(1);
    let hs = h / n as f64;
    let mut x = x.clone();
    for _ in 0..n {
        x = rk4_step(model, &x, u, hs)?;
    }
    Ok(x)
}

/// An RK4 step together with the exact Jacobians of the discrete map
/// `x⁺ = F(x, u)`, obtained by differentiating through the four stages.
pub fn rk4_step_sensitivity(
    model: &dyn Dynamics,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), DynamicsError> {
    if !(h > 0.0) {
        return Err(DynamicsError::NonPositiveStep(h));
    }
    let nx = model.nx();
    let eye = DMatrix::<f64>::identity(nx, nx);

    let k1 = model.ode(x, u)?;
    let (a1, b1) = model.jacobians(x, u)?;
    let k1x = a1;
    let k1u = b1;

    let x2 = x + &k1 * (0.5 * h);
    let k2 = model.ode(&x2, u)?;
    let (a2, b2) = model.jacobians(&x2, u)?;
    let k2x = &a2 * (&eye + &k1x * (0.5 * h));
    let k2u = &a2 * (&k1u * (0.5 * h)) + b2;

    let x3 = x + &k2 * (0.5 * h);
    let k3 = model.ode(&x3, u)?;
    let (a3, b3) = model.jacobians(&x3, u)?;
    let k3x = &a3 * (&eye + &k2x * (0.5 * h));
    let k3u = &a3 * (&k2u * (0.5 * h)) + b3;

    let x4 = x + &k3 * h;
    let k4 = model.ode(&x4, u)?;
    let (a4, b4) = model.jacobians(&x4, u)?;
    let k4x = &a4 * (&eye + &k3x * h);
    let k4u = &a4 * (&k3u * h) + b4;

    let next = finite(x + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0))?;
    let fx = &eye + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
    let fu = (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (h / 6.0);
    Ok((next, fx, fu))
}

/// Continuous-time Jacobians at `(x, u)`.
pub fn linearize(
    model: &dyn Dynamics,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
    model.jacobians(x, u)
}

/// States `x_0 … x_N` obtained by applying each input for `h` seconds.
pub fn rollout(
    model: &dyn Dynamics,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    h: f64,
) -> Result<Vec<DVector<f64>>, DynamicsError> {
    if inputs.is_empty() {
        return Err(DynamicsError::EmptyInputs);
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for u in inputs {
        let next = rk4_step(model, states.last().unwrap(), u, h)?;
        states.push(next);
    }
    Ok(states)
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let two_pi = 2.0 * PI;
    let mut w = (a + PI).rem_euclid(two_pi) - PI;
    if w <= -PI {
        w += two_pi;
    }
    w
}
