use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_step_with, Dynamics, DynamicsError, ModelId, Vehicle, VehicleParams};

/// Differences between the simulated plant and the nominal planning model.
/// Empty vectors mean "none" (unit gains, zero noise, zero disturbance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MismatchModel {
    /// Per-input actuator gain.
    pub input_gain: Vec<f64>,
    pub g_scale: f64,
    pub l1_scale: f64,
    pub m0_scale: f64,
    /// Per-state std of the noise added after every control period.
    pub process_noise: Vec<f64>,
    pub measurement_noise: Vec<f64>,
    /// Constant term added to the state derivative.
    pub disturbance: Vec<f64>,
}

impl Default for MismatchModel {
    fn default() -> Self {
        Self {
            input_gain: Vec::new(),
            g_scale: 1.0,
            l1_scale: 1.0,
            m0_scale: 1.0,
            process_noise: Vec::new(),
            measurement_noise: Vec::new(),
            disturbance: Vec::new(),
        }
    }
}

impl MismatchModel {
    pub fn validate(&self, nx: usize, nu: usize) -> Result<(), String> {
        let check_len = |name: &str, v: &[f64], n: usize| {
            if v.is_empty() || v.len() == n {
                Ok(())
            } else {
                Err(format!("mismatch.{name} has {} entries, expected {n}", v.len()))
            }
        };
        check_len("input_gain", &self.input_gain, nu)?;
        check_len("process_noise", &self.process_noise, nx)?;
        check_len("measurement_noise", &self.measurement_noise, nx)?;
        check_len("disturbance", &self.disturbance, nx)?;
        for (name, s) in [
            ("g_scale", self.g_scale),
            ("l1_scale", self.l1_scale),
            ("m0_scale", self.m0_scale),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(format!("mismatch.{name} must be positive, got {s}"));
            }
        }
        if self.input_gain.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err("mismatch.input_gain entries must be positive".into());
        }
        let stds = self.process_noise.iter().chain(&self.measurement_noise);
        if stds.into_iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err("noise standard deviations must be finite and ≥ 0".into());
        }
        if self.disturbance.iter().any(|d| !d.is_finite()) {
            return Err("mismatch.disturbance must be finite".into());
        }
        Ok(())
    }

    pub fn is_nominal(&self) -> bool {
        self.input_gain.iter().all(|&g| g == 1.0)
            && self.g_scale == 1.0
            && self.l1_scale == 1.0
            && self.m0_scale == 1.0
            && self.process_noise.iter().all(|&s| s == 0.0)
            && self.measurement_noise.iter().all(|&s| s == 0.0)
            && self.disturbance.iter().all(|&d| d == 0.0)
    }

    pub fn plant_params(&self, nominal: &VehicleParams) -> VehicleParams {
        VehicleParams {
            g: nominal.g * self.g_scale,
            l1: nominal.l1 * self.l1_scale,
            m0: nominal.m0 * self.m0_scale,
        }
    }
}

/// The simulated vehicle: perturbed parameters, actuator gains and a
/// constant disturbance, integrated with RK4 substeps.
#[derive(Debug, Clone)]
pub struct Plant {
    pub model: Vehicle,
    input_gain: Option<DVector<f64>>,
    disturbance: Option<DVector<f64>>,
    substeps: usize,
}

impl Plant {
    pub fn new(id: ModelId, nominal: &VehicleParams, mismatch: &MismatchModel, substeps: usize) -> Self {
        let model = Vehicle::new(id, &mismatch.plant_params(nominal));
        let non_empty = |v: &[f64]| (!v.is_empty()).then(|| DVector::from_column_slice(v));
        Self {
            model,
            input_gain: non_empty(&mismatch.input_gain),
            disturbance: non_empty(&mismatch.disturbance),
            substeps: substeps.max(1),
        }
    }

    /// Effective state derivative seen by the plant.
    pub fn ode(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        let u_eff = match &self.input_gain {
            Some(g) => u.component_mul(g),
            None => u.clone(),
        };
        let mut dx = self.model.ode(x, &u_eff)?;
        if let Some(d) = &self.disturbance {
            dx += d;
        }
        Ok(dx)
    }

    /// Advances the plant by `ts` under a constant input.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, ts: f64) -> Result<DVector<f64>, DynamicsError> {
        let h = ts / self.substeps as f64;
        let mut x = x.clone();
        for _ in 0..self.substeps {
            x = rk4_step_with(|x, u| self.ode(x, u), &x, u, h)?;
        }
        Ok(x)
    }
}

/// Additive Gaussian noise from one dedicated stream.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    std: Vec<f64>,
    rng: ChaCha8Rng,
    draws: u64,
}

impl NoiseStream {
    pub fn new(std: Vec<f64>, rng: ChaCha8Rng) -> Self {
        Self { std, rng, draws: 0 }
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn is_silent(&self) -> bool {
        self.std.iter().all(|&s| s == 0.0)
    }

    /// `x + N(0, diag(std²))`. Components with zero std draw nothing.
    pub fn perturb(&mut self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = x.clone();
        for (i, &s) in self.std.iter().enumerate() {
            if s > 0.0 {
                let n: f64 = StandardNormal.sample(&mut self.rng);
                self.draws += 1;
                out[i] += s * n;
            }
        }
        out
    }
}
