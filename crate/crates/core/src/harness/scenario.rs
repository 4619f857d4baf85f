use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DroneInput, ModelId, Vehicle, VehicleParams};
use crate::ocp::{Corridor, DroneGoal, OcpSpec, SphereObstacle};
use crate::schemes::{EmergencyStyle, SchemeConfig, SchemeKind};
use crate::simulator::{DelayModel, MismatchModel};
use crate::solver::SqpSettings;
use crate::tracking::{design_gain, FeedbackGain, InputBounds, PlanarFrame, TrackingError};

pub const SCHEMA_VERSION: u32 = 1;

/// Validation failure naming the offending fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{message} (fields: {})", fields.join(", "))]
pub struct FieldError {
    pub fields: Vec<String>,
    pub message: String,
}

impl FieldError {
    pub fn new(fields: &[&str], message: impl Into<String>) -> Self {
        Self {
            fields: fields.iter().map(|f| f.to_string()).collect(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeTiming {
    /// Control period, s.
    pub ts: f64,
    pub m: usize,
    /// Optional explicit `m · ts`, checked against the other two.
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerSpec {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    /// Linearization state; defaults to hover at the start (drone) or
    /// straight driving at the origin (truck-trailer).
    #[serde(default)]
    pub design_state: Option<Vec<f64>>,
    #[serde(default)]
    pub design_input: Option<Vec<f64>>,
    /// Truck-trailer design speed, m/s.
    #[serde(default = "default_design_speed")]
    pub design_speed: f64,
}

fn default_design_speed() -> f64 {
    0.5
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_hold() -> f64 {
    1.0
}
fn default_jackknife() -> f64 {
    std::f64::consts::FRAC_PI_2
}
fn default_substeps() -> usize {
    10
}
fn default_ramp() -> f64 {
    0.5
}

/// One experiment: vehicle, environment, problem, scheme timing, delays,
/// plant mismatch and tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub name: String,
    pub model: ModelId,
    #[serde(default)]
    pub params: VehicleParams,
    pub initial_state: Vec<f64>,
    /// Drone: goal position. Truck-trailer: goal state.
    pub goal: Vec<f64>,
    /// Speed of the drone's moving reference point, m/s.
    #[serde(default)]
    pub cruise_speed: f64,
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub obstacles: Vec<SphereObstacle>,
    #[serde(default)]
    pub corridors: Vec<Corridor>,
    pub ocp: OcpSpec,
    pub scheme: SchemeTiming,
    pub delay: DelayModel,
    #[serde(default)]
    pub mismatch: MismatchModel,
    pub tracker: TrackerSpec,
    #[serde(default)]
    pub solver: SqpSettings,
    /// Simulated time, s.
    pub duration: f64,
    /// Position distance to the goal that ends the run, m.
    #[serde(default)]
    pub goal_tolerance: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Simulated time kept after an emergency starts, s.
    #[serde(default = "default_hold")]
    pub emergency_hold: f64,
    #[serde(default = "default_jackknife")]
    pub jackknife_limit: f64,
    #[serde(default = "default_substeps")]
    pub plant_substeps: usize,
    /// Truck-trailer emergency ramp-down time, s.
    #[serde(default = "default_ramp")]
    pub emergency_ramp: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, FieldError> {
        serde_json::from_str(text).map_err(|e| FieldError::new(&["scenario"], format!("parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, FieldError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FieldError::new(&["scenario"], format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }

    pub fn nx(&self) -> usize {
        self.model.nx()
    }

    pub fn nu(&self) -> usize {
        self.model.nu()
    }

    pub fn delta(&self) -> f64 {
        self.scheme.m as f64 * self.scheme.ts
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.initial_state)
    }

    pub fn vehicle(&self) -> Vehicle {
        Vehicle::new(self.model, &self.params)
    }

    pub fn drone_goal(&self) -> DroneGoal {
        let p = |v: &[f64]| [v[0], v[1], v[2]];
        DroneGoal {
            start: p(&self.initial_state),
            goal: p(&self.goal),
            cruise_speed: self.cruise_speed,
            yaw: self.yaw,
        }
    }

    /// Input that holds the vehicle still.
    pub fn trim_input(&self) -> DVector<f64> {
        match self.model {
            ModelId::Drone => DroneInput::hover(self.params.g).to_vector(),
            ModelId::TruckTrailer => DVector::zeros(2),
        }
    }

    pub fn input_bounds(&self) -> InputBounds {
        InputBounds {
            lower: DVector::from_column_slice(&self.ocp.input_lower),
            upper: DVector::from_column_slice(&self.ocp.input_upper),
        }
    }

    pub fn scheme_config(&self, kind: SchemeKind) -> SchemeConfig {
        let emergency = match self.model {
            ModelId::Drone => EmergencyStyle::Hover {
                trim: self.trim_input(),
                zeroed: vec![3, 4, 5, 6, 7],
            },
            ModelId::TruckTrailer => EmergencyStyle::Ramp {
                duration: self.emergency_ramp,
            },
        };
        SchemeConfig {
            kind,
            ts: self.scheme.ts,
            m: self.scheme.m,
            ocp_dt: self.ocp.dt,
            emergency,
        }
    }

    /// LQR gain at the tracker design point.
    pub fn feedback_gain(&self) -> Result<FeedbackGain, TrackingError> {
        let model = self.vehicle();
        let (x, u, frame) = match self.model {
            ModelId::Drone => {
                let mut x = self.x0();
                x.rows_mut(3, 6).fill(0.0);
                x[8] = self.yaw;
                (x, self.trim_input(), None)
            }
            ModelId::TruckTrailer => (
                DVector::zeros(4),
                DVector::from_vec(vec![self.tracker.design_speed, 0.0]),
                Some(PlanarFrame { x: 0, y: 1, heading: 2 }),
            ),
        };
        let x = self
            .tracker
            .design_state
            .as_deref()
            .map(DVector::from_column_slice)
            .unwrap_or(x);
        let u = self
            .tracker
            .design_input
            .as_deref()
            .map(DVector::from_column_slice)
            .unwrap_or(u);
        let mut gain = design_gain(&model, &x, &u, self.scheme.ts, &self.tracker.q, &self.tracker.r)?;
        gain.frame = frame;
        Ok(gain)
    }

    /// Cross-field validation.
    pub fn validate(&self) -> Result<(), FieldError> {
        let err = |f: &[&str], m: String| Err(FieldError::new(f, m));
        if self.schema_version != SCHEMA_VERSION {
            return err(
                &["schema_version"],
                format!(
                    "unsupported schema version {}, expected {SCHEMA_VERSION}",
                    self.schema_version
                ),
            );
        }
        let (nx, nu) = (self.nx(), self.nu());
        self.params.validate().map_err(|m| FieldError::new(&["params"], m))?;
        if self.initial_state.len() != nx || self.initial_state.iter().any(|v| !v.is_finite()) {
            return err(&["initial_state"], format!("needs {nx} finite entries"));
        }
        let goal_len = match self.model {
            ModelId::Drone => 3,
            ModelId::TruckTrailer => 4,
        };
        if self.goal.len() != goal_len {
            return err(&["goal"], format!("needs {goal_len} entries, got {}", self.goal.len()));
        }
        let s = &self.scheme;
        if !(s.ts > 0.0) || !s.ts.is_finite() {
            return err(&["scheme.ts"], format!("must be positive, got {}", s.ts));
        }
        if s.m == 0 {
            return err(&["scheme.m"], "must be at least 1".into());
        }
        if let Some(d) = s.delta {
            if (d - self.delta()).abs() > 1e-9 {
                return err(
                    &["scheme.delta", "scheme.m", "scheme.ts"],
                    format!("delta = {d} differs from m · ts = {}", self.delta()),
                );
            }
        }
        self.ocp.validate(nx, nu).map_err(|m| FieldError::new(&["ocp"], m))?;
        self.delay.validate().map_err(|m| FieldError::new(&["delay"], m))?;
        self.mismatch
            .validate(nx, nu)
            .map_err(|m| FieldError::new(&["mismatch"], m))?;
        self.solver
            .validate()
            .map_err(|m| FieldError::new(&["solver"], m.to_string()))?;
        if self.tracker.q.len() != nx || self.tracker.r.len() != nu {
            return err(&["tracker.q", "tracker.r"], format!("need {nx} and {nu} entries"));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return err(&["duration"], format!("must be positive, got {}", self.duration));
        }
        if !(self.emergency_hold >= 0.0) {
            return err(&["emergency_hold"], "must be non-negative".into());
        }
        if !(self.jackknife_limit > 0.0) {
            return err(&["jackknife_limit"], "must be positive".into());
        }
        if self.plant_substeps == 0 {
            return err(&["plant_substeps"], "must be at least 1".into());
        }
        match self.model {
            ModelId::Drone => {
                if !self.corridors.is_empty() {
                    return err(&["corridors"], "corridors apply to the truck-trailer only".into());
                }
                if self.obstacles.iter().any(|o| !(o.radius > 0.0)) {
                    return err(&["obstacles"], "obstacle radii must be positive".into());
                }
            }
            ModelId::TruckTrailer => {
                if self.corridors.is_empty() {
                    return err(&["corridors"], "the truck-trailer needs at least one corridor".into());
                }
                if !self.obstacles.is_empty() {
                    return err(&["obstacles"], "sphere obstacles apply to the drone only".into());
                }
            }
        }
        Ok(())
    }

    /// Validation including the scheme-specific rules for `kind`.
    pub fn validate_for(&self, kind: SchemeKind) -> Result<(), FieldError> {
        self.validate()?;
        self.scheme_config(kind)
            .validate()
            .map_err(|e| FieldError::new(&["scheme.m", "scheme.ts", "ocp.dt"], e.to_string()))
    }
}
