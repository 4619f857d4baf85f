use std::sync::Arc;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{Corridor, CorridorAssignment, Footprint, Ocp, OcpError, PathConstraint, SphereObstacle};
use crate::dynamics::{DroneModel, TruckTrailerModel, VehicleParams};

/// Drone inflation radius, m.
pub const R_DRONE: f64 = 0.30;

/// Starting states may violate a constraint by at most this much.
const START_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateBound {
    pub index: usize,
    #[serde(default = "neg_inf")]
    pub lower: f64,
    #[serde(default = "pos_inf")]
    pub upper: f64,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}
fn pos_inf() -> f64 {
    f64::INFINITY
}

/// Trailer body extents measured from the trailer axle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrailerGeometry {
    pub rear: f64,
    pub front: f64,
    pub half_width: f64,
}

impl Default for TrailerGeometry {
    fn default() -> Self {
        Self {
            rear: 0.05,
            front: 0.4,
            half_width: 0.12,
        }
    }
}

/// Horizon, weights and constraint configuration of one use case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSpec {
    /// Control intervals.
    pub n: usize,
    /// Interval length, s.
    pub dt: f64,
    /// When given, must equal `n · dt`.
    #[serde(default)]
    pub horizon: Option<f64>,
    pub state_weight: Vec<f64>,
    pub input_weight: Vec<f64>,
    pub terminal_weight: Vec<f64>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    #[serde(default)]
    pub state_bounds: Vec<StateBound>,
    /// Vehicle inflation radius for sphere obstacles, m.
    #[serde(default = "default_radius")]
    pub vehicle_radius: f64,
    /// Extra clearance added to every geometric constraint, m.
    #[serde(default)]
    pub safety_margin: f64,
    #[serde(default)]
    pub hitch_limit: Option<f64>,
    #[serde(default)]
    pub trailer: TrailerGeometry,
}

fn default_radius() -> f64 {
    R_DRONE
}

impl OcpSpec {
    pub fn horizon_length(&self) -> f64 {
        self.n as f64 * self.dt
    }

    pub fn validate(&self, nx: usize, nu: usize) -> Result<(), String> {
        if self.n < 2 {
            return Err(format!("ocp.n must be ≥ 2, got {}", self.n));
        }
        if !(self.dt > 0.0) {
            return Err(format!("ocp.dt must be positive, got {}", self.dt));
        }
        if let Some(h) = self.horizon {
            if (h - self.horizon_length()).abs() > 1e-9 {
                return Err(format!(
                    "ocp.horizon = {h} differs from ocp.n · ocp.dt = {}",
                    self.horizon_length()
                ));
            }
        }
        for (name, v, len) in [
            ("ocp.state_weight", &self.state_weight, nx),
            ("ocp.terminal_weight", &self.terminal_weight, nx),
            ("ocp.input_weight", &self.input_weight, nu),
            ("ocp.input_lower", &self.input_lower, nu),
            ("ocp.input_upper", &self.input_upper, nu),
        ] {
            if v.len() != len {
                return Err(format!("{name} needs {len} entries, got {}", v.len()));
            }
        }
        if self
            .state_weight
            .iter()
            .chain(&self.terminal_weight)
            .chain(&self.input_weight)
            .any(|w| !(*w >= 0.0))
        {
            return Err("ocp weights must be non-negative".into());
        }
        if self.input_lower.iter().zip(&self.input_upper).any(|(l, u)| l > u) {
            return Err("ocp.input_lower exceeds ocp.input_upper".into());
        }
        if self.state_bounds.iter().any(|b| b.index >= nx) {
            return Err("ocp.state_bounds index out of range".into());
        }
        Ok(())
    }

    pub fn footprint(&self, params: &VehicleParams) -> Footprint {
        Footprint::truck_trailer(
            params.l1,
            params.m0,
            self.trailer.rear,
            self.trailer.front,
            self.trailer.half_width,
        )
    }

    fn box_constraints(&self) -> Vec<PathConstraint> {
        let mut out: Vec<PathConstraint> = self
            .input_lower
            .iter()
            .zip(&self.input_upper)
            .enumerate()
            .map(|(index, (&lower, &upper))| {
                let m = INPUT_BOUND_MARGIN.min(0.25 * (upper - lower));
                PathConstraint::InputBox {
                    index,
                    lower: lower + m,
                    upper: upper - m,
                }
            })
            .collect();
        out.extend(self.state_bounds.iter().map(|b| PathConstraint::StateBox {
            index: b.index,
            lower: b.lower,
            upper: b.upper,
        }));
        out
    }
}

/// Input bounds are tightened by this much inside the problem, so a plan
/// that meets the feasibility tolerance never asks for more than the
/// actuator limits.
pub const INPUT_BOUND_MARGIN: f64 = 1e-4;

/// The first state is fixed, so state-only constraints there cannot be
/// influenced and are left out of the problem.
fn drop_fixed_start_constraints(ocp: &mut Ocp) {
    ocp.constraints[0].retain(|c| c.involves_input());
}

/// Goal-directed reference for the drone: a point moving from `start`
/// towards `goal` at `cruise_speed`, then holding at `goal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneGoal {
    pub start: [f64; 3],
    pub goal: [f64; 3],
    pub cruise_speed: f64,
    #[serde(default)]
    pub yaw: f64,
}

impl DroneGoal {
    pub fn reference_at(&self, t: f64) -> DVector<f64> {
        let start = Vector3::from(self.start);
        let delta = Vector3::from(self.goal) - start;
        let dist = delta.norm();
        let mut x = DVector::zeros(9);
        let (p, v) = if dist < 1e-12 || self.cruise_speed <= 0.0 {
            (start, Vector3::zeros())
        } else {
            let dir = delta / dist;
            let s = self.cruise_speed * t.max(0.0);
            if s >= dist {
                (start + delta, Vector3::zeros())
            } else {
                (start + dir * s, dir * self.cruise_speed)
            }
        };
        x.rows_mut(0, 3).copy_from(&p);
        x.rows_mut(3, 3).copy_from(&v);
        x[8] = self.yaw;
        x
    }
}

/// Transcribes the drone problem starting at `x0` at absolute time `t0`.
///
/// `obstacles` describe the environment as perceived at `t_obs`; node `k`
/// uses each center advanced to `t0 + k·dt`.
pub fn build_drone_ocp(
    x0: &DVector<f64>,
    t0: f64,
    obstacles: &[SphereObstacle],
    t_obs: f64,
    goal: &DroneGoal,
    cfg: &OcpSpec,
    params: &VehicleParams,
) -> Result<Ocp, OcpError> {
    cfg.validate(9, 4).map_err(OcpError::Invalid)?;
    let p0 = Vector3::new(x0[0], x0[1], x0[2]);
    for (j, o) in obstacles.iter().enumerate() {
        let r = cfg.vehicle_radius + o.radius;
        let d = (p0 - o.center_after(t0 - t_obs)).norm();
        if d < r - START_TOL {
            return Err(OcpError::InfeasibleStart(format!(
                "initial position is {d:.4} m from obstacle {j}, needs {r:.4} m"
            )));
        }
    }

    let model = DroneModel { g: params.g };
    let mut ocp = Ocp::new(Arc::new(model), cfg.n, cfg.dt, t0, x0.clone());
    ocp.cost.state_weight = DVector::from_column_slice(&cfg.state_weight);
    ocp.cost.input_weight = DVector::from_column_slice(&cfg.input_weight);
    ocp.cost.terminal_weight = DVector::from_column_slice(&cfg.terminal_weight);
    let hover = DVector::from_vec(vec![0.0, 0.0, 0.0, params.g]);
    ocp.cost.input_ref = vec![hover; cfg.n];
    let boxes = cfg.box_constraints();
    for k in 0..=cfg.n {
        let tk = ocp.node_time(k);
        ocp.cost.state_ref[k] = goal.reference_at(tk);
        let node = &mut ocp.constraints[k];
        node.extend(boxes.iter().cloned());
        for o in obstacles {
            node.push(PathConstraint::Sphere {
                center: o.center_after(tk - t_obs),
                radius: cfg.vehicle_radius + o.radius + cfg.safety_margin,
            });
        }
    }
    drop_fixed_start_constraints(&mut ocp);
    Ok(ocp)
}

/// Transcribes the fixed-time truck-trailer problem with per-node corridor
/// containment and a terminal cost towards `goal`.
pub fn build_tt_ocp(
    x0: &DVector<f64>,
    t0: f64,
    corridors: &[Corridor],
    assignment: &CorridorAssignment,
    goal: &DVector<f64>,
    cfg: &OcpSpec,
    params: &VehicleParams,
) -> Result<Ocp, OcpError> {
    cfg.validate(4, 2).map_err(OcpError::Invalid)?;
    if assignment.len() != cfg.n + 1 {
        return Err(OcpError::Invalid(format!(
            "corridor assignment has {} entries, needs {}",
            assignment.len(),
            cfg.n + 1
        )));
    }
    if let Some(&bad) = assignment.indices().iter().find(|&&i| i >= corridors.len()) {
        return Err(OcpError::Invalid(format!("corridor index {bad} out of range")));
    }
    let footprint = cfg.footprint(params);
    let first = &corridors[assignment.indices()[0]];
    let margin = footprint.margin_in(first, x0);
    if margin < -START_TOL {
        return Err(OcpError::InfeasibleStart(format!(
            "initial footprint is {:.4} m outside its corridor",
            -margin
        )));
    }

    let model = TruckTrailerModel {
        l1: params.l1,
        m0: params.m0,
    };
    let mut ocp = Ocp::new(Arc::new(model), cfg.n, cfg.dt, t0, x0.clone());
    ocp.cost.state_weight = DVector::from_column_slice(&cfg.state_weight);
    ocp.cost.input_weight = DVector::from_column_slice(&cfg.input_weight);
    ocp.cost.terminal_weight = DVector::from_column_slice(&cfg.terminal_weight);
    ocp.cost.state_ref = vec![goal.clone(); cfg.n + 1];
    let boxes = cfg.box_constraints();
    for k in 0..=cfg.n {
        let node = &mut ocp.constraints[k];
        node.extend(boxes.iter().cloned());
        if let Some(limit) = cfg.hitch_limit {
            node.push(PathConstraint::HitchAngle { limit });
        }
        node.push(PathConstraint::Corridor {
            corridor: corridors[assignment.indices()[k]],
            footprint: footprint.clone(),
            margin: cfg.safety_margin,
        });
    }
    drop_fixed_start_constraints(&mut ocp);
    Ok(ocp)
}
