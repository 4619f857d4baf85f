use nalgebra::{DVector, Vector3};

use super::log::SimLog;
use crate::ocp::{Corridor, Footprint, SphereObstacle};

/// Static description of free space used for safety checks.
#[derive(Debug, Clone, PartialEq)]
pub enum Environment {
    Free,
    /// Obstacle positions are given at `t = 0`.
    Obstacles {
        obstacles: Vec<SphereObstacle>,
        vehicle_radius: f64,
    },
    /// Free space is the union of the corridors.
    Corridors {
        corridors: Vec<Corridor>,
        footprint: Footprint,
    },
}

impl Environment {
    /// Clearance of state `x` at time `t`: the distance to the nearest
    /// inflated obstacle surface, or the smallest margin of any footprint
    /// point inside the union of corridors. Negative means unsafe, `+∞` means
    /// nothing to collide with.
    pub fn clearance(&self, x: &DVector<f64>, t: f64) -> f64 {
        match self {
            Environment::Free => f64::INFINITY,
            Environment::Obstacles {
                obstacles,
                vehicle_radius,
            } => {
                let p = Vector3::new(x[0], x[1], x[2]);
                obstacles
                    .iter()
                    .map(|o| (p - o.center_after(t)).norm() - (vehicle_radius + o.radius))
                    .fold(f64::INFINITY, f64::min)
            }
            Environment::Corridors { corridors, footprint } => {
                if corridors.is_empty() {
                    return f64::INFINITY;
                }
                footprint
                    .positions(x)
                    .iter()
                    .map(|q| {
                        corridors
                            .iter()
                            .map(|c| c.signed_margin(q))
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyReport {
    /// Per tick, from the true state.
    pub clearance: Vec<f64>,
    pub min_clearance: f64,
    /// Tick indices with negative clearance.
    pub violations: Vec<usize>,
}

impl SafetyReport {
    pub fn is_safe(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_safety(log: &SimLog, env: &Environment) -> SafetyReport {
    let clearance: Vec<f64> = log.ticks.iter().map(|r| env.clearance(&r.x_true, r.t)).collect();
    let violations = clearance
        .iter()
        .enumerate()
        .filter(|(_, c)| **c < 0.0)
        .map(|(i, _)| i)
        .collect();
    let min_clearance = clearance.iter().copied().fold(f64::INFINITY, f64::min);
    SafetyReport {
        clearance,
        min_clearance,
        violations,
    }
}
