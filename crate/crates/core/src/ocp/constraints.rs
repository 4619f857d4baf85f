use nalgebra::{DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Penalty terms are active only above this value of `g`. Zero keeps the
/// penalty `μ·max(0, g)²` continuously differentiable.
pub const ACTIVATION_TOL: f64 = 0.0;

/// One scalar inequality `g(x, u) ≤ 0` linearized at the evaluation point.
/// Gradients are sparse `(component, ∂g/∂component)` lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Inequality {
    pub value: f64,
    pub dx: Vec<(usize, f64)>,
    pub du: Vec<(usize, f64)>,
}

impl Inequality {
    pub fn is_active(&self) -> bool {
        self.value > ACTIVATION_TOL
    }
}

/// A sphere moving with constant velocity: `center + velocity · (t − t_ref)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereObstacle {
    pub center: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    pub radius: f64,
}

impl SphereObstacle {
    pub fn center_after(&self, elapsed: f64) -> Vector3<f64> {
        Vector3::from(self.center) + Vector3::from(self.velocity) * elapsed
    }

    /// The same obstacle with its center advanced by `elapsed` seconds.
    pub fn advanced(&self, elapsed: f64) -> Self {
        let c = self.center_after(elapsed);
        Self {
            center: [c.x, c.y, c.z],
            ..*self
        }
    }
}

/// A free rectangle in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub center: [f64; 2],
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Corridor {
    /// Coordinates of `q` in the corridor frame.
    pub fn local(&self, q: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.heading.sin_cos();
        let d = q - Vector2::from(self.center);
        Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    /// Distance from `q` to the nearest edge, negative outside.
    pub fn signed_margin(&self, q: &Vector2<f64>) -> f64 {
        let l = self.local(q);
        (self.half_length - l.x.abs()).min(self.half_width - l.y.abs())
    }

    /// `q` lies strictly inside the rectangle shrunk by `margin` on every side.
    pub fn contains(&self, q: &Vector2<f64>, margin: f64) -> bool {
        self.signed_margin(q) > margin
    }

    pub fn corners(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.heading.sin_cos();
        let ax = Vector2::new(c, s) * self.half_length;
        let ay = Vector2::new(-s, c) * self.half_width;
        let o = Vector2::from(self.center);
        [o + ax + ay, o - ax + ay, o - ax - ay, o + ax - ay]
    }
}

/// A vehicle reference point `p1 + a1·d(θ1) + b1·n(θ1) + a0·d(θ0)` where `d`
/// is the heading unit vector and `n` its left normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootprintPoint {
    pub a1: f64,
    pub b1: f64,
    pub a0: f64,
}

impl FootprintPoint {
    pub fn position(&self, x: &DVector<f64>) -> Vector2<f64> {
        let (s1, c1) = x[2].sin_cos();
        let (s0, c0) = x[3].sin_cos();
        Vector2::new(
            x[0] + self.a1 * c1 - self.b1 * s1 + self.a0 * c0,
            x[1] + self.a1 * s1 + self.b1 * c1 + self.a0 * s0,
        )
    }

    /// `(∂q/∂θ1, ∂q/∂θ0)`; `∂q/∂p1` is the identity.
    fn angle_derivatives(&self, x: &DVector<f64>) -> (Vector2<f64>, Vector2<f64>) {
        let (s1, c1) = x[2].sin_cos();
        let (s0, c0) = x[3].sin_cos();
        (
            Vector2::new(-self.a1 * s1 - self.b1 * c1, self.a1 * c1 - self.b1 * s1),
            Vector2::new(-self.a0 * s0, self.a0 * c0),
        )
    }
}

/// Truck-trailer footprint: four trailer corners plus the truck axle.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub points: Vec<FootprintPoint>,
}

impl Footprint {
    pub fn truck_trailer(l1: f64, m0: f64, rear: f64, front: f64, half_width: f64) -> Self {
        let mut points = Vec::with_capacity(5);
        for a in [front, -rear] {
            for b in [half_width, -half_width] {
                points.push(FootprintPoint { a1: a, b1: b, a0: 0.0 });
            }
        }
        points.push(FootprintPoint {
            a1: l1,
            b1: 0.0,
            a0: m0,
        });
        Self { points }
    }

    pub fn positions(&self, x: &DVector<f64>) -> Vec<Vector2<f64>> {
        self.points.iter().map(|p| p.position(x)).collect()
    }

    /// The smallest signed margin of any point with respect to `corridor`.
    pub fn margin_in(&self, corridor: &Corridor, x: &DVector<f64>) -> f64 {
        self.points
            .iter()
            .map(|p| corridor.signed_margin(&p.position(x)))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Path constraint attached to one shooting node.
#[derive(Debug, Clone, PartialEq)]
pub enum PathConstraint {
    /// `lower ≤ u[index] ≤ upper`.
    InputBox { index: usize, lower: f64, upper: f64 },
    /// `lower ≤ x[index] ≤ upper`.
    StateBox { index: usize, lower: f64, upper: f64 },
    /// `|x[3] − x[2]| ≤ limit` (truck-trailer hitch angle).
    HitchAngle { limit: f64 },
    /// `‖x[0..3] − center‖ ≥ radius`.
    Sphere { center: Vector3<f64>, radius: f64 },
    /// Every footprint point inside `corridor` shrunk by `margin`.
    Corridor {
        corridor: Corridor,
        footprint: Footprint,
        margin: f64,
    },
}

impl PathConstraint {
    pub fn involves_input(&self) -> bool {
        matches!(self, PathConstraint::InputBox { .. })
    }

    /// Appends the scalar inequalities of this constraint at `(x, u)`.
    /// Input constraints are skipped when `u` is `None` (terminal node).
    pub fn evaluate(&self, x: &DVector<f64>, u: Option<&DVector<f64>>, out: &mut Vec<Inequality>) {
        match self {
            PathConstraint::InputBox { index, lower, upper } => {
                let Some(u) = u else { return };
                let v = u[*index];
                if upper.is_finite() {
                    out.push(Inequality {
                        value: v - upper,
                        dx: vec![],
                        du: vec![(*index, 1.0)],
                    });
                }
                if lower.is_finite() {
                    out.push(Inequality {
                        value: lower - v,
                        dx: vec![],
                        du: vec![(*index, -1.0)],
                    });
                }
            }
            PathConstraint::StateBox { index, lower, upper } => {
                let v = x[*index];
                if upper.is_finite() {
                    out.push(Inequality {
                        value: v - upper,
                        dx: vec![(*index, 1.0)],
                        du: vec![],
                    });
                }
                if lower.is_finite() {
                    out.push(Inequality {
                        value: lower - v,
                        dx: vec![(*index, -1.0)],
                        du: vec![],
                    });
                }
            }
            PathConstraint::HitchAngle { limit } => {
                let beta = x[3] - x[2];
                out.push(Inequality {
                    value: beta - limit,
                    dx: vec![(2, -1.0), (3, 1.0)],
                    du: vec![],
                });
                out.push(Inequality {
                    value: -beta - limit,
                    dx: vec![(2, 1.0), (3, -1.0)],
                    du: vec![],
                });
            }
            PathConstraint::Sphere { center, radius } => {
                let d = Vector3::new(x[0], x[1], x[2]) - center;
                let dist = d.norm();
                let n = if dist > 1e-12 {
                    d / dist
                } else {
                    Vector3::new(1.0, 0.0, 0.0)
                };
                out.push(Inequality {
                    value: radius - dist,
                    dx: vec![(0, -n.x), (1, -n.y), (2, -n.z)],
                    du: vec![],
                });
            }
            PathConstraint::Corridor {
                corridor,
                footprint,
                margin,
            } => {
                let (s, c) = corridor.heading.sin_cos();
                let hl = corridor.half_length - margin;
                let hw = corridor.half_width - margin;
                for p in &footprint.points {
                    let q = p.position(x);
                    let l = corridor.local(&q);
                    let (dq1, dq0) = p.angle_derivatives(x);
                    // Gradient rows of the local coordinates w.r.t. (px, py, θ1, θ0).
                    let gx = [c, s, c * dq1.x + s * dq1.y, c * dq0.x + s * dq0.y];
                    let gy = [-s, c, -s * dq1.x + c * dq1.y, -s * dq0.x + c * dq0.y];
                    for (value, grad, bound) in [(l.x, gx, hl), (l.y, gy, hw)] {
                        for sign in [1.0, -1.0] {
                            out.push(Inequality {
                                value: sign * value - bound,
                                dx: (0..4).map(|i| (i, sign * grad[i])).collect(),
                                du: vec![],
                            });
                        }
                    }
                }
            }
        }
    }
}
