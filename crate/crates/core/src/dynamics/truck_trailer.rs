use nalgebra::{DMatrix, DVector, Vector2};

use super::{check_dims, Dynamics, DynamicsError};

/// Truck with one off-axle hitched trailer.
///
/// State `[p_x1, p_y1, θ1, θ0]` (trailer axle position, trailer heading,
/// truck heading), input `[v0, ω0]` (truck longitudinal and angular velocity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruckTrailerModel {
    /// Hitch to trailer axle, m.
    pub l1: f64,
    /// Truck axle to hitch, m.
    pub m0: f64,
}

impl Default for TruckTrailerModel {
    fn default() -> Self {
        Self { l1: 0.6, m0: 0.2 }
    }
}

impl TruckTrailerModel {
    /// Longitudinal trailer velocity.
    pub fn trailer_speed(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let beta = x[3] - x[2];
        u[0] * beta.cos() + self.m0 * u[1] * beta.sin()
    }

    /// Hitch point `p1 + L1·(cos θ1, sin θ1)`.
    pub fn hitch(&self, x: &DVector<f64>) -> Vector2<f64> {
        Vector2::new(x[0] + self.l1 * x[2].cos(), x[1] + self.l1 * x[2].sin())
    }

    /// Truck axle center, `M0` ahead of the hitch along the truck heading.
    pub fn truck_axle(&self, x: &DVector<f64>) -> Vector2<f64> {
        self.hitch(x) + self.m0 * Vector2::new(x[3].cos(), x[3].sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruckTrailerState {
    pub p1: Vector2<f64>,
    pub theta1: f64,
    pub theta0: f64,
}

impl TruckTrailerState {
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.p1.x, self.p1.y, self.theta1, self.theta0])
    }

    pub fn from_vector(x: &DVector<f64>) -> Result<Self, DynamicsError> {
        if x.len() != 4 {
            return Err(DynamicsError::Dimension {
                expected: 4,
                got: x.len(),
            });
        }
        Ok(Self {
            p1: Vector2::new(x[0], x[1]),
            theta1: x[2],
            theta0: x[3],
        })
    }

    /// Hitch angle `θ0 − θ1`.
    pub fn hitch_angle(&self) -> f64 {
        self.theta0 - self.theta1
    }

    pub fn is_jackknifed(&self, limit: f64) -> bool {
        self.hitch_angle().abs() >= limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruckTrailerInput {
    pub v0: f64,
    pub omega0: f64,
}

impl TruckTrailerInput {
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.v0, self.omega0])
    }
}

impl Dynamics for TruckTrailerModel {
    fn nx(&self) -> usize {
        4
    }

    fn nu(&self) -> usize {
        2
    }

    fn ode(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        check_dims(self, x, u)?;
        let (th1, th0) = (x[2], x[3]);
        let (v0, w0) = (u[0], u[1]);
        let (sb, cb) = (th0 - th1).sin_cos();
        let v1 = v0 * cb + self.m0 * w0 * sb;
        Ok(DVector::from_vec(vec![
            v1 * th1.cos(),
            v1 * th1.sin(),
            v0 / self.l1 * sb - self.m0 / self.l1 * w0 * cb,
            w0,
        ]))
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        check_dims(self, x, u)?;
        let (th1, th0) = (x[2], x[3]);
        let (v0, w0) = (u[0], u[1]);
        let (sb, cb) = (th0 - th1).sin_cos();
        let (s1, c1) = th1.sin_cos();
        let v1 = v0 * cb + self.m0 * w0 * sb;
        // ∂v1/∂θ0; ∂v1/∂θ1 is its negative.
        let dv1_dth0 = -v0 * sb + self.m0 * w0 * cb;
        let dth1_dth0 = v0 / self.l1 * cb + self.m0 / self.l1 * w0 * sb;

        let mut a = DMatrix::zeros(4, 4);
        a[(0, 2)] = -dv1_dth0 * c1 - v1 * s1;
        a[(0, 3)] = dv1_dth0 * c1;
        a[(1, 2)] = -dv1_dth0 * s1 + v1 * c1;
        a[(1, 3)] = dv1_dth0 * s1;
        a[(2, 2)] = -dth1_dth0;
        a[(2, 3)] = dth1_dth0;

        let mut b = DMatrix::zeros(4, 2);
        b[(0, 0)] = cb * c1;
        b[(0, 1)] = self.m0 * sb * c1;
        b[(1, 0)] = cb * s1;
        b[(1, 1)] = self.m0 * sb * s1;
        b[(2, 0)] = sb / self.l1;
        b[(2, 1)] = -self.m0 * cb / self.l1;
        b[(3, 1)] = 1.0;
        Ok((a, b))
    }

    fn angle_indices(&self) -> &[usize] {
        &[2, 3]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn eval(m: &TruckTrailerModel, x: [f64; 4], u: [f64; 2]) -> DVector<f64> {
        m.ode(&DVector::from_row_slice(&x), &DVector::from_row_slice(&u))
            .unwrap()
    }

    #[test]
    fn straight_driving() {
        let dx = eval(&TruckTrailerModel::default(), [0.0; 4], [1.0, 0.0]);
        assert_eq!(dx.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn aligned_turn_on_the_spot() {
        let m = TruckTrailerModel { l1: 1.0, m0: 0.2 };
        let w = 0.7;
        let dx = eval(&m, [0.3, -0.4, 0.5, 0.5], [0.0, w]);
        assert!(dx[0].abs() < 1e-15 && dx[1].abs() < 1e-15);
        assert!((dx[2] + 0.2 * w).abs() < 1e-15);
        assert_eq!(dx[3], w);
    }

    #[test]
    fn right_angle_trailer_speed() {
        let m = TruckTrailerModel { l1: 0.6, m0: 0.2 };
        let x = DVector::from_row_slice(&[0.0, 0.0, 0.0, FRAC_PI_2]);
        let u = DVector::from_row_slice(&[1.0, 0.5]);
        assert!((m.trailer_speed(&x, &u) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn straight_jacobian_entry() {
        let m = TruckTrailerModel::default();
        let (a, _) = m
            .jacobians(&DVector::zeros(4), &DVector::from_row_slice(&[1.0, 0.0]))
            .unwrap();
        assert_eq!(a[(0, 2)], 0.0);
    }

    #[test]
    fn geometry_points() {
        let m = TruckTrailerModel { l1: 0.6, m0: 0.2 };
        let x = DVector::from_row_slice(&[1.0, 2.0, 0.0, FRAC_PI_2]);
        let h = m.hitch(&x);
        assert!((h - Vector2::new(1.6, 2.0)).norm() < 1e-15);
        let t = m.truck_axle(&x);
        assert!((t - Vector2::new(1.6, 2.2)).norm() < 1e-15);
        let s = TruckTrailerState::from_vector(&x).unwrap();
        assert!(s.is_jackknifed(FRAC_PI_2));
    }
}
