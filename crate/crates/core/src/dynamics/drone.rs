use nalgebra::{DMatrix, DVector, Vector3};

use super::{check_dims, wrap_angle, Dynamics, DynamicsError, SINGULAR_PITCH_TOL};

/// Quadrotor with body-rate and mass-normalized thrust inputs.
///
/// State `[p_x, p_y, p_z, v_x, v_y, v_z, φ, θ, ψ]`, input `[p, q, r, a_t]`.
/// Attitude uses ZYX (yaw-pitch-roll) Euler angles; `R = Rz(ψ)·Ry(θ)·Rx(φ)`
/// maps body to world and body rates relate to Euler rates by
/// `ω = S·[φ̇, θ̇, ψ̇]ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneModel {
    pub g: f64,
}

impl Default for DroneModel {
    fn default() -> Self {
        Self { g: 9.81 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Roll, pitch, yaw.
    pub att: Vector3<f64>,
}

impl DroneState {
    pub fn hover_at(p: Vector3<f64>, yaw: f64) -> Self {
        Self {
            p,
            v: Vector3::zeros(),
            att: Vector3::new(0.0, 0.0, yaw),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(9, self.p.iter().chain(self.v.iter()).chain(self.att.iter()).copied())
    }

    pub fn from_vector(x: &DVector<f64>) -> Result<Self, DynamicsError> {
        if x.len() != 9 {
            return Err(DynamicsError::Dimension {
                expected: 9,
                got: x.len(),
            });
        }
        Ok(Self {
            p: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
            att: Vector3::new(x[6], x[7], x[8]),
        })
    }

    /// Same state with all three angles wrapped to (−π, π].
    pub fn normalized(mut self) -> Self {
        self.att = self.att.map(wrap_angle);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneInput {
    pub rates: Vector3<f64>,
    pub thrust: f64,
}

impl DroneInput {
    pub fn hover(g: f64) -> Self {
        Self {
            rates: Vector3::zeros(),
            thrust: g,
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.rates.x, self.rates.y, self.rates.z, self.thrust])
    }
}

fn check_pitch(theta: f64) -> Result<(), DynamicsError> {
    if theta.abs() >= std::f64::consts::FRAC_PI_2 - SINGULAR_PITCH_TOL || !theta.is_finite() {
        Err(DynamicsError::SingularAttitude {
            pitch: theta,
            tol: SINGULAR_PITCH_TOL,
        })
    } else {
        Ok(())
    }
}

/// Third column of `R`, i.e. the body z-axis expressed in the world frame.
pub(crate) fn thrust_direction(phi: f64, theta: f64, psi: f64) -> Vector3<f64> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Vector3::new(cp * st * cf + sp * sf, sp * st * cf - cp * sf, ct * cf)
}

impl Dynamics for DroneModel {
    fn nx(&self) -> usize {
        9
    }

    fn nu(&self) -> usize {
        4
    }

    fn ode(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        check_dims(self, x, u)?;
        let (phi, theta, psi) = (x[6], x[7], x[8]);
        check_pitch(theta)?;
        let (p, q, r, a) = (u[0], u[1], u[2], u[3]);
        let t = thrust_direction(phi, theta, psi);
        let (sf, cf) = phi.sin_cos();
        let ct = theta.cos();
        let tt = theta.tan();
        let mut dx = DVector::zeros(9);
        dx[0] = x[3];
        dx[1] = x[4];
        dx[2] = x[5];
        dx[3] = a * t.x;
        dx[4] = a * t.y;
        dx[5] = a * t.z - self.g;
        dx[6] = p + sf * tt * q + cf * tt * r;
        dx[7] = cf * q - sf * r;
        dx[8] = (sf * q + cf * r) / ct;
        Ok(dx)
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        check_dims(self, x, u)?;
        let (phi, theta, psi) = (x[6], x[7], x[8]);
        check_pitch(theta)?;
        let (q, r, a) = (u[1], u[2], u[3]);
        let (sf, cf) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = psi.sin_cos();
        let tt = st / ct;
        let t = thrust_direction(phi, theta, psi);

        let mut ja = DMatrix::zeros(9, 9);
        ja[(0, 3)] = 1.0;
        ja[(1, 4)] = 1.0;
        ja[(2, 5)] = 1.0;

        ja[(3, 6)] = a * (-cp * st * sf + sp * cf);
        ja[(3, 7)] = a * (cp * ct * cf);
        ja[(3, 8)] = a * (-sp * st * cf + cp * sf);
        ja[(4, 6)] = a * (-sp * st * sf - cp * cf);
        ja[(4, 7)] = a * (sp * ct * cf);
        ja[(4, 8)] = a * (cp * st * cf + sp * sf);
        ja[(5, 6)] = a * (-ct * sf);
        ja[(5, 7)] = a * (-st * cf);

        let rate_mix = sf * q + cf * r;
        ja[(6, 6)] = cf * tt * q - sf * tt * r;
        ja[(6, 7)] = rate_mix / (ct * ct);
        ja[(7, 6)] = -sf * q - cf * r;
        ja[(8, 6)] = (cf * q - sf * r) / ct;
        ja[(8, 7)] = rate_mix * st / (ct * ct);

        let mut jb = DMatrix::zeros(9, 4);
        jb[(3, 3)] = t.x;
        jb[(4, 3)] = t.y;
        jb[(5, 3)] = t.z;
        jb[(6, 0)] = 1.0;
        jb[(6, 1)] = sf * tt;
        jb[(6, 2)] = cf * tt;
        jb[(7, 1)] = cf;
        jb[(7, 2)] = -sf;
        jb[(8, 1)] = sf / ct;
        jb[(8, 2)] = cf / ct;
        Ok((ja, jb))
    }

    fn angle_indices(&self) -> &[usize] {
        &[6, 7, 8]
    }
}
