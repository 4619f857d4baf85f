//! Structured solve of the equality-constrained Gauss-Newton QP.
//!
//! The multiple-shooting QP is an LQ optimal-control problem
//!
//! ```text
//! min Σ ½[δx;δu]ᵀH_k[δx;δu] + q_kᵀδx + r_kᵀδu + ½δx_NᵀH_Nδx_N + q_Nᵀδx_N
//! s.t. δx_0 = −c_0,  δx_{k+1} = A_k δx_k + B_k δu_k + c_{k+1}
//! ```
//!
//! solved by a backward Riccati sweep and a forward rollout, `O(N·nx³)`.

use nalgebra::{DMatrix, DVector};

use crate::ocp::{NlpEval, Ocp};

pub(crate) struct QpStep {
    pub dz: DVector<f64>,
    /// Largest absolute QP multiplier of the defect constraints.
    pub max_multiplier: f64,
}

/// Fails with the node index if `R + BᵀPB` is not positive definite.
pub(crate) fn solve_qp(ocp: &Ocp, eval: &NlpEval, reg: f64) -> Result<QpStep, usize> {
    let layout = ocp.layout();
    let (nx, nu, n) = (layout.nx, layout.nu, layout.n);
    let grad = &eval.gradient;
    let res = &eval.residuals;

    let eye_x = DMatrix::<f64>::identity(nx, nx);
    let eye_u = DMatrix::<f64>::identity(nu, nu);

    let mut p_mat = &eval.hessian[n] + &eye_x * reg;
    let mut p_vec = grad.rows(layout.state_offset(n), nx).into_owned();
    let mut ps = vec![DMatrix::zeros(0, 0); n + 1];
    let mut pv = vec![DVector::zeros(0); n + 1];
    ps[n] = p_mat.clone();
    pv[n] = p_vec.clone();
    let mut gains = vec![DMatrix::zeros(nu, nx); n];
    let mut ffwd = vec![DVector::zeros(nu); n];

    for k in (0..n).rev() {
        let h = &eval.hessian[k];
        let q = h.view((0, 0), (nx, nx)) + &eye_x * reg;
        let s = h.view((nx, 0), (nu, nx));
        let r = h.view((nx, nx), (nu, nu)) + &eye_u * reg;
        let a = &eval.dyn_x[k];
        let b = &eval.dyn_u[k];
        let d = res.rows((k + 1) * nx, nx);
        let gx = grad.rows(layout.state_offset(k), nx);
        let gu = grad.rows(layout.input_offset(k), nu);

        let pa = &p_mat * a;
        let pb = &p_mat * b;
        let qxx = q + a.transpose() * &pa;
        let qux = s + b.transpose() * &pa;
        let quu = r + b.transpose() * &pb;
        let pd = &p_mat * d + &p_vec;
        let qx = gx + a.transpose() * &pd;
        let qu = gu + b.transpose() * &pd;

        if ocp.pinned[k].is_some() {
            p_mat = qxx;
            p_vec = qx;
        } else {
            let chol = quu.cholesky().ok_or(k)?;
            let kk = -chol.solve(&qux);
            let kf = -chol.solve(&qu);
            p_mat = &qxx + qux.transpose() * &kk;
            p_vec = &qx + qux.transpose() * &kf;
            gains[k] = kk;
            ffwd[k] = kf;
        }
        p_mat = (&p_mat + p_mat.transpose()) * 0.5;
        ps[k] = p_mat.clone();
        pv[k] = p_vec.clone();
    }

    let mut dz = DVector::zeros(layout.len());
    let mut dx = -res.rows(0, nx).into_owned();
    let mut max_multiplier = 0.0f64;
    dz.rows_mut(0, nx).copy_from(&dx);
    for k in 0..n {
        let du = &gains[k] * &dx + &ffwd[k];
        let next = &eval.dyn_x[k] * &dx + &eval.dyn_u[k] * &du + res.rows((k + 1) * nx, nx);
        dz.rows_mut(layout.input_offset(k), nu).copy_from(&du);
        dz.rows_mut(layout.state_offset(k + 1), nx).copy_from(&next);
        let lambda = &ps[k + 1] * &next + &pv[k + 1];
        max_multiplier = max_multiplier.max(lambda.amax());
        dx = next;
    }
    if dz.iter().any(|v| !v.is_finite()) {
        return Err(n);
    }
    Ok(QpStep { dz, max_multiplier })
}

/// Adjoint multipliers that make the state part of `∇L` vanish, and the
/// resulting input stationarity `max_k ‖∇_{u_k} f + B_kᵀλ_{k+1}‖_∞` over the
/// free (unpinned) inputs.
pub(crate) fn reduced_gradient_norm(ocp: &Ocp, eval: &NlpEval) -> f64 {
    let layout = ocp.layout();
    let (nx, nu, n) = (layout.nx, layout.nu, layout.n);
    let grad = &eval.gradient;
    let mut lambda = grad.rows(layout.state_offset(n), nx).into_owned();
    let mut worst = 0.0f64;
    for k in (0..n).rev() {
        if ocp.pinned[k].is_none() {
            let gu = grad.rows(layout.input_offset(k), nu) + eval.dyn_u[k].transpose() * &lambda;
            worst = worst.max(gu.amax());
        }
        lambda = grad.rows(layout.state_offset(k), nx) + eval.dyn_x[k].transpose() * &lambda;
    }
    worst
}
