//! β-weighted predictor–corrector scheme on the unreduced stage system
//! `K_R Ψ̇ + N(θ) Ψ = f(t)`, `J θ̈ + D θ̇ + K θ = T − ½ Ψᵀ Γ'(θ₅) Ψ e₅`.

use nalgebra::{DMatrix, DVector};

use crate::error::StepError;
use crate::model::{StageSystem, MASS_COUNT, ROTOR_MASS};

/// Electrical state `x_E = (Ψ̇; Ψ)` and mechanical state `x_M = (θ̇; θ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PcState {
    pub x_e: DVector<f64>,
    pub x_m: DVector<f64>,
    pub t: f64,
}

/// `K_E₂(θ) = [[K_R, N(θ)], [−I, 0]]`.
pub fn k_e2(stage: &StageSystem, theta5: f64) -> DMatrix<f64> {
    let d = stage.dim();
    let mut k = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        k[(i, i)] = stage.conductance[i];
        k[(d + i, i)] = -1.0;
    }
    k.view_mut((0, d), (d, d)).copy_from(&stage.n_matrix(theta5));
    k
}

/// `K_E₁ = diag(0, I)`.
pub fn k_e1(d: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(2 * d, 2 * d);
    for i in d..2 * d {
        k[(i, i)] = 1.0;
    }
    k
}

/// `K_M₁ = diag(J, I₆)`.
pub fn k_m1(stage: &StageSystem) -> DMatrix<f64> {
    let mut k = DMatrix::identity(2 * MASS_COUNT, 2 * MASS_COUNT);
    for i in 0..MASS_COUNT {
        k[(i, i)] = stage.mech.inertia[i];
    }
    k
}

/// `K_M₂ = [[D, K], [−I₆, 0]]`.
pub fn k_m2(stage: &StageSystem) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(2 * MASS_COUNT, 2 * MASS_COUNT);
    k.view_mut((0, 0), (MASS_COUNT, MASS_COUNT)).copy_from(&stage.mech.damping);
    k.view_mut((0, MASS_COUNT), (MASS_COUNT, MASS_COUNT)).copy_from(&stage.mech.stiffness);
    for i in 0..MASS_COUNT {
        k[(MASS_COUNT + i, i)] = -1.0;
    }
    k
}

pub fn g_e(stage: &StageSystem, t: f64) -> DVector<f64> {
    let d = stage.dim();
    let mut g = DVector::zeros(2 * d);
    g.rows_mut(0, d).copy_from(&stage.forcing_at(t));
    g
}

pub fn g_m(stage: &StageSystem, psi: &DVector<f64>, theta5: f64) -> DVector<f64> {
    let mut g = DVector::zeros(2 * MASS_COUNT);
    g.rows_mut(0, MASS_COUNT).copy_from(&stage.mech.torque);
    g[ROTOR_MASS] -= stage.torque_em(psi, theta5);
    g
}

/// One predictor–corrector step; `h = 0` returns the state unchanged.
pub fn pc_step(stage: &StageSystem, state: &PcState, h: f64, beta: f64) -> Result<PcState, StepError> {
    if h == 0.0 {
        return Ok(state.clone());
    }
    let d = stage.dim();
    let (x_e, x_m, t) = (&state.x_e, &state.x_m, state.t);
    let theta5 = x_m[MASS_COUNT + ROTOR_MASS];
    let theta5_pred = theta5 + h * x_m[ROTOR_MASS];

    let ke1 = k_e1(d);
    let lhs = &ke1 + k_e2(stage, theta5_pred) * (beta * h);
    let rhs = (&ke1 - k_e2(stage, theta5) * ((1.0 - beta) * h)) * x_e + (g_e(stage, t) * (1.0 - beta) + g_e(stage, t + h) * beta) * h;
    let singular = StepError::SingularUpdate { t, h, beta };
    let x_e_next = lhs.lu().solve(&rhs).ok_or(singular.clone())?;

    let km1 = k_m1(stage);
    let km2 = k_m2(stage);
    let psi_n = x_e.rows(d, d).into_owned();
    let psi_next = x_e_next.rows(d, d).into_owned();
    let g = g_m(stage, &psi_n, theta5) * (1.0 - beta) + g_m(stage, &psi_next, theta5_pred) * beta;
    let lhs = &km1 + &km2 * (beta * h);
    let rhs = (&km1 - &km2 * ((1.0 - beta) * h)) * x_m + g * h;
    let x_m_next = lhs.lu().solve(&rhs).ok_or(singular)?;

    let next = PcState {
        x_e: x_e_next,
        x_m: x_m_next,
        t: t + h,
    };
    if next.x_e.iter().chain(next.x_m.iter()).any(|v| !v.is_finite()) {
        return Err(StepError::NonFinite { t });
    }
    Ok(next)
}
