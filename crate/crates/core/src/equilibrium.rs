//! Operating points in the synchronous (xy) frame and the rotation to the
//! stationary αβ frame.
//!
//! With `θ = δ + ω_s t` and node pairs rotated by `ω_s t`, the network
//! equations become autonomous:
//! `K_R φ̇ + (K_L + ω_s K_j K_R + Γ(δ₅)) φ = f₀` and
//! `J δ̈ + D δ̇ + K δ + ½ φᵀ Γ'(δ₅) φ e₅ + D ω_s 𝟙 = T`.
//! Equilibria solve both with `φ̇ = δ̇ = δ̈ = 0`.

use std::f64::consts::PI;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::EquilibriumError;
use crate::model::{StageSystem, MASS_COUNT, ROTOR_MASS};
use crate::state::{power_angle_raw, wrap_pi, FullState};

const RESIDUAL_TOL: f64 = 1e-12;
const ACCEPT_TOL: f64 = 1e-8;
const MAX_ITER: usize = 50;

/// Autonomous synchronous-frame model of one stage.
#[derive(Clone, Debug)]
pub struct XYSystem<'a> {
    pub stage: &'a StageSystem,
    /// Block-diagonal node skew `diag([[0,−1],[1,0]], …, 0₄)`.
    pub k_j: DMatrix<f64>,
    pub f0: DVector<f64>,
    pub omega_s: f64,
    /// `K_L + ω_s K_j K_R`, the δ-independent part.
    base: DMatrix<f64>,
    electrical_scale: f64,
    torque_scale: f64,
}

/// Equilibrium in the synchronous frame.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EquilibriumPoint {
    pub phi: DVector<f64>,
    pub delta: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Scaled residual after each Newton iteration.
    pub history: Vec<f64>,
}

/// Stage-local positions `(α, β)` of every retained node.
pub fn node_pairs(stage: &StageSystem) -> Vec<(usize, usize)> {
    let n = stage.n_nodes;
    (0..n)
        .filter_map(|i| Some((stage.local_index(2 * i)?, stage.local_index(2 * i + 1)?)))
        .collect()
}

impl<'a> XYSystem<'a> {
    pub fn new(stage: &'a StageSystem) -> Self {
        let d = stage.dim();
        let mut k_j = DMatrix::zeros(d, d);
        for (a, b) in node_pairs(stage) {
            k_j[(a, b)] = -1.0;
            k_j[(b, a)] = 1.0;
        }
        let omega_s = stage.forcing.omega_s;
        let kr = DMatrix::from_diagonal(&stage.conductance);
        let base = &stage.k_l + &k_j * &kr * omega_s;
        let f0 = stage.forcing_xy();
        let electrical_scale = f0.amax().max(1.0);
        let torque_scale = stage.mech.torque.iter().map(|t| t.abs()).sum::<f64>().max(1.0);
        Self {
            stage,
            k_j,
            f0,
            omega_s,
            base,
            electrical_scale,
            torque_scale,
        }
    }

    /// `K_L + ω_s K_j K_R + Γ(δ₅)`.
    pub fn network_matrix(&self, delta5: f64) -> DMatrix<f64> {
        &self.base + self.stage.gamma(delta5)
    }

    /// Stacked electrical and mechanical residual at rest in the xy frame.
    pub fn residual(&self, phi: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        let d = self.stage.dim();
        let delta5 = delta[ROTOR_MASS];
        let mech = &self.stage.mech;
        let mut r = DVector::zeros(d + MASS_COUNT);
        r.rows_mut(0, d).copy_from(&(self.network_matrix(delta5) * phi - &self.f0));
        let omega_vec = DVector::from_element(MASS_COUNT, self.omega_s);
        let mut rm = &mech.stiffness * delta + &mech.damping * omega_vec - &mech.torque;
        rm[ROTOR_MASS] += self.stage.torque_em(phi, delta5);
        r.rows_mut(d, MASS_COUNT).copy_from(&rm);
        r
    }

    fn scaled_norm(&self, r: &DVector<f64>) -> f64 {
        let d = self.stage.dim();
        let e = r.rows(0, d).amax() / self.electrical_scale;
        let m = r.rows(d, MASS_COUNT).amax() / self.torque_scale;
        e.max(m)
    }

    fn jacobian(&self, phi: &DVector<f64>, delta5: f64) -> DMatrix<f64> {
        let d = self.stage.dim();
        let mut jac = DMatrix::zeros(d + MASS_COUNT, d + MASS_COUNT);
        jac.view_mut((0, 0), (d, d)).copy_from(&self.network_matrix(delta5));
        let dg_phi = self.stage.gamma_deriv(delta5, 1) * phi;
        jac.view_mut((0, d + ROTOR_MASS), (d, 1)).copy_from(&dg_phi);
        jac.view_mut((d, d), (MASS_COUNT, MASS_COUNT)).copy_from(&self.stage.mech.stiffness);
        let d2 = 0.5 * phi.dot(&(self.stage.gamma_deriv(delta5, 2) * phi));
        jac[(d + ROTOR_MASS, d + ROTOR_MASS)] += d2;
        jac.view_mut((d + ROTOR_MASS, 0), (1, d)).copy_from(&dg_phi.transpose());
        jac
    }

    /// Newton solve from a rotor-angle guess; the flux guess defaults to the
    /// linear solution at that angle.
    pub fn solve(&self, delta_guess: &DVector<f64>, phi_guess: Option<&DVector<f64>>) -> Result<EquilibriumPoint, EquilibriumError> {
        let d = self.stage.dim();
        let mut delta = delta_guess.clone();
        let mut phi = match phi_guess {
            Some(p) => p.clone(),
            None => self
                .network_matrix(delta[ROTOR_MASS])
                .lu()
                .solve(&self.f0)
                .ok_or(EquilibriumError::SingularJacobian)?,
        };
        let mut r = self.residual(&phi, &delta);
        let mut norm = self.scaled_norm(&r);
        let mut history = Vec::new();
        for iter in 1..=MAX_ITER {
            let jac = self.jacobian(&phi, delta[ROTOR_MASS]);
            let step = jac.lu().solve(&(-&r)).ok_or(EquilibriumError::SingularJacobian)?;
            let mut lambda = 1.0;
            loop {
                let phi_try = &phi + step.rows(0, d) * lambda;
                let delta_try = &delta + step.rows(d, MASS_COUNT) * lambda;
                let r_try = self.residual(&phi_try, &delta_try);
                let n_try = self.scaled_norm(&r_try);
                if n_try < norm || lambda < 1e-4 || norm <= RESIDUAL_TOL {
                    phi = phi_try;
                    delta = delta_try;
                    r = r_try;
                    norm = n_try;
                    break;
                }
                lambda *= 0.5;
            }
            history.push(norm);
            debug!("equilibrium iter {iter}: scaled residual {norm:.3e}, delta5 {:.6}", delta[ROTOR_MASS]);
            if norm <= RESIDUAL_TOL || (norm <= ACCEPT_TOL && history.len() > 1 && history[history.len() - 2] <= norm) {
                return Ok(EquilibriumPoint {
                    phi,
                    delta,
                    residual_norm: norm,
                    iterations: iter,
                    history,
                });
            }
            if !norm.is_finite() {
                break;
            }
        }
        if norm <= ACCEPT_TOL {
            return Ok(EquilibriumPoint {
                phi,
                delta,
                residual_norm: norm,
                iterations: MAX_ITER,
                history,
            });
        }
        Err(EquilibriumError::Divergence {
            residual: norm,
            iterations: MAX_ITER,
        })
    }

    /// Solves from `guess`; on failure retries over rotor angles
    /// `−π, −π + π/8, …, π` and keeps the converged root nearest the guess.
    pub fn solve_with_fallback(&self, delta_guess: &DVector<f64>) -> Result<EquilibriumPoint, EquilibriumError> {
        let first = self.solve(delta_guess, None);
        let Err(first_err) = first else { return first };
        let target = delta_guess[ROTOR_MASS];
        let mut best: Option<EquilibriumPoint> = None;
        for k in 0..=16 {
            let shift = -PI + k as f64 * PI / 8.0 - target;
            let guess = delta_guess.add_scalar(shift);
            if let Ok(eq) = self.solve(&guess, None) {
                let dist = wrap_pi(eq.delta[ROTOR_MASS] - target).abs();
                if best.as_ref().is_none_or(|b| dist < wrap_pi(b.delta[ROTOR_MASS] - target).abs()) {
                    best = Some(eq);
                }
            }
        }
        best.ok_or(first_err)
    }
}

/// Default guess: `δ = −0.8 𝟙`.
pub fn default_delta_guess() -> DVector<f64> {
    DVector::from_element(MASS_COUNT, -0.8)
}

/// Solves the operating point of a stage with the default guess and grid fallback.
pub fn solve_equilibrium(stage: &StageSystem) -> Result<EquilibriumPoint, EquilibriumError> {
    XYSystem::new(stage).solve_with_fallback(&default_delta_guess())
}

/// Rotates synchronous-frame quantities into the stationary frame at time `t`.
/// Returns `(Ψ, θ)`.
pub fn to_alpha_beta(stage: &StageSystem, t: f64, phi: &DVector<f64>, delta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let omega = stage.forcing.omega_s;
    let (s, c) = (omega * t).sin_cos();
    let mut psi = phi.clone();
    for (a, b) in node_pairs(stage) {
        psi[a] = c * phi[a] - s * phi[b];
        psi[b] = s * phi[a] + c * phi[b];
    }
    (psi, delta.add_scalar(omega * t))
}

/// Inverse of [`to_alpha_beta`]. Returns `(φ, δ)`.
pub fn from_alpha_beta(stage: &StageSystem, t: f64, psi: &DVector<f64>, theta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let omega = stage.forcing.omega_s;
    let (s, c) = (omega * t).sin_cos();
    let mut phi = psi.clone();
    for (a, b) in node_pairs(stage) {
        phi[a] = c * psi[a] + s * psi[b];
        phi[b] = -s * psi[a] + c * psi[b];
    }
    (phi, theta.add_scalar(-omega * t))
}

impl EquilibriumPoint {
    /// Stationary-frame state at time `t` on the steady rotation through this
    /// point: `θ̇ = ω_s 𝟙`, `Ψ̇ = ω_s R(ω_s t) K_j φ`.
    pub fn alpha_beta_state(&self, stage: &StageSystem, t: f64) -> FullState {
        let omega = stage.forcing.omega_s;
        let (psi, theta) = to_alpha_beta(stage, t, &self.phi, &self.delta);
        let mut rotated = DVector::zeros(stage.dim());
        for (a, b) in node_pairs(stage) {
            rotated[a] = -omega * self.phi[b];
            rotated[b] = omega * self.phi[a];
        }
        let (psi_dot, _) = to_alpha_beta(stage, t, &rotated, &self.delta);
        FullState {
            t,
            psi_dot,
            psi,
            theta_dot: DVector::from_element(MASS_COUNT, omega),
            theta,
        }
    }

    /// Power angle of the steady state in degrees, wrapped to `(−180, 180]`.
    pub fn power_angle_deg(&self, stage: &StageSystem) -> f64 {
        let s = self.alpha_beta_state(stage, 0.0);
        wrap_pi(power_angle_raw(s.rotor_angle(), s.node1_voltage(stage))).to_degrees()
    }

    /// Rotor quadrature-axis angle `δ₅ + 90°` in the synchronous frame.
    pub fn rotor_angle_deg(&self) -> f64 {
        wrap_pi(self.delta[ROTOR_MASS] + PI / 2.0).to_degrees()
    }

    pub fn torque_em(&self, stage: &StageSystem) -> f64 {
        stage.torque_em(&self.phi, self.delta[ROTOR_MASS])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FaultModel;

    fn stage(i: usize) -> StageSystem {
        FaultModel::first_benchmark().stage(i).unwrap()
    }

    #[test]
    fn residual_at_origin() {
        let st = stage(0);
        let xy = XYSystem::new(&st);
        let r = xy.residual(&DVector::zeros(st.dim()), &DVector::zeros(MASS_COUNT));
        let d = st.dim();
        assert_eq!(r.rows(0, d).into_owned(), -&xy.f0);
        assert_eq!(r.rows(d, MASS_COUNT).into_owned(), -&st.mech.torque);
    }

    #[test]
    fn mechanical_rows_sum_to_torque_mismatch() {
        let st = stage(0);
        let xy = XYSystem::new(&st);
        let phi = DVector::from_fn(st.dim(), |i, _| 10.0 * (i as f64 - 3.0));
        let delta = DVector::from_fn(MASS_COUNT, |i, _| 0.1 * i as f64 - 0.4);
        let r = xy.residual(&phi, &delta);
        let sum: f64 = r.rows(st.dim(), MASS_COUNT).sum();
        let expected = st.torque_em(&phi, delta[ROTOR_MASS]) - st.mech.torque.sum();
        assert!((sum - expected).abs() < 1e-6 * st.mech.torque.sum());
    }

    #[test]
    fn k_j_is_skew_on_node_blocks() {
        let st = stage(1);
        let xy = XYSystem::new(&st);
        assert_eq!(&xy.k_j, &(-xy.k_j.transpose()));
        assert_eq!(xy.k_j.rows(4, 4).amax(), 0.0);
    }

    #[test]
    fn stage_one_equilibrium_converges_quadratically() {
        let st = stage(0);
        let eq = solve_equilibrium(&st).unwrap();
        assert!(eq.residual_norm <= 1e-8);
        let r = XYSystem::new(&st).residual(&eq.phi, &eq.delta);
        assert!(r.rows(0, st.dim()).amax() <= 1e-8 * st.forcing_xy().amax());
        // torque balance
        let te = eq.torque_em(&st);
        assert!((te - st.mech.torque.sum()).abs() <= 1e-6 * te.abs());
        assert!(eq.iterations < 15, "{}", eq.iterations);
    }

    #[test]
    fn rotor_angle_fixes_the_point() {
        let st = stage(0);
        let xy = XYSystem::new(&st);
        let a = xy.solve(&default_delta_guess(), None).unwrap();
        let mut shifted = default_delta_guess();
        shifted[0] += 0.3;
        shifted[5] -= 0.2;
        let b = xy.solve(&shifted, None).unwrap();
        assert!((&a.delta - &b.delta).amax() < 1e-9);
        assert!((&a.phi - &b.phi).amax() < 1e-7 * a.phi.amax());
    }

    #[test]
    fn frame_rotation_identities() {
        let st = stage(0);
        let phi = DVector::from_fn(st.dim(), |i, _| (i as f64).sin() * 50.0);
        let delta = DVector::from_fn(MASS_COUNT, |i, _| -0.7 - 0.01 * i as f64);
        let (psi0, th0) = to_alpha_beta(&st, 0.0, &phi, &delta);
        assert_eq!(psi0, phi);
        assert_eq!(th0, delta);
        let period = 2.0 * PI / st.forcing.omega_s;
        let (psi_p, th_p) = to_alpha_beta(&st, period, &phi, &delta);
        assert!((&psi_p - &phi).amax() < 1e-12 * phi.amax());
        assert!((&th_p - delta.add_scalar(2.0 * PI)).amax() < 1e-12);
        let (psi, th) = to_alpha_beta(&st, 0.37, &phi, &delta);
        assert_eq!(psi.rows(6, 4), phi.rows(6, 4));
        let (phi_back, delta_back) = from_alpha_beta(&st, 0.37, &psi, &th);
        assert!((&phi_back - &phi).amax() <= 1e-12 * phi.amax());
        assert!((&delta_back - &delta).amax() <= 1e-12 * 200.0);
    }
}
