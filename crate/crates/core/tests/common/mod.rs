#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use ftsim_core::equilibrium::solve_equilibrium;
use ftsim_core::integrators::{integrate, Control, IntegrationStats, Method, NewtonSettings};
use ftsim_core::model::{FaultModel, StageSystem};
use ftsim_core::state::FullState;

pub fn stage_one() -> (StageSystem, FullState) {
    let model = FaultModel::first_benchmark();
    let stage = model.stage(0).unwrap();
    let s0 = solve_equilibrium(&stage).unwrap().alpha_beta_state(&stage, 0.0);
    (stage, s0)
}

pub fn run_to(method: Method, stage: &StageSystem, s0: &FullState, h: f64, t_end: f64) -> FullState {
    let mut integ = method.build(stage, s0, &NewtonSettings::default()).unwrap();
    let mut stats = IntegrationStats::default();
    integrate(integ.as_mut(), h, t_end, usize::MAX, &mut stats, &mut |_| Control::Continue).unwrap();
    integ.full_state()
}

pub fn flat(s: &FullState) -> DVector<f64> {
    let parts = [&s.psi_dot, &s.psi, &s.theta_dot, &s.theta];
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

/// Relative error over the quantities every method carries as state:
/// all fluxes, the voltages of nodes and windings with a resistive path,
/// and the mechanics. Each block is normalised on its own.
pub fn rel_error(stage: &StageSystem, a: &FullState, b: &FullState) -> f64 {
    let keep: Vec<usize> = (0..stage.dim()).filter(|&i| stage.conductance[i] != 0.0).collect();
    let pick = |v: &DVector<f64>| DVector::from_iterator(keep.len(), keep.iter().map(|&i| v[i]));
    let (va, vb) = (pick(&a.psi_dot), pick(&b.psi_dot));
    [(&va, &vb), (&a.psi, &b.psi), (&a.theta_dot, &b.theta_dot), (&a.theta, &b.theta)]
        .iter()
        .map(|(x, y)| (*x - *y).amax() / y.amax())
        .fold(0.0, f64::max)
}

pub fn slope(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}


/// Implicit Euler applied directly to the unreduced DAE
/// `K_R Ψ̇ + N(θ₅)Ψ = f`, `J θ̈ + D θ̇ + K θ = T − ½ΨᵀN'Ψ e₅`, with a
/// finite-difference Newton solve. Unknowns `(Ψ̇, Ψ, θ̇, θ)` at `t + h`.
pub struct FullDaeEuler<'a> {
    pub stage: &'a StageSystem,
}

impl FullDaeEuler<'_> {
    pub fn residual(&self, x0: &DVector<f64>, x: &DVector<f64>, t1: f64, h: f64) -> DVector<f64> {
        let d = self.stage.dim();
        let mech = &self.stage.mech;
        let (v, psi) = (x.rows(0, d).into_owned(), x.rows(d, d).into_owned());
        let (w, th) = (x.rows(2 * d, 6).into_owned(), x.rows(2 * d + 6, 6).into_owned());
        let mut r = DVector::zeros(x.len());
        let kr = DMatrix::from_diagonal(&self.stage.conductance);
        r.rows_mut(0, d).copy_from(&(kr * &v + self.stage.n_matrix(th[4]) * &psi - self.stage.forcing_at(t1)));
        r.rows_mut(d, d).copy_from(&(&psi - x0.rows(d, d) - &v * h));
        let dn = self.stage.gamma_deriv(th[4], 1);
        let mut acc = (&w - x0.rows(2 * d, 6)).component_mul(&mech.inertia) / h + &mech.damping * &w + &mech.stiffness * &th - &mech.torque;
        acc[4] += 0.5 * psi.dot(&(dn * &psi));
        r.rows_mut(2 * d, 6).copy_from(&acc);
        r.rows_mut(2 * d + 6, 6).copy_from(&(&th - x0.rows(2 * d + 6, 6) - &w * h));
        r
    }

    pub fn step(&self, x0: &DVector<f64>, t1: f64, h: f64) -> DVector<f64> {
        let mut x = x0.clone();
        for _ in 0..20 {
            let r = self.residual(x0, &x, t1, h);
            let mut jac = DMatrix::zeros(x.len(), x.len());
            for c in 0..x.len() {
                let e = 1e-6 * (1.0 + x[c].abs());
                let mut xp = x.clone();
                xp[c] += e;
                jac.set_column(c, &((self.residual(x0, &xp, t1, h) - &r) / e));
            }
            let dx = jac.lu().solve(&(-r)).unwrap();
            x += &dx;
            if dx.amax() <= 1e-14 * x.amax() {
                break;
            }
        }
        x
    }
}

