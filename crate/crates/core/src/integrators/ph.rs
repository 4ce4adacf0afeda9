//! Port-Hamiltonian descriptor form of the reduced system:
//! `M ẋ = (P − Q) z(x) + (F − V) u(x)`, `y = (F + V)ᵀ z + (S − W) u` with
//! `V = S = W = 0`, state `x = (Ψ̃̇, Ψ̃, θ̇, θ, t)`.

use nalgebra::{DMatrix, DVector};

use crate::model::{MASS_COUNT, ROTOR_MASS};
use crate::reduction::ReducedSystem;
use crate::state::FullState;

/// Block offsets inside the descriptor state.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub p: usize,
}

impl Layout {
    pub fn v(&self) -> usize {
        0
    }
    pub fn psi(&self) -> usize {
        self.p
    }
    pub fn omega(&self) -> usize {
        2 * self.p
    }
    pub fn theta(&self) -> usize {
        2 * self.p + MASS_COUNT
    }
    pub fn time(&self) -> usize {
        2 * self.p + 2 * MASS_COUNT
    }
    pub fn dim(&self) -> usize {
        2 * self.p + 2 * MASS_COUNT + 1
    }
    pub fn rotor(&self) -> usize {
        self.theta() + ROTOR_MASS
    }
}

/// Descriptor matrices of the reduced stage plus the nonlinear effort map.
#[derive(Clone, Debug)]
pub struct PhSystem {
    pub red: ReducedSystem,
    pub layout: Layout,
    /// Diagonal of `M = diag(0, I, J, I, 1)`.
    pub mass: DVector<f64>,
    pub p_mat: DMatrix<f64>,
    pub q_mat: DMatrix<f64>,
    pub f_mat: DMatrix<f64>,
    /// `[[P, F], [−Fᵀ, W]]`
    pub a_big: DMatrix<f64>,
    /// `[[Q, V], [Vᵀ, S]]`
    pub b_big: DMatrix<f64>,
}

/// Effort vector with the pieces reused by the Jacobian.
pub struct Effort {
    pub z: DVector<f64>,
    pub n_tilde: DMatrix<f64>,
    pub dn_tilde: DMatrix<f64>,
    pub d2n_tilde: DMatrix<f64>,
}

impl PhSystem {
    pub fn new(red: ReducedSystem) -> Self {
        let layout = Layout { p: red.dim() };
        let (p, m) = (layout.p, layout.dim());
        let mech = &red.stage.mech;

        let mut mass = DVector::zeros(m);
        mass.rows_mut(layout.psi(), p).fill(1.0);
        mass.rows_mut(layout.omega(), MASS_COUNT).copy_from(&mech.inertia);
        mass.rows_mut(layout.theta(), MASS_COUNT).fill(1.0);
        mass[layout.time()] = 1.0;

        let mut p_mat = DMatrix::zeros(m, m);
        for (top, bottom, len) in [(layout.v(), layout.psi(), p), (layout.omega(), layout.theta(), MASS_COUNT)] {
            for i in 0..len {
                p_mat[(top + i, bottom + i)] = -1.0;
                p_mat[(bottom + i, top + i)] = 1.0;
            }
        }

        let mut q_mat = DMatrix::zeros(m, m);
        for i in 0..p {
            q_mat[(i, i)] = red.kr_tilde[i];
        }
        q_mat.view_mut((layout.omega(), layout.omega()), (MASS_COUNT, MASS_COUNT)).copy_from(&mech.damping);

        let mut f_mat = DMatrix::zeros(m, m);
        for i in (0..p).chain(layout.omega()..layout.omega() + MASS_COUNT) {
            f_mat[(i, i)] = 1.0;
        }
        f_mat[(layout.time(), layout.time())] = 1.0;

        let mut a_big = DMatrix::zeros(2 * m, 2 * m);
        a_big.view_mut((0, 0), (m, m)).copy_from(&p_mat);
        a_big.view_mut((0, m), (m, m)).copy_from(&f_mat);
        a_big.view_mut((m, 0), (m, m)).copy_from(&(-f_mat.transpose()));
        let mut b_big = DMatrix::zeros(2 * m, 2 * m);
        b_big.view_mut((0, 0), (m, m)).copy_from(&q_mat);

        Self {
            red,
            layout,
            mass,
            p_mat,
            q_mat,
            f_mat,
            a_big,
            b_big,
        }
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// `z(x) = (Ψ̃̇, Ñ Ψ̃, θ̇, K θ + ½ Ψ̃ᵀ Ñ' Ψ̃ e₅, 0)`.
    pub fn effort(&self, x: &DVector<f64>) -> Effort {
        let l = self.layout;
        let p = l.p;
        let [n_tilde, dn_tilde, d2n_tilde] = self.red.n_tilde.eval_with_derivs(x[l.rotor()]);
        let psi = x.rows(l.psi(), p);
        let mut z = DVector::zeros(l.dim());
        z.rows_mut(l.v(), p).copy_from(&x.rows(l.v(), p));
        z.rows_mut(l.psi(), p).copy_from(&(&n_tilde * psi));
        z.rows_mut(l.omega(), MASS_COUNT).copy_from(&x.rows(l.omega(), MASS_COUNT));
        let mut torque = &self.red.stage.mech.stiffness * x.rows(l.theta(), MASS_COUNT);
        torque[ROTOR_MASS] += 0.5 * psi.dot(&(&dn_tilde * psi));
        z.rows_mut(l.theta(), MASS_COUNT).copy_from(&torque);
        Effort {
            z,
            n_tilde,
            dn_tilde,
            d2n_tilde,
        }
    }

    pub fn z(&self, x: &DVector<f64>) -> DVector<f64> {
        self.effort(x).z
    }

    /// `u(x) = (f̃(t), 0, T, 0, 1)`.
    pub fn u(&self, x: &DVector<f64>) -> DVector<f64> {
        let l = self.layout;
        let mut u = DVector::zeros(l.dim());
        u.rows_mut(l.v(), l.p).copy_from(&self.red.forcing(x[l.time()]));
        u.rows_mut(l.omega(), MASS_COUNT).copy_from(&self.red.stage.mech.torque);
        u[l.time()] = 1.0;
        u
    }

    /// Output `y = Fᵀ z`.
    pub fn y(&self, z: &DVector<f64>) -> DVector<f64> {
        self.f_mat.transpose() * z
    }

    /// Right-hand side `(P − Q) z + F u` evaluated with the block structure.
    pub fn rhs(&self, x: &DVector<f64>, effort: &Effort) -> DVector<f64> {
        let l = self.layout;
        let p = l.p;
        let z = &effort.z;
        let mech = &self.red.stage.mech;
        let mut r = DVector::zeros(l.dim());
        let v = z.rows(l.v(), p);
        let mut top = -z.rows(l.psi(), p) + self.red.forcing(x[l.time()]);
        top -= self.red.kr_tilde.component_mul(&v);
        r.rows_mut(l.v(), p).copy_from(&top);
        r.rows_mut(l.psi(), p).copy_from(&v);
        let w = z.rows(l.omega(), MASS_COUNT);
        let acc = -z.rows(l.theta(), MASS_COUNT) - &mech.damping * w + &mech.torque;
        r.rows_mut(l.omega(), MASS_COUNT).copy_from(&acc);
        r.rows_mut(l.theta(), MASS_COUNT).copy_from(&w);
        r[l.time()] = 1.0;
        r
    }

    /// Jacobian of [`PhSystem::rhs`] with respect to `x`.
    pub fn rhs_jacobian(&self, x: &DVector<f64>, effort: &Effort) -> DMatrix<f64> {
        let l = self.layout;
        let p = l.p;
        let mech = &self.red.stage.mech;
        let m = l.dim();
        let mut jac = DMatrix::zeros(m, m);
        let psi = x.rows(l.psi(), p);
        let dn_psi = &effort.dn_tilde * psi;

        for i in 0..p {
            jac[(l.v() + i, l.v() + i)] = -self.red.kr_tilde[i];
            jac[(l.psi() + i, l.v() + i)] = 1.0;
        }
        jac.view_mut((l.v(), l.psi()), (p, p)).copy_from(&(-&effort.n_tilde));
        jac.view_mut((l.v(), l.rotor()), (p, 1)).copy_from(&(-&dn_psi));
        jac.view_mut((l.v(), l.time()), (p, 1)).copy_from(&self.red.forcing_rate(x[l.time()]));

        jac.view_mut((l.omega(), l.omega()), (MASS_COUNT, MASS_COUNT)).copy_from(&(-&mech.damping));
        jac.view_mut((l.omega(), l.theta()), (MASS_COUNT, MASS_COUNT)).copy_from(&(-&mech.stiffness));
        let row5 = l.omega() + ROTOR_MASS;
        jac[(row5, l.rotor())] -= 0.5 * psi.dot(&(&effort.d2n_tilde * psi));
        jac.view_mut((row5, l.psi()), (1, p)).copy_from(&(-dn_psi.transpose()));
        for i in 0..MASS_COUNT {
            jac[(l.theta() + i, l.omega() + i)] = 1.0;
        }
        jac
    }

    /// Packs a stage-coordinate state into the descriptor vector.
    pub fn pack(&self, s: &FullState) -> DVector<f64> {
        let l = self.layout;
        let mut x = DVector::zeros(l.dim());
        x.rows_mut(l.v(), l.p).copy_from(&self.red.pick2(&s.psi_dot));
        x.rows_mut(l.psi(), l.p).copy_from(&self.red.pick2(&s.psi));
        x.rows_mut(l.omega(), MASS_COUNT).copy_from(&s.theta_dot);
        x.rows_mut(l.theta(), MASS_COUNT).copy_from(&s.theta);
        x[l.time()] = s.t;
        x
    }

    /// Lifts a descriptor vector back to stage coordinates.
    pub fn unpack(&self, x: &DVector<f64>) -> FullState {
        let l = self.layout;
        let v = x.rows(l.v(), l.p).into_owned();
        let psi = x.rows(l.psi(), l.p).into_owned();
        let theta = x.rows(l.theta(), MASS_COUNT).into_owned();
        let theta_dot = x.rows(l.omega(), MASS_COUNT).into_owned();
        let rotor = theta[ROTOR_MASS];
        FullState {
            t: x[l.time()],
            psi_dot: self.red.lift_rate(rotor, theta_dot[ROTOR_MASS], &psi, &v),
            psi: self.red.lift(rotor, &psi),
            theta_dot,
            theta,
        }
    }
}
