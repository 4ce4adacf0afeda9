//! Implicit Runge–Kutta steps on the descriptor system with a monolithic
//! Newton solve of the stage equations, plus the discrete Dirac check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ph::PhSystem;
use crate::error::StepError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RkTableau {
    pub name: String,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl RkTableau {
    pub fn new(name: &str, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, String> {
        let s = b.len();
        if s == 0 || a.shape() != (s, s) {
            return Err(format!("tableau {name}: a must be {s}x{s}"));
        }
        if (b.sum() - 1.0).abs() > 1e-14 {
            return Err(format!("tableau {name}: weights sum to {}", b.sum()));
        }
        Ok(Self {
            name: name.to_string(),
            a,
            b,
        })
    }

    pub fn implicit_euler() -> Self {
        Self::new("implicit-euler", DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0)).unwrap()
    }

    pub fn implicit_midpoint() -> Self {
        Self::new("implicit-midpoint", DMatrix::from_element(1, 1, 0.5), DVector::from_element(1, 1.0)).unwrap()
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonSettings {
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub max_iter: usize,
    pub jacobian_mode: JacobianMode,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tol_rel: 1e-10,
            tol_abs: 1e-12,
            max_iter: 25,
            jacobian_mode: JacobianMode::Analytic,
        }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol_rel > 0.0 && self.tol_abs > 0.0) {
            return Err("newton tolerances must be positive".into());
        }
        if self.max_iter == 0 {
            return Err("newton max_iter must be at least 1".into());
        }
        Ok(())
    }
}

/// Converged step: new state, stage derivatives and solver statistics.
#[derive(Clone, Debug)]
pub struct RkStep {
    pub x_next: DVector<f64>,
    pub stages: Vec<DVector<f64>>,
    pub iterations: usize,
    /// Largest stage residual relative to its scale `1 + ‖z‖∞ + ‖u‖∞`.
    pub residual: f64,
}

fn stage_points(x0: &DVector<f64>, h: f64, tab: &RkTableau, k: &[DVector<f64>]) -> Vec<DVector<f64>> {
    (0..tab.stages())
        .map(|i| {
            let mut xi = x0.clone();
            for (j, kj) in k.iter().enumerate() {
                xi.axpy(h * tab.a[(i, j)], kj, 1.0);
            }
            xi
        })
        .collect()
}

/// Stage residuals `M kᵢ − (P − Q) z(Xᵢ) − F u(Xᵢ)` stacked, with per-stage scales.
fn stage_residual(sys: &PhSystem, points: &[DVector<f64>], k: &[DVector<f64>]) -> (DVector<f64>, Vec<f64>, Vec<super::ph::Effort>) {
    let m = sys.dim();
    let s = k.len();
    let mut g = DVector::zeros(s * m);
    let mut scales = Vec::with_capacity(s);
    let mut efforts = Vec::with_capacity(s);
    for i in 0..s {
        let eff = sys.effort(&points[i]);
        let rhs = sys.rhs(&points[i], &eff);
        let gi = sys.mass.component_mul(&k[i]) - rhs;
        g.rows_mut(i * m, m).copy_from(&gi);
        scales.push(1.0 + eff.z.amax() + sys.u(&points[i]).amax());
        efforts.push(eff);
    }
    (g, scales, efforts)
}

fn newton_matrix(sys: &PhSystem, x0: &DVector<f64>, h: f64, tab: &RkTableau, k: &[DVector<f64>], points: &[DVector<f64>], efforts: &[super::ph::Effort], mode: JacobianMode) -> DMatrix<f64> {
    let m = sys.dim();
    let s = tab.stages();
    let mut jac = DMatrix::zeros(s * m, s * m);
    match mode {
        JacobianMode::Analytic => {
            for i in 0..s {
                let jr = sys.rhs_jacobian(&points[i], &efforts[i]);
                for j in 0..s {
                    let mut block = jr.clone() * (-h * tab.a[(i, j)]);
                    if i == j {
                        for c in 0..m {
                            block[(c, c)] += sys.mass[c];
                        }
                    }
                    jac.view_mut((i * m, j * m), (m, m)).copy_from(&block);
                }
            }
        }
        JacobianMode::FiniteDifference => {
            let base = stage_residual(sys, points, k).0;
            let mut kp = k.to_vec();
            for j in 0..s {
                for c in 0..m {
                    let orig = kp[j][c];
                    let dk = 1e-7 * (1.0 + orig.abs());
                    kp[j][c] = orig + dk;
                    let pts = stage_points(x0, h, tab, &kp);
                    let col = (stage_residual(sys, &pts, &kp).0 - &base) / dk;
                    jac.column_mut(j * m + c).copy_from(&col);
                    kp[j][c] = orig;
                }
            }
        }
    }
    jac
}

/// Initial stage guess: the vector field at `x0` with the algebraic rows
/// filled from the current state, which is exact for consistent data.
pub fn explicit_guess(sys: &PhSystem, x0: &DVector<f64>, stages: usize) -> Vec<DVector<f64>> {
    let eff = sys.effort(x0);
    let rhs = sys.rhs(x0, &eff);
    let mut k = rhs.clone();
    for c in 0..sys.dim() {
        if sys.mass[c] != 0.0 {
            k[c] = rhs[c] / sys.mass[c];
        } else {
            k[c] = 0.0;
        }
    }
    vec![k; stages]
}

/// One step `x_f = x₀ + h Σ bⱼ kⱼ` of the RK scheme, solving the stage system
/// with Newton from `warm` (or an explicit guess).
pub fn rk_step(sys: &PhSystem, x0: &DVector<f64>, h: f64, tab: &RkTableau, newton: &NewtonSettings, warm: Option<&[DVector<f64>]>) -> Result<RkStep, StepError> {
    let s = tab.stages();
    let m = sys.dim();
    let t = x0[sys.layout.time()];
    let mut k: Vec<DVector<f64>> = match warm {
        Some(w) if w.len() == s => w.to_vec(),
        _ => explicit_guess(sys, x0, s),
    };
    let mut last_residual = f64::INFINITY;
    for iter in 0..=newton.max_iter {
        let points = stage_points(x0, h, tab, &k);
        let (g, scales, efforts) = stage_residual(sys, &points, &k);
        let mut rel = 0.0f64;
        let mut converged = true;
        for i in 0..s {
            let gi = g.rows(i * m, m).amax();
            rel = rel.max(gi / scales[i]);
            if gi > newton.tol_rel * scales[i] + newton.tol_abs {
                converged = false;
            }
        }
        if !rel.is_finite() {
            return Err(StepError::NonFinite { t });
        }
        last_residual = rel;
        // always take at least one Newton update unless the residual is exactly negligible
        if converged && (iter > 0 || rel * scales[0] <= newton.tol_abs) {
            let mut x_next = x0.clone();
            for (j, kj) in k.iter().enumerate() {
                x_next.axpy(h * tab.b[j], kj, 1.0);
            }
            return Ok(RkStep {
                x_next,
                stages: k,
                iterations: iter,
                residual: rel,
            });
        }
        if iter == newton.max_iter {
            break;
        }
        let jac = newton_matrix(sys, x0, h, tab, &k, &points, &efforts, newton.jacobian_mode);
        let dk = jac.lu().solve(&(-g)).ok_or(StepError::NewtonDivergence {
            t,
            h,
            residual: rel,
            iterations: iter,
        })?;
        for i in 0..s {
            k[i] += dk.rows(i * m, m);
        }
    }
    Err(StepError::NewtonDivergence {
        t,
        h,
        residual: last_residual,
        iterations: newton.max_iter,
    })
}

/// Per-stage Dirac membership residual `‖v_f + [[A, I], [−I, 0]] v_e‖∞` and
/// its admissible bound `10·tol·(1 + ‖z‖∞ + ‖u‖∞)`, maximised over stages
/// by the ratio residual/bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct DiracCheck {
    pub residual: f64,
    pub bound: f64,
}

impl DiracCheck {
    pub fn ok(&self) -> bool {
        self.residual <= self.bound
    }

    pub fn ratio(&self) -> f64 {
        if self.bound > 0.0 {
            self.residual / self.bound
        } else if self.residual == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

fn dirac_at(sys: &PhSystem, xi: &DVector<f64>, ki: &DVector<f64>, tol: f64) -> DiracCheck {
    let m = sys.dim();
    let z = sys.z(xi);
    let u = sys.u(xi);
    let y = sys.y(&z);
    let mut e = DVector::zeros(2 * m);
    e.rows_mut(0, m).copy_from(&z);
    e.rows_mut(m, m).copy_from(&u);
    let be = &sys.b_big * &e;

    let mut vf = DVector::zeros(4 * m);
    vf.rows_mut(0, m).copy_from(&(-sys.mass.component_mul(ki)));
    vf.rows_mut(m, m).copy_from(&y);
    vf.rows_mut(2 * m, m).copy_from(&z);
    vf.rows_mut(3 * m, m).copy_from(&u);

    let mut ve = DVector::zeros(4 * m);
    ve.rows_mut(0, 2 * m).copy_from(&e);
    ve.rows_mut(2 * m, 2 * m).copy_from(&(-be));

    let mut dve = DVector::zeros(4 * m);
    let top = &sys.a_big * ve.rows(0, 2 * m) + ve.rows(2 * m, 2 * m);
    dve.rows_mut(0, 2 * m).copy_from(&top);
    dve.rows_mut(2 * m, 2 * m).copy_from(&(-ve.rows(0, 2 * m)));

    DiracCheck {
        residual: (vf + dve).amax(),
        bound: 10.0 * tol * (1.0 + z.amax() + u.amax()),
    }
}

/// Evaluates the membership condition of every stage with the dense
/// structure matrices and returns the stage with the largest ratio.
pub fn dirac_check(sys: &PhSystem, x0: &DVector<f64>, h: f64, tab: &RkTableau, stages: &[DVector<f64>], tol: f64) -> DiracCheck {
    stage_points(x0, h, tab, stages)
        .iter()
        .zip(stages)
        .map(|(xi, ki)| dirac_at(sys, xi, ki, tol))
        .fold(DiracCheck::default(), |w, c| if c.ratio() > w.ratio() { c } else { w })
}

/// Maximum Dirac residual over the stages.
pub fn dirac_residual(sys: &PhSystem, x0: &DVector<f64>, h: f64, tab: &RkTableau, stages: &[DVector<f64>]) -> f64 {
    stage_points(x0, h, tab, stages)
        .iter()
        .zip(stages)
        .map(|(xi, ki)| dirac_at(sys, xi, ki, 1.0).residual)
        .fold(0.0, f64::max)
}
