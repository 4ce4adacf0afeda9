//! Elimination of zero-conductance node fluxes.
//!
//! Rows of `K_R Ψ̇ + N(θ) Ψ = f` with zero conductance are algebraic:
//! `N_{Λ₁,·} Ψ = 0`. Solving them gives `Ψ = A(θ) Ψ̃` with
//! `A = (−N₁₁⁻¹ N₁₂; I)` and the reduced stiffness `Ñ = Aᵀ N A`. Both `A₀`
//! and `Ñ` lie in `span{1, sin θ, cos θ, sin 2θ, cos 2θ}`, so they are
//! recovered once from nine samples and evaluated in closed form afterwards.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::ModelError;
use crate::model::{index_label, ExtReal, StageSystem, ROTOR_MASS};

const FIT_TOLERANCE: f64 = 1e-9;
const VALIDATION_POINTS: usize = 50;

/// Split of the original electrical indices into shorted (`Λ₀`),
/// zero-conductance (`Λ₁`) and conducting (`Λ₂`) sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexPartition {
    pub lambda0: Vec<usize>,
    pub lambda1: Vec<usize>,
    pub lambda2: Vec<usize>,
    /// Positions of `Λ₁` / `Λ₂` within the `Λ₀`-removed coordinates.
    pub local1: Vec<usize>,
    pub local2: Vec<usize>,
}

impl IndexPartition {
    /// One-based labels, for reports.
    pub fn one_based(set: &[usize]) -> Vec<usize> {
        set.iter().map(|k| k + 1).collect()
    }

    pub fn for_stage(stage: &StageSystem) -> Self {
        let mut p = IndexPartition {
            lambda0: stage.removed.clone(),
            lambda1: Vec::new(),
            lambda2: Vec::new(),
            local1: Vec::new(),
            local2: Vec::new(),
        };
        for (local, &k) in stage.kept.iter().enumerate() {
            if stage.conductance[local] == 0.0 {
                p.lambda1.push(k);
                p.local1.push(local);
            } else {
                p.lambda2.push(k);
                p.local2.push(local);
            }
        }
        p
    }
}

/// Classifies a full-dimension `K_R` diagonal.
pub fn partition_from_kr(k_r: &[ExtReal]) -> IndexPartition {
    let mut p = IndexPartition {
        lambda0: Vec::new(),
        lambda1: Vec::new(),
        lambda2: Vec::new(),
        local1: Vec::new(),
        local2: Vec::new(),
    };
    let mut local = 0;
    for (k, g) in k_r.iter().enumerate() {
        match g {
            ExtReal::Infinite => {
                p.lambda0.push(k);
                continue;
            }
            g if g.is_zero() => {
                p.lambda1.push(k);
                p.local1.push(local);
            }
            _ => {
                p.lambda2.push(k);
                p.local2.push(local);
            }
        }
        local += 1;
    }
    p
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// `A₀ = −N₁₁⁻¹ N₁₂` by Cholesky on the (positive definite) `N₁₁`.
pub fn a0_direct(n: &DMatrix<f64>, local1: &[usize], local2: &[usize]) -> Result<DMatrix<f64>, ModelError> {
    if local1.is_empty() {
        return Ok(DMatrix::zeros(0, local2.len()));
    }
    let n11 = submatrix(n, local1, local1);
    let n12 = submatrix(n, local1, local2);
    let chol = n11
        .cholesky()
        .ok_or_else(|| ModelError::Reduction("N restricted to the zero-conductance set is not positive definite".into()))?;
    Ok(-chol.solve(&n12))
}

/// Full `A(θ)` in stage ordering: identity rows at `Λ₂`, `A₀` rows at `Λ₁`.
pub fn a_of_theta_direct(n: &DMatrix<f64>, local1: &[usize], local2: &[usize]) -> Result<DMatrix<f64>, ModelError> {
    let a0 = a0_direct(n, local1, local2)?;
    Ok(assemble_a(&a0, local1, local2))
}

fn assemble_a(a0: &DMatrix<f64>, local1: &[usize], local2: &[usize]) -> DMatrix<f64> {
    let dim = local1.len() + local2.len();
    let mut a = DMatrix::zeros(dim, local2.len());
    for (c, &row) in local2.iter().enumerate() {
        a[(row, c)] = 1.0;
    }
    for (r, &row) in local1.iter().enumerate() {
        a.row_mut(row).copy_from(&a0.row(r));
    }
    a
}

/// Matrix function `S₀ + S₁ sin θ + C₁ cos θ + S₂ sin 2θ + C₂ cos 2θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigMatrixFamily {
    pub s0: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub s2: DMatrix<f64>,
    pub c2: DMatrix<f64>,
}

impl TrigMatrixFamily {
    /// Recovers the coefficients from samples at `0, ±π/4, ±π/2, ±π, ±3π/2`.
    /// No validation; see [`fit_trig`].
    pub fn from_samples<F>(mut sample: F) -> Self
    where
        F: FnMut(f64) -> DMatrix<f64>,
    {
        let b0 = sample(0.0);
        let bq_p = sample(PI / 4.0);
        let bq_m = sample(-PI / 4.0);
        let bh_p = sample(PI / 2.0);
        let bh_m = sample(-PI / 2.0);
        let bpi_p = sample(PI);
        let bpi_m = sample(-PI);
        let b3_p = sample(1.5 * PI);
        let b3_m = sample(-1.5 * PI);

        let s0 = (&b0 * 2.0 + &bh_p + &bh_m + &bpi_p + &bpi_m + &b3_p + &b3_m) / 8.0;
        let s1 = (&bh_p - &bh_m) * 0.5;
        let c1 = &b0 * 0.5 - &bpi_p * 0.25 - &bpi_m * 0.25;
        let s2 = (&bq_p - &bq_m) * 0.5 - &s1 * FRAC_1_SQRT_2;
        let c2 = &b0 * 0.5 + &bpi_p * 0.25 + &bpi_m * 0.25 - &s0;
        Self { s0, s1, c1, s2, c2 }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.s0.shape()
    }

    pub fn eval(&self, theta: f64) -> DMatrix<f64> {
        let (s, c) = theta.sin_cos();
        let (s2, c2) = (2.0 * theta).sin_cos();
        self.combine([1.0, s, c, s2, c2])
    }

    pub fn deriv(&self, theta: f64) -> DMatrix<f64> {
        let (s, c) = theta.sin_cos();
        let (s2, c2) = (2.0 * theta).sin_cos();
        self.combine([0.0, c, -s, 2.0 * c2, -2.0 * s2])
    }

    pub fn deriv2(&self, theta: f64) -> DMatrix<f64> {
        let (s, c) = theta.sin_cos();
        let (s2, c2) = (2.0 * theta).sin_cos();
        self.combine([0.0, -s, -c, -4.0 * s2, -4.0 * c2])
    }

    /// Value and first two derivatives in one pass.
    pub fn eval_with_derivs(&self, theta: f64) -> [DMatrix<f64>; 3] {
        let (s, c) = theta.sin_cos();
        let (s2, c2) = (2.0 * theta).sin_cos();
        [
            self.combine([1.0, s, c, s2, c2]),
            self.combine([0.0, c, -s, 2.0 * c2, -2.0 * s2]),
            self.combine([0.0, -s, -c, -4.0 * s2, -4.0 * c2]),
        ]
    }

    fn combine(&self, w: [f64; 5]) -> DMatrix<f64> {
        let mut out = &self.s0 * w[0];
        out += &self.s1 * w[1];
        out += &self.c1 * w[2];
        out += &self.s2 * w[3];
        out += &self.c2 * w[4];
        out
    }

    pub fn members(&self) -> [(&'static str, &DMatrix<f64>); 5] {
        [("S0", &self.s0), ("S1", &self.s1), ("C1", &self.c1), ("S2", &self.s2), ("C2", &self.c2)]
    }
}

/// Low-discrepancy angles in `[0, 2π)` used for post-fit validation.
pub fn validation_angles(count: usize) -> impl Iterator<Item = f64> {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    (1..=count).map(|k| 2.0 * PI * ((0.5 + k as f64 * GOLDEN) % 1.0))
}

/// Fits a trigonometric family and checks it against the sampler at fifty
/// further angles; a mismatch means the function is outside the span.
pub fn fit_trig<F>(mut sample: F) -> Result<TrigMatrixFamily, ModelError>
where
    F: FnMut(f64) -> DMatrix<f64>,
{
    let fam = TrigMatrixFamily::from_samples(&mut sample);
    for theta in validation_angles(VALIDATION_POINTS) {
        let direct = sample(theta);
        let scale = direct.amax().max(f64::MIN_POSITIVE);
        let error = (fam.eval(theta) - &direct).amax() / scale;
        if !(error <= FIT_TOLERANCE) {
            return Err(ModelError::TrigFit { theta, error });
        }
    }
    Ok(fam)
}

/// Stage system restricted to the conducting coordinates:
/// `K̃_R Ψ̃̇ + Ñ(θ) Ψ̃ = f̃(t)`.
#[derive(Clone, Debug)]
pub struct ReducedSystem {
    pub stage: StageSystem,
    pub partition: IndexPartition,
    pub kr_tilde: DVector<f64>,
    pub a0: TrigMatrixFamily,
    pub n_tilde: TrigMatrixFamily,
}

/// Builds the reduced system for a stage with shorts already removed.
pub fn reduce(stage: &StageSystem) -> Result<ReducedSystem, ModelError> {
    let partition = IndexPartition::for_stage(stage);
    let (l1, l2) = (partition.local1.clone(), partition.local2.clone());
    let kr_tilde = DVector::from_iterator(l2.len(), l2.iter().map(|&k| stage.conductance[k]));

    let (a0, n_tilde) = if l1.is_empty() {
        let n_tilde = fit_trig(|theta| stage.n_matrix(theta))?;
        (TrigMatrixFamily::from_samples(|_| DMatrix::zeros(0, l2.len())), n_tilde)
    } else {
        let mut failure = None;
        let mut a0_sampler = |theta: f64| match a0_direct(&stage.n_matrix(theta), &l1, &l2) {
            Ok(a0) => a0,
            Err(e) => {
                failure.get_or_insert(e);
                DMatrix::zeros(l1.len(), l2.len())
            }
        };
        let a0 = fit_trig(&mut a0_sampler)?;
        if let Some(e) = failure {
            return Err(e);
        }
        let n_tilde = fit_trig(|theta| {
            let n = stage.n_matrix(theta);
            let a = match a0_direct(&n, &l1, &l2) {
                Ok(a0) => assemble_a(&a0, &l1, &l2),
                Err(_) => return DMatrix::zeros(l2.len(), l2.len()),
            };
            let nt = a.transpose() * n * a;
            0.5 * (&nt + nt.transpose())
        })?;
        (a0, n_tilde)
    };

    Ok(ReducedSystem {
        stage: stage.clone(),
        partition,
        kr_tilde,
        a0,
        n_tilde,
    })
}

impl ReducedSystem {
    /// Reduced electrical dimension `|Λ₂|`.
    pub fn dim(&self) -> usize {
        self.partition.local2.len()
    }

    pub fn forcing(&self, t: f64) -> DVector<f64> {
        self.pick2(&self.stage.forcing_at(t))
    }

    pub fn forcing_rate(&self, t: f64) -> DVector<f64> {
        self.pick2(&self.stage.forcing_rate_at(t))
    }

    /// Restriction of a stage-coordinate vector to `Λ₂`.
    pub fn pick2(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.partition.local2.iter().map(|&k| v[k]))
    }

    pub fn a_matrix(&self, theta: f64) -> DMatrix<f64> {
        assemble_a(&self.a0.eval(theta), &self.partition.local1, &self.partition.local2)
    }

    /// `Ψ = A(θ) Ψ̃` in stage coordinates.
    pub fn lift(&self, theta: f64, psi_tilde: &DVector<f64>) -> DVector<f64> {
        self.a_matrix(theta) * psi_tilde
    }

    /// Time derivative of the lifted flux, `dA/dθ · θ̇ · Ψ̃ + A Ψ̃̇`.
    pub fn lift_rate(&self, theta: f64, theta_dot: f64, psi_tilde: &DVector<f64>, v_tilde: &DVector<f64>) -> DVector<f64> {
        let (l1, l2) = (&self.partition.local1, &self.partition.local2);
        let mut out = DVector::zeros(self.stage.dim());
        for (c, &k) in l2.iter().enumerate() {
            out[k] = v_tilde[c];
        }
        if !l1.is_empty() {
            let a0 = self.a0.eval(theta);
            let da0 = self.a0.deriv(theta);
            let v1 = &da0 * psi_tilde * theta_dot + a0 * v_tilde;
            for (r, &k) in l1.iter().enumerate() {
                out[k] = v1[r];
            }
        }
        out
    }

    /// Electromagnetic torque `½ Ψ̃ᵀ dÑ/dθ Ψ̃`.
    pub fn torque_em(&self, psi_tilde: &DVector<f64>, theta: f64) -> f64 {
        0.5 * psi_tilde.dot(&(self.n_tilde.deriv(theta) * psi_tilde))
    }

    /// Rotor angle coordinate that drives `Γ`.
    pub fn rotor_angle(theta: &DVector<f64>) -> f64 {
        theta[ROTOR_MASS]
    }

    /// Writes each fitted coefficient matrix to `<dir>/<prefix>_<family>_<member>.csv`.
    pub fn dump_csv(&self, dir: &Path, prefix: &str) -> std::io::Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let n = self.stage.n_nodes;
        let labels2: Vec<String> = self.partition.lambda2.iter().map(|&k| index_label(n, k)).collect();
        let labels1: Vec<String> = self.partition.lambda1.iter().map(|&k| index_label(n, k)).collect();
        let mut written = Vec::new();
        for (family, fam, rows) in [("A0", &self.a0, &labels1), ("Ntilde", &self.n_tilde, &labels2)] {
            for (member, m) in fam.members() {
                let path = dir.join(format!("{prefix}_{family}_{member}.csv"));
                let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
                writeln!(out, "row,{}", labels2.join(","))?;
                for (i, label) in rows.iter().enumerate() {
                    let vals: Vec<String> = m.row(i).iter().map(|x| format!("{x:.16e}")).collect();
                    writeln!(out, "{label},{}", vals.join(","))?;
                }
                written.push(path);
            }
        }
        Ok(written)
    }
}
