//! Coefficient assembly for the generator / network system.
//!
//! Electrical coordinates are ordered `(1α, 1β, …, nα, nβ, f, D, g, Q)`; the
//! generator terminal is node `n`, so the last six electrical indices form the
//! rotor-coupled block. Mechanical coordinates are the six shaft masses, of
//! which the fifth carries the electromagnetic torque.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix6, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ModelError;

pub const WINDING_COUNT: usize = 4;
pub const MASS_COUNT: usize = 6;
/// Zero-based index of the shaft mass coupled to the air gap.
pub const ROTOR_MASS: usize = 4;
pub const WINDING_LABELS: [&str; WINDING_COUNT] = ["f", "D", "g", "Q"];

const MAX_WINDING_CONDITION: f64 = 1e12;

/// Extended non-negative real used for resistances and inductances that may be
/// open (`+∞`) or, for ground resistances, a dead short (`0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub fn is_infinite(self) -> bool {
        matches!(self, ExtReal::Infinite)
    }

    pub fn is_zero(self) -> bool {
        matches!(self, ExtReal::Finite(x) if x == 0.0)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(x) => Some(x),
            ExtReal::Infinite => None,
        }
    }

    /// Reciprocal with `1/∞ = 0` and `1/0 = ∞`.
    pub fn recip(self) -> ExtReal {
        match self {
            ExtReal::Infinite => ExtReal::Finite(0.0),
            ExtReal::Finite(x) if x == 0.0 => ExtReal::Infinite,
            ExtReal::Finite(x) => ExtReal::Finite(1.0 / x),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(x) => write!(f, "{x}"),
            ExtReal::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(x) => serializer.serialize_f64(*x),
            ExtReal::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(x) if x.is_finite() => Ok(ExtReal::Finite(x)),
            Raw::Num(_) => Ok(ExtReal::Infinite),
            Raw::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" | "+infinity" => Ok(ExtReal::Infinite),
                other => other
                    .parse::<f64>()
                    .map(ExtReal::Finite)
                    .map_err(|_| serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
            },
        }
    }
}

/// Synchronous machine and shaft parameters (SI units).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GeneratorParams {
    /// Symmetric winding inductance matrix over `(d, q, f, D, g, Q)`; its
    /// inverse is the reluctance block coupling the rotor to the network.
    #[serde(rename = "winding_L")]
    pub winding_l: [[f64; 6]; 6],
    pub r_f: f64,
    #[serde(rename = "r_D")]
    pub r_d: f64,
    pub r_g: f64,
    #[serde(rename = "r_Q")]
    pub r_q: f64,
    #[serde(rename = "J_diag")]
    pub inertia: [f64; MASS_COUNT],
    #[serde(rename = "K_springs")]
    pub stiffness: [f64; MASS_COUNT - 1],
    #[serde(rename = "T_fracs")]
    pub torque_fractions: [f64; MASS_COUNT],
    #[serde(rename = "T0")]
    pub torque_total: f64,
    #[serde(rename = "U_f")]
    pub u_f: f64,
}

impl GeneratorParams {
    pub fn winding_resistances(&self) -> [f64; WINDING_COUNT] {
        [self.r_f, self.r_d, self.r_g, self.r_q]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let l = Matrix6::from_fn(|i, j| self.winding_l[i][j]);
        let scale = l.amax();
        if (l - l.transpose()).amax() > 1e-12 * scale {
            return Err(ModelError::InvalidParameters("winding_L is not symmetric".into()));
        }
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(ModelError::InvalidParameters(format!("{name} must be finite and positive, got {x}")))
            }
        };
        for (name, r) in WINDING_LABELS.iter().zip(self.winding_resistances()) {
            positive(&format!("r_{name}"), r)?;
        }
        for (i, &j) in self.inertia.iter().enumerate() {
            positive(&format!("J_{}", i + 1), j)?;
        }
        for (i, &k) in self.stiffness.iter().enumerate() {
            positive(&format!("K_{}", i + 1), k)?;
        }
        positive("U_f", self.u_f)?;
        if !self.torque_total.is_finite() {
            return Err(ModelError::InvalidParameters("T0 must be finite".into()));
        }
        Ok(())
    }

    /// Inverts the winding inductance matrix, failing on loss of definiteness
    /// or a condition number above `1e12`.
    pub fn gamma0(&self) -> Result<Matrix6<f64>, ModelError> {
        let l = Matrix6::from_fn(|i, j| 0.5 * (self.winding_l[i][j] + self.winding_l[j][i]));
        let eig = SymmetricEigen::new(l);
        let min = eig.eigenvalues.min();
        let max = eig.eigenvalues.max();
        if min <= 0.0 {
            return Err(ModelError::SingularWinding { cond: f64::INFINITY });
        }
        let cond = max / min;
        if cond > MAX_WINDING_CONDITION {
            return Err(ModelError::SingularWinding { cond });
        }
        let chol = l.cholesky().ok_or(ModelError::SingularWinding { cond })?;
        let inv = chol.inverse();
        Ok(0.5 * (inv + inv.transpose()))
    }

    pub fn mechanics(&self) -> Mechanics {
        let mut k = DMatrix::zeros(MASS_COUNT, MASS_COUNT);
        for (i, &ks) in self.stiffness.iter().enumerate() {
            k[(i, i)] += ks;
            k[(i + 1, i + 1)] += ks;
            k[(i, i + 1)] -= ks;
            k[(i + 1, i)] -= ks;
        }
        Mechanics {
            inertia: DVector::from_column_slice(&self.inertia),
            stiffness: k,
            damping: DMatrix::zeros(MASS_COUNT, MASS_COUNT),
            torque: DVector::from_iterator(MASS_COUNT, self.torque_fractions.iter().map(|f| f * self.torque_total)),
        }
    }
}

/// Network of `n` nodes; node 1 carries the Norton source, node `n` is the
/// generator terminal.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NetworkTopology {
    pub n: usize,
    /// Branch inductances; `ell[i][j] = inf` means no branch. Diagonal unused.
    pub ell: Vec<Vec<ExtReal>>,
    /// Ground resistances: `0` is a short, `inf` is open.
    pub r_ground: Vec<ExtReal>,
    #[serde(rename = "U_s")]
    pub u_s: f64,
    pub omega_s: f64,
}

impl NetworkTopology {
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n;
        let bad = |msg: String| Err(ModelError::InvalidParameters(msg));
        if n == 0 {
            return bad("network needs at least one node".into());
        }
        if self.ell.len() != n || self.ell.iter().any(|row| row.len() != n) {
            return bad(format!("ell must be {n}x{n}"));
        }
        if self.r_ground.len() != n {
            return bad(format!("r_ground must have {n} entries"));
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if self.ell[i][j] != self.ell[j][i] {
                    return bad(format!("ell is not symmetric at ({}, {})", i + 1, j + 1));
                }
                if let ExtReal::Finite(x) = self.ell[i][j] {
                    if !(x > 0.0) {
                        return bad(format!("ell[{}][{}] must be positive or inf", i + 1, j + 1));
                    }
                }
            }
            if let ExtReal::Finite(r) = self.r_ground[i] {
                if !(r >= 0.0) {
                    return bad(format!("r_ground[{}] must be non-negative", i + 1));
                }
            }
        }
        match self.r_ground[0] {
            ExtReal::Finite(r) if r > 0.0 => {}
            other => return bad(format!("node 1 must have a finite positive ground resistance, got {other}")),
        }
        if !(self.u_s.is_finite() && self.omega_s > 0.0) {
            return bad("source amplitude must be finite and omega_s positive".into());
        }
        Ok(())
    }

    pub fn r1(&self) -> f64 {
        self.r_ground[0].finite().expect("validated topology has finite r_1")
    }
}

/// Electrical dimension `2n + 4`.
pub fn electrical_dim(n_nodes: usize) -> usize {
    2 * n_nodes + WINDING_COUNT
}

/// Human-readable label for an original electrical index (zero-based).
pub fn index_label(n_nodes: usize, k: usize) -> String {
    if k < 2 * n_nodes {
        format!("{}{}", k / 2 + 1, if k % 2 == 0 { "a" } else { "b" })
    } else {
        WINDING_LABELS[k - 2 * n_nodes].to_string()
    }
}

/// Original indices of the generator block `(nα, nβ, f, D, g, Q)`.
pub fn generator_indices(n_nodes: usize) -> [usize; 6] {
    let base = 2 * n_nodes - 2;
    std::array::from_fn(|i| base + i)
}

/// Node inductance coupling `K_L = blockdiag(L, 0₄)`.
pub fn build_kl(topology: &NetworkTopology) -> DMatrix<f64> {
    let n = topology.n;
    let mut kl = DMatrix::zeros(electrical_dim(n), electrical_dim(n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let inv = match topology.ell[i][j].recip() {
                ExtReal::Finite(x) => x,
                ExtReal::Infinite => unreachable!("validated inductances are positive"),
            };
            if inv == 0.0 {
                continue;
            }
            for c in 0..2 {
                kl[(2 * i + c, 2 * i + c)] += inv;
                kl[(2 * i + c, 2 * j + c)] -= inv;
            }
        }
    }
    kl
}

/// Conductance diagonal `K_R` on the extended reals: open grounds give `0`,
/// shorted grounds give `+∞`.
pub fn build_kr(topology: &NetworkTopology, generator: &GeneratorParams) -> Vec<ExtReal> {
    let mut kr = Vec::with_capacity(electrical_dim(topology.n));
    for r in &topology.r_ground {
        let g = r.recip();
        kr.push(g);
        kr.push(g);
    }
    kr.extend(generator.winding_resistances().iter().map(|&r| ExtReal::Finite(1.0 / r)));
    kr
}

/// Rotor-angle dependent reluctance block `P(θ) Γ₀ P(−θ)` with analytic
/// θ-derivatives.
#[derive(Clone, Debug)]
pub struct WindingCoupling {
    gamma0: Matrix6<f64>,
    // commutators [Ĵ, ·] of Γ₀, so that the k-th derivative is P(θ) Cₖ P(−θ)
    derivs: [Matrix6<f64>; 3],
}

impl WindingCoupling {
    pub fn new(gamma0: Matrix6<f64>) -> Self {
        let comm = |x: &Matrix6<f64>| {
            let mut jh = Matrix6::zeros();
            jh[(0, 1)] = -1.0;
            jh[(1, 0)] = 1.0;
            jh * x - x * jh
        };
        let c1 = comm(&gamma0);
        let c2 = comm(&c1);
        let c3 = comm(&c2);
        Self { gamma0, derivs: [c1, c2, c3] }
    }

    pub fn gamma0(&self) -> &Matrix6<f64> {
        &self.gamma0
    }

    /// `order`-th θ-derivative of `P(θ) Γ₀ P(−θ)` (order 0 is the block itself).
    pub fn block(&self, theta: f64, order: usize) -> Matrix6<f64> {
        let base = match order {
            0 => &self.gamma0,
            1..=3 => &self.derivs[order - 1],
            _ => panic!("derivative order {order} not supported"),
        };
        rotate(base, theta)
    }
}

/// `P(θ) X P(−θ)` where `P` rotates the first two coordinates.
fn rotate(x: &Matrix6<f64>, theta: f64) -> Matrix6<f64> {
    let (s, c) = theta.sin_cos();
    let mut out = *x;
    // left multiply rows 0,1
    for j in 0..6 {
        let a = x[(0, j)];
        let b = x[(1, j)];
        out[(0, j)] = c * a - s * b;
        out[(1, j)] = s * a + c * b;
    }
    // right multiply by P(−θ) on columns 0,1
    for i in 0..6 {
        let a = out[(i, 0)];
        let b = out[(i, 1)];
        out[(i, 0)] = c * a - s * b;
        out[(i, 1)] = s * a + c * b;
    }
    out
}

/// Shaft parameters: inertia diagonal `J`, stiffness `K`, damping `D` (zero
/// for this machine) and applied torques `T`.
#[derive(Clone, Debug)]
pub struct Mechanics {
    pub inertia: DVector<f64>,
    pub stiffness: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub torque: DVector<f64>,
}

/// Norton source on node 1 plus the field excitation.
#[derive(Clone, Copy, Debug)]
pub struct Forcing {
    pub n_nodes: usize,
    /// `U_s / r₁`
    pub source_current: f64,
    pub omega_s: f64,
    /// `U_f / r_f`
    pub field_current: f64,
}

impl Forcing {
    /// Injected current in stationary αβ coordinates at time `t`.
    pub fn alpha_beta(&self, t: f64) -> DVector<f64> {
        let mut f = DVector::zeros(electrical_dim(self.n_nodes));
        let (s, c) = (self.omega_s * t).sin_cos();
        f[0] = self.source_current * c;
        f[1] = self.source_current * s;
        f[2 * self.n_nodes] = self.field_current;
        f
    }

    /// Time derivative of [`Forcing::alpha_beta`].
    pub fn alpha_beta_rate(&self, t: f64) -> DVector<f64> {
        let mut f = DVector::zeros(electrical_dim(self.n_nodes));
        let (s, c) = (self.omega_s * t).sin_cos();
        f[0] = -self.source_current * self.omega_s * s;
        f[1] = self.source_current * self.omega_s * c;
        f
    }

    /// Constant injection `f₀ = f(0)` seen in the synchronous frame.
    pub fn xy(&self) -> DVector<f64> {
        self.alpha_beta(0.0)
    }
}

/// Full-dimension system for one network configuration, before shorted
/// nodes are eliminated.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub n_nodes: usize,
    pub k_r: Vec<ExtReal>,
    pub k_l: DMatrix<f64>,
    pub winding: WindingCoupling,
    pub mech: Mechanics,
    pub forcing: Forcing,
}

impl AssembledSystem {
    pub fn new(generator: &GeneratorParams, topology: &NetworkTopology) -> Result<Self, ModelError> {
        generator.validate()?;
        topology.validate()?;
        let gamma0 = generator.gamma0()?;
        Ok(Self {
            n_nodes: topology.n,
            k_r: build_kr(topology, generator),
            k_l: build_kl(topology),
            winding: WindingCoupling::new(gamma0),
            mech: generator.mechanics(),
            forcing: Forcing {
                n_nodes: topology.n,
                source_current: topology.u_s / topology.r1(),
                omega_s: topology.omega_s,
                field_current: generator.u_f / generator.r_f,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.k_r.len()
    }

    /// Indices whose conductance is `+∞` (ground shorts).
    pub fn shorted_indices(&self) -> Vec<usize> {
        self.k_r.iter().enumerate().filter(|(_, g)| g.is_infinite()).map(|(k, _)| k).collect()
    }

    /// `Γ(θ)` over the full electrical dimension.
    pub fn gamma(&self, theta: f64) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.dim(), self.dim());
        let block = self.winding.block(theta, 0);
        let idx = generator_indices(self.n_nodes);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                g[(i, j)] = block[(a, b)];
            }
        }
        g
    }

    /// Eliminates assemble-time shorts, then removes the given indices.
    pub fn into_stage(self) -> Result<StageSystem, ModelError> {
        let shorted = self.shorted_indices();
        remove_shorted(&self, &shorted)
    }
}

/// Drops the rows/columns of ground-shorted node pairs. The remaining system
/// has only finite conductances.
pub fn remove_shorted(system: &AssembledSystem, lambda0: &[usize]) -> Result<StageSystem, ModelError> {
    let n = system.n_nodes;
    let dim = system.dim();
    let mut removed: Vec<usize> = lambda0.to_vec();
    removed.sort_unstable();
    removed.dedup();
    for &k in &removed {
        if k >= dim {
            return Err(ModelError::InvalidParameters(format!("index {k} out of range")));
        }
        if k >= 2 * n {
            return Err(ModelError::WindingRemoval(k));
        }
    }
    let kept: Vec<usize> = (0..dim).filter(|k| removed.binary_search(k).is_err()).collect();
    let mut conductance = DVector::zeros(kept.len());
    for (local, &k) in kept.iter().enumerate() {
        match system.k_r[k] {
            ExtReal::Finite(g) => conductance[local] = g,
            ExtReal::Infinite => return Err(ModelError::UnremovedShort(k)),
        }
    }
    let k_l = DMatrix::from_fn(kept.len(), kept.len(), |a, b| system.k_l[(kept[a], kept[b])]);
    let gen = generator_indices(n);
    let gen_pos = std::array::from_fn(|a| kept.iter().position(|&k| k == gen[a]));
    Ok(StageSystem {
        n_nodes: n,
        kept,
        removed,
        conductance,
        k_l,
        winding: system.winding.clone(),
        gen_pos,
        mech: system.mech.clone(),
        forcing: system.forcing,
    })
}

/// One network stage with shorted nodes removed: `K_R Ψ̇ + N(θ) Ψ = f(t)`
/// coupled to the shaft.
#[derive(Clone, Debug)]
pub struct StageSystem {
    pub n_nodes: usize,
    /// Original electrical indices retained, ascending.
    pub kept: Vec<usize>,
    /// Original indices removed as ground shorts.
    pub removed: Vec<usize>,
    /// Finite diagonal of `K_R` in stage coordinates.
    pub conductance: DVector<f64>,
    pub k_l: DMatrix<f64>,
    pub winding: WindingCoupling,
    /// Stage-local positions of the generator block entries.
    pub gen_pos: [Option<usize>; 6],
    pub mech: Mechanics,
    pub forcing: Forcing,
}

impl StageSystem {
    pub fn dim(&self) -> usize {
        self.kept.len()
    }

    pub fn local_index(&self, original: usize) -> Option<usize> {
        self.kept.binary_search(&original).ok()
    }

    pub fn labels(&self) -> Vec<String> {
        self.kept.iter().map(|&k| index_label(self.n_nodes, k)).collect()
    }

    fn add_block(&self, m: &mut DMatrix<f64>, block: &Matrix6<f64>) {
        for a in 0..6 {
            let Some(i) = self.gen_pos[a] else { continue };
            for b in 0..6 {
                if let Some(j) = self.gen_pos[b] {
                    m[(i, j)] += block[(a, b)];
                }
            }
        }
    }

    /// `Γ(θ)` restricted to the stage coordinates.
    pub fn gamma(&self, theta: f64) -> DMatrix<f64> {
        self.gamma_deriv(theta, 0)
    }

    /// `order`-th θ-derivative of `Γ(θ)` in stage coordinates.
    pub fn gamma_deriv(&self, theta: f64, order: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        self.add_block(&mut m, &self.winding.block(theta, order));
        m
    }

    /// `N(θ) = K_L + Γ(θ)`.
    pub fn n_matrix(&self, theta: f64) -> DMatrix<f64> {
        let mut m = self.k_l.clone();
        self.add_block(&mut m, &self.winding.block(theta, 0));
        m
    }

    /// Electromagnetic torque `½ Ψᵀ dΓ/dθ Ψ`.
    pub fn torque_em(&self, psi: &DVector<f64>, theta: f64) -> f64 {
        let d = self.winding.block(theta, 1);
        let mut acc = 0.0;
        for a in 0..6 {
            let Some(i) = self.gen_pos[a] else { continue };
            for b in 0..6 {
                if let Some(j) = self.gen_pos[b] {
                    acc += psi[i] * d[(a, b)] * psi[j];
                }
            }
        }
        0.5 * acc
    }

    /// Injection `f(t)` in stage coordinates.
    pub fn forcing_at(&self, t: f64) -> DVector<f64> {
        self.restrict(&self.forcing.alpha_beta(t))
    }

    pub fn forcing_rate_at(&self, t: f64) -> DVector<f64> {
        self.restrict(&self.forcing.alpha_beta_rate(t))
    }

    pub fn forcing_xy(&self) -> DVector<f64> {
        self.restrict(&self.forcing.xy())
    }

    /// Picks the retained entries of a full-dimension vector.
    pub fn restrict(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.kept.iter().map(|&k| full[k]))
    }

    /// Scatters a stage vector into the full dimension, zero at removed indices.
    pub fn expand(&self, local: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(electrical_dim(self.n_nodes));
        for (a, &k) in self.kept.iter().enumerate() {
            full[k] = local[a];
        }
        full
    }
}

/// Generator plus the network of each stage (pre-fault, faulted, cleared).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FaultModel {
    #[serde(default)]
    pub name: Option<String>,
    pub generator: GeneratorParams,
    pub stages: Vec<NetworkTopology>,
}

pub const FIRST_BENCHMARK_JSON: &str = include_str!("../presets/first-benchmark.json");

impl FaultModel {
    pub fn first_benchmark() -> Self {
        serde_json::from_str(FIRST_BENCHMARK_JSON).expect("bundled preset parses")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "first-benchmark" => Some(Self::first_benchmark()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.generator.validate()?;
        if self.stages.len() != 3 {
            return Err(ModelError::InvalidParameters(format!(
                "expected 3 stage topologies, got {}",
                self.stages.len()
            )));
        }
        let n = self.stages[0].n;
        for topo in &self.stages {
            topo.validate()?;
            if topo.n != n {
                return Err(ModelError::InvalidParameters("all stages must share the node count".into()));
            }
        }
        Ok(())
    }

    /// Assembles stage `index` (0 = pre-fault, 1 = fault, 2 = cleared).
    pub fn stage(&self, index: usize) -> Result<StageSystem, ModelError> {
        let topo = self
            .stages
            .get(index)
            .ok_or_else(|| ModelError::InvalidParameters(format!("no stage {index}")))?;
        AssembledSystem::new(&self.generator, topo)?.into_stage()
    }
}
