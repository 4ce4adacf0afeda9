use thiserror::Error;

/// Errors raised while assembling or reducing a stage model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("winding inductance matrix is singular or ill-conditioned (cond = {cond:.3e})")]
    SingularWinding { cond: f64 },
    #[error("cannot remove winding index {0}: windings are never shorted")]
    WindingRemoval(usize),
    #[error("shorted index {0} left in the system after removal")]
    UnremovedShort(usize),
    #[error("reduction failed: {0}")]
    Reduction(String),
    #[error("trigonometric fit rejected: relative error {error:.3e} at theta = {theta:.6}")]
    TrigFit { theta: f64, error: f64 },
}

/// Failure of a single integration step.
#[derive(Debug, Clone, Error)]
pub enum StepError {
    #[error("Newton did not converge at t = {t:.6} (h = {h:.3e}, residual = {residual:.3e}, iterations = {iterations})")]
    NewtonDivergence {
        t: f64,
        h: f64,
        residual: f64,
        iterations: usize,
    },
    #[error("singular update matrix at t = {t:.6} (beta = {beta}, h = {h:.3e})")]
    SingularUpdate { t: f64, h: f64, beta: f64 },
    #[error("non-finite state at t = {t:.6}")]
    NonFinite { t: f64 },
}

/// Failure of the equilibrium solve.
#[derive(Debug, Clone, Error)]
pub enum EquilibriumError {
    #[error("equilibrium Newton diverged (final residual {residual:.3e} after {iterations} iterations)")]
    Divergence { residual: f64, iterations: usize },
    #[error("singular equilibrium Jacobian")]
    SingularJacobian,
}

/// Errors from the staged fault scenario and the clearing-time search.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error("invalid scenario configuration: {0}")]
    Config(String),
    #[error("bracket [{lo}, {hi}] does not bracket a stability change (verdicts: {lo_verdict}, {hi_verdict})")]
    NotBracketing {
        lo: f64,
        hi: f64,
        lo_verdict: String,
        hi_verdict: String,
    },
    #[error("probe at t_break = {t_break} stayed inconclusive after widening the horizon")]
    Inconclusive { t_break: f64 },
}
