use thiserror::Error;

pub type Result<T> = std::result::Result<T, BsdeError>;

#[derive(Debug, Error)]
pub enum BsdeError {
    #[error("full-path lattice needs {required} leaves (2^{exponent}) but the node budget is {budget}; raise the budget or use recombining mode")]
    BudgetExceeded { required: u128, exponent: u32, budget: u64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("step size too large: K*dt = {k_dt} >= 1 (K = {lipschitz}, dt = {dt}); use at least {min_steps} steps")]
    StepSize {
        lipschitz: f64,
        dt: f64,
        k_dt: f64,
        min_steps: usize,
    },

    #[error("implicit solve did not converge at level {level}, node {node}: residual {residual:e} after {iterations} iterations")]
    NonConvergence {
        level: usize,
        node: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("time quadrature did not reach tolerance: estimate {estimate}, error estimate {error:e}")]
    Quadrature { estimate: f64, error: f64 },

    #[error("subgradient failed Fenchel-Young validation: residual {residual:e}")]
    SubgradientValidation { residual: f64 },

    #[error("inadmissible control on path {path}: 1 + mu.dW = {factor} is not positive")]
    InadmissibleControl { path: String, factor: f64 },

    #[error("optimal control is inadmissible at level {level}, node {node} (1 + mu.dW = {factor}); |mu| reaches {max_mu}, which needs at least {required_steps} steps")]
    InadmissibleOptimizer {
        level: usize,
        node: usize,
        factor: f64,
        max_mu: f64,
        required_steps: usize,
    },

    #[error("Picard iteration did not converge in {max_p} iterations (last distance {last_distance:e})")]
    PicardNonConvergence { max_p: usize, last_distance: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unknown catalog entry `{0}`")]
    UnknownCatalog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
