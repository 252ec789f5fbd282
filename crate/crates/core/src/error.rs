use thiserror::Error;

/// Errors raised anywhere in the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("kepler solve did not converge (M={mean_anomaly}, eps={eps})")]
    KeplerNonConvergence { mean_anomaly: f64, eps: f64 },

    #[error("distance to {body} is {distance:e}, below the singularity floor {floor:e}; use regularized propagation")]
    Singularity {
        body: &'static str,
        distance: f64,
        floor: f64,
    },

    #[error("integrator failure at t={t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("event T={target} not bracketed within s-span {span}")]
    EventNotBracketed { target: f64, span: f64 },

    #[error("small divisor |1-exp(i k omega)|={divisor:e} at mode k={mode}")]
    SmallDivisor { mode: i64, divisor: f64 },

    #[error("contraction rate {rate} is not below 1 for the {mode} solve")]
    NotContracting { rate: f64, mode: &'static str },

    #[error("fixed-point iteration hit its cap of {iterations} steps (rate {rate}, last change {last_change:e})")]
    IterationCap {
        iterations: usize,
        rate: f64,
        last_change: f64,
    },

    #[error("quasi-Newton diverged after {steps} steps (errors: {history:?})")]
    Divergence { steps: usize, history: Vec<f64> },

    #[error("quasi-Newton did not reach tolerance within {steps} steps (last error {last:e})")]
    NotConverged { steps: usize, last: f64 },

    #[error("orbit is not whiskered: nontrivial multipliers {detail}")]
    NotWhiskered { detail: String },

    #[error("log of non-positive multiplier {value} at grid point {index}; a double covering is required")]
    NonPositiveMultiplier { index: usize, value: f64 },

    #[error("bundle matrix is singular at grid point {index}")]
    BundleDegeneracy { index: usize },

    #[error("symplectic check failed: |B-1|={deviation:e} at grid point {index}")]
    SymplecticDefect { index: usize, deviation: f64 },

    #[error("Floquet matrix departs from the mandated form by {deviation:e}")]
    Sparsity { deviation: f64 },

    #[error("grid point {index}: {source}")]
    GridPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sub-order residual {residual:e} at order {order} exceeds {limit:e}")]
    SubOrderResidual {
        order: usize,
        residual: f64,
        limit: f64,
    },

    #[error("fundamental domain collapsed to {radius:e}")]
    DomainCollapse { radius: f64 },

    #[error("jet {op} needs a nonzero constant term (got {c0:e})")]
    JetDomain { op: &'static str, c0: f64 },

    #[error("time-reversal symmetry unavailable: {0}")]
    SymmetryUnavailable(String),

    #[error("continuation stopped at {parameter}={value}: {reason}")]
    Continuation {
        parameter: &'static str,
        value: f64,
        reason: String,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_point(index: usize, source: Error) -> Error {
        Error::GridPoint {
            index,
            source: Box::new(source),
        }
    }

    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::KeplerNonConvergence { .. } => "kepler",
            Error::Singularity { .. } => "singularity",
            Error::Integration { .. } => "integration",
            Error::EventNotBracketed { .. } => "event",
            Error::SmallDivisor { .. } => "small-divisor",
            Error::NotContracting { .. } => "not-contracting",
            Error::IterationCap { .. } => "iteration-cap",
            Error::Divergence { .. } => "divergence",
            Error::NotConverged { .. } => "not-converged",
            Error::NotWhiskered { .. } => "not-whiskered",
            Error::NonPositiveMultiplier { .. } => "non-positive-multiplier",
            Error::BundleDegeneracy { .. } => "bundle-degeneracy",
            Error::SymplecticDefect { .. } => "symplectic-defect",
            Error::Sparsity { .. } => "sparsity",
            Error::GridPoint { source, .. } => source.kind(),
            Error::SubOrderResidual { .. } => "sub-order-residual",
            Error::DomainCollapse { .. } => "domain-collapse",
            Error::JetDomain { .. } => "jet-domain",
            Error::SymmetryUnavailable(_) => "symmetry",
            Error::Continuation { .. } => "continuation",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
