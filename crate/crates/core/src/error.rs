use thiserror::Error;

/// Standing assumptions a scenario must satisfy before it can be simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// Minimum phase with a vector relative degree.
    MinimumPhaseRelativeDegree,
    /// Undirected and connected communication graph.
    ConnectedGraph,
    /// Strictly convex local costs.
    StrictConvexity,
    /// Strongly convex local costs with Lipschitz gradients.
    StrongConvexity,
}

impl std::fmt::Display for Assumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Assumption::MinimumPhaseRelativeDegree => {
                write!(
                    f,
                    "Assumption 1 (minimum phase with vector relative degree)"
                )
            }
            Assumption::ConnectedGraph => write!(f, "Assumption 2 (undirected connected graph)"),
            Assumption::StrictConvexity => write!(f, "Assumption 3 (strictly convex costs)"),
            Assumption::StrongConvexity => {
                write!(
                    f,
                    "Assumption 4 (strongly convex costs, Lipschitz gradients)"
                )
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("output {output} has no relative degree: every Markov parameter C_i A^k B (k < {kappa}) vanishes")]
    NoRelativeDegree { output: usize, kappa: usize },

    #[error("decoupling matrix is singular (pivot ratio {ratio:.3e})")]
    SingularDecoupling { ratio: f64 },

    #[error("no complement basis psi with psi*B = 0 keeps the coordinate transform nonsingular")]
    ComplementNotFound,

    #[error("invalid complement basis: {0}")]
    InvalidComplement(String),

    #[error("normal-form check failed: {0}")]
    NormalForm(String),

    #[error("non-finite cost value at {point:?}")]
    NonFiniteEval { point: Vec<f64> },

    #[error("non-finite gradient for agent {agent} at {point:?}")]
    NonFiniteGradient { agent: usize, point: Vec<f64> },

    #[error(
        "minimizer did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})"
    )]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{assumption} violated: {detail}")]
    Assumption {
        assumption: Assumption,
        detail: String,
    },

    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("rate fit needs at least 10 samples in the window, got {got}")]
    TooFewSamples { got: usize },

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
