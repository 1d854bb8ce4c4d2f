use thiserror::Error;

/// Errors raised across the library. Each variant corresponds to a distinct
/// failure class so callers (and the CLI) can map them to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parity error: {0}")]
    Parity(String),
    #[error("operator is not Hermitian (defect {defect:e})")]
    NonHermitian { defect: f64 },
    #[error("Hamiltonian is frustrated: no eigenvalue below kernel threshold {threshold:e} (lowest {lowest:e})")]
    Frustration { threshold: f64, lowest: f64 },
    #[error("eigenvalue tracking ambiguous between eps={eps_lo} and eps={eps_hi}: {detail}")]
    TrackingAmbiguity { eps_lo: f64, eps_hi: f64, detail: String },
    #[error("spectral gap closed at eps={eps}: gap {gap:e} below gamma {gamma:e}")]
    GapClosed { eps: f64, gap: f64, gamma: f64 },
    #[error("flow integration missed its tolerance at eps={eps}: residual {residual:e}")]
    FlowAccuracy { eps: f64, residual: f64 },
    #[error("model invariant violated: {0}")]
    Model(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("divergent sum: {0}")]
    Divergence(String),
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
