use thiserror::Error;

pub type Result<T> = std::result::Result<T, SpectralError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("lattice is not strictly increasing at n={index}: x[n+1]-x[n] = {gap}")]
    NonMonotoneLattice { index: usize, gap: f64 },

    #[error("root scan grid too coarse near k={k} (step {step})")]
    GridTooCoarse { k: f64, step: f64 },

    /// `|sin(k (x[n+1]-x[n]))|` fell below the singularity threshold.
    #[error("singular spacing: s_{index}(k) = {value:e} at k={k}")]
    SingularSpacing { index: usize, k: f64, value: f64 },

    #[error("resonant wavenumber k={k}: sin(kd) = {value:e}")]
    ResonantK { k: f64, value: f64 },

    #[error("initial vector has zero norm")]
    ZeroVector,

    #[error("index or position out of range: {0}")]
    OutOfRange(String),

    #[error("band-edge energy (|L| = 1) is not supported: L = {lyapunov}")]
    BandEdgeUnsupported { lyapunov: f64 },

    #[error("trace too short: need at least {required} points, got {got}")]
    InsufficientLength { required: usize, got: usize },

    #[error("envelope mismatch: residual envelope slope {slope} exceeds {limit}")]
    EnvelopeMismatch { slope: f64, limit: f64 },

    #[error("energy is not a critical point: L = {lyapunov}")]
    NotCritical { lyapunov: f64 },

    #[error("subordinate direction did not converge: seed distance {distance:e} at N={n}")]
    NoConvergence { distance: f64, n: usize },

    #[error("degenerate boundary data: psi(0) = psi'(0) = 0")]
    DegenerateBoundary,

    #[error("energy lies on the singular set: {which} vanishes at k={k}")]
    SingularSetHit { which: String, k: f64 },

    #[error("io: {0}")]
    Io(String),
}

impl SpectralError {
    /// True for errors that come from the numerics (singular set, convergence)
    /// rather than from invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SpectralError::SingularSpacing { .. }
                | SpectralError::ResonantK { .. }
                | SpectralError::NoConvergence { .. }
                | SpectralError::SingularSetHit { .. }
                | SpectralError::GridTooCoarse { .. }
                | SpectralError::EnvelopeMismatch { .. }
                | SpectralError::DegenerateBoundary
                | SpectralError::BandEdgeUnsupported { .. }
                | SpectralError::NotCritical { .. }
        )
    }
}

impl From<std::io::Error> for SpectralError {
    fn from(e: std::io::Error) -> Self {
        SpectralError::Io(e.to_string())
    }
}

impl From<csv::Error> for SpectralError {
    fn from(e: csv::Error) -> Self {
        SpectralError::Io(e.to_string())
    }
}
