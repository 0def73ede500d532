use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field contains non-finite values")]
    NonFinite,
    #[error("field length {got} does not match grid ({want} values expected)")]
    LengthMismatch { got: usize, want: usize },
    #[error("support margin violated: field is non-negligible within {margin} voxels of the boundary (max boundary value {max_boundary:.3e} vs field max {max_field:.3e})")]
    SupportMargin {
        margin: usize,
        max_boundary: f64,
        max_field: f64,
    },
    #[error("zero covector")]
    ZeroCovector,
    #[error("direction too close to a pole: alpha = {alpha:.6} outside band [{band:.3}, pi - {band:.3}]")]
    Pole { alpha: f64, band: f64 },
    #[error("degenerate plane: it contains an arc of the curve")]
    DegeneratePlane,
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("symbol weight singular: |gamma'(t_q) . xi_0| = {value:.3e} <= tau_sigma = {tau:.3e}")]
    SigmaProximity { value: f64, tau: f64 },
    #[error("not elliptic: only {found} usable intersection points (need at least 3)")]
    NotElliptic { found: usize },
    #[error("rank-deficient tensor set: certificate {certificate:.3e} below threshold {threshold:.3e}")]
    RankDeficient { certificate: f64, threshold: f64 },
    #[error("inadmissible angles: alpha_{i} and alpha_{j} differ by a multiple of pi")]
    Admissibility { i: usize, j: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
