use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix size {n} is too small; at least 3 is required so the corners do not overlap the band")]
    SizeTooSmall { n: usize },

    #[error("sample index {index} is outside 0..{count}")]
    SampleIndexOutOfRange { index: usize, count: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("z^n overflows double precision (n*xi = {n_xi:.1}); use the balanced matrix instead")]
    CornerOverflow { n_xi: f64 },

    #[error("eigenvalue iteration did not converge for a {n}x{n} matrix")]
    NoConvergence { n: usize },

    #[error("transfer factor {index} has a zero super-diagonal entry")]
    SingularFactor { index: usize },

    #[error("phase winding along the contour |E| = {radius} is undefined: the contour passes through a zero")]
    ContourThroughZero { radius: f64 },

    #[error("density profile is not normalized (mass {mass})")]
    Unnormalized { mass: f64 },

    #[error("curve is not monotone nondecreasing near r = {radius}")]
    NonMonotone { radius: f64 },

    #[error("vector is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
