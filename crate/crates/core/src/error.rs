use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("covariance construction failed: eigenvalue {eigenvalue:.3e} at mode {mode} (grid too coarse)")]
    Covariance { mode: usize, eigenvalue: f64 },
    #[error("gamma = {0} is outside the subcritical range [0, sqrt 2)")]
    Gamma(f64),
    #[error("unsupported scale {0}: scales must lie on the quarter lattice resolved by the stack")]
    Scale(f64),
    #[error("singular distortion: |mu| = {0} >= 1")]
    SingularDistortion(f64),
    #[error("aliasing guard: support reaches within {0:.3} of the box edge")]
    Aliasing(f64),
    #[error("Neumann iteration did not converge in {iterations} steps (last update {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("mask is not a topological annulus: {0}")]
    NotAnnulus(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
