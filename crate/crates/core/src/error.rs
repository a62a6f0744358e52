use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("construction error: {0}")]
    Construction(String),

    #[error("timelike violation at lambda = {lambda}: g(v, v) = {norm}")]
    TimelikeViolation { lambda: f64, norm: f64 },

    #[error("degenerate vector: {0}")]
    Degeneracy(String),

    #[error("singular metric: eigenvalue {eigenvalue} at {point:?}")]
    SingularMetric { eigenvalue: f64, point: Vec<f64> },

    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),

    #[error("degenerate causal order: |delta tau| = {delta_tau} below resolution {resolution}")]
    DegenerateOrder { delta_tau: f64, resolution: f64 },

    #[error("orientation violated at event {event}: g(V0, V{event}) = {value}")]
    Orientation { event: u8, value: f64 },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("protocol inapplicable: {0}")]
    ProtocolInapplicable(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("post-selection failed: outcome probability {0}")]
    PostSelectionFailure(f64),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Whether the error stems from user input or scenario validation rather
    /// than from a numerical routine failing to converge.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::DimensionMismatch { .. }
                | Error::ScenarioInvalid(_)
                | Error::DegenerateOrder { .. }
                | Error::Orientation { .. }
                | Error::NotApplicable(_)
                | Error::ProtocolInapplicable(_)
        )
    }
}
