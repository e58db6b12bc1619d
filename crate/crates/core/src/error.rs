use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} exceeds the integration horizon {horizon}")]
    HorizonExceeded { t: f64, horizon: f64 },

    #[error("non-finite state encountered while integrating (time {t})")]
    NonFinite { t: f64 },

    #[error("distance {dist} is not below the injectivity radius {radius}")]
    InjectivityRadius { dist: f64, radius: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("vector field `{name}` has a (near) rest point on its sample domain: inf |X| = {margin:e}")]
    RestPoint { name: String, margin: f64 },

    #[error("|X(p_{k})| = {norm:e} is below half the nonsingular margin {margin:e}")]
    NearSingular { k: i64, norm: f64, margin: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("chart precondition violated: {what} = {bound:e} is not below the injectivity radius {radius}")]
    ChartPrecondition { what: String, bound: f64, radius: f64 },

    #[error("rank deficiency: expected rank {expected}, numerical rank {got}")]
    RankDeficient { expected: usize, got: usize },

    #[error("reduction identity failed: residual {residual:e} exceeds {tol:e}")]
    ReductionIdentity { residual: f64, tol: f64 },

    #[error("regime check failed at k = {k}: |beta(k+N) - (k+N)| = {offset:e} > tau/2 = {limit:e}")]
    RegimeCheck { k: i64, offset: f64, limit: f64 },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
