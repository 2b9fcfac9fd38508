use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("no moderator record for county {county} in year {year}")]
    MissingModerator { county: String, year: i32 },

    #[error("duplicate observation for pair {origin}->{destination} in year {year}")]
    DuplicateObservation {
        origin: String,
        destination: String,
        year: i32,
    },

    #[error("design is rank deficient; dependent columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("regressor `{0}` has no within-group variation")]
    ZeroWithinVariation(String),

    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{spec}: {source}")]
    InSpec {
        spec: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn in_spec(self, spec: impl Into<String>) -> Error {
        Error::InSpec {
            spec: spec.into(),
            source: Box::new(self),
        }
    }
}
