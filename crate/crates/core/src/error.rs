use thiserror::Error;

/// Errors raised while loading, validating, or splitting data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: rating {value} outside [1,5]")]
    RatingOutOfRange {
        path: String,
        line: usize,
        value: f64,
    },

    #[error("duplicate rating for (user '{user}', item '{item}')")]
    DuplicatePair { user: String, item: String },

    #[error("unknown user id '{0}'")]
    UnknownUser(String),

    #[error("self-loop on user '{0}'")]
    SelfLoop(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("split needs at least 5 ratings, got {0}")]
    TooFewRatings(usize),

    #[error("split left the {0} side empty")]
    EmptySplit(&'static str),

    #[error("community '{0}' is empty")]
    EmptyCommunity(String),
}

/// Errors raised by graph primitives.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("user index {index} out of range (num_users = {num_users})")]
    UserOutOfRange { index: usize, num_users: usize },

    #[error("requested {q} connectors but the graph has only {num_users} users")]
    TooManyConnectors { q: usize, num_users: usize },

    #[error("invalid connector method: {0}")]
    InvalidMethod(String),
}

/// Errors raised during model training and prediction.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch} (learning rate {learning_rate})")]
    Diverged { epoch: usize, learning_rate: f64 },

    #[error("submatrix {index}: {source}")]
    Local {
        index: usize,
        #[source]
        source: Box<TrainError>,
    },

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("all submatrices are empty")]
    AllSubmatricesEmpty,

    #[error("arc-cosine distance undefined for a zero vector")]
    ZeroVector,

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Data(#[from] DataError),
}
