use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown relation `{name}`")]
    UnknownRelation { line: usize, name: String },

    #[error("line {line}: undirected self-loop on `{entity}` for relation `{relation}`")]
    SelfLoop {
        line: usize,
        entity: String,
        relation: String,
    },

    #[error("line {line}: unknown entity `{name}` (vocabulary is frozen)")]
    UnknownEntity { line: usize, name: String },

    #[error("relation catalog: {0}")]
    Catalog(String),

    #[error("graph: {0}")]
    Graph(String),

    #[error("filtering with threshold {threshold} removed every interaction")]
    EmptyAfterFilter { threshold: usize },

    #[error("user `{user}` has {count} interactions; leave-one-out needs at least 3")]
    Split { user: String, count: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate hyperplane normal for relation {relation}: squared norm {norm_sq:e}")]
    DegenerateNormal { relation: u32, norm_sq: f64 },

    #[error("no valid negative for ({head}, {relation}) after {draws} draws")]
    SamplingExhausted {
        head: String,
        relation: String,
        draws: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint does not match dataset: {0}")]
    Mismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the file it came from.
    pub fn in_file(self, path: impl AsRef<std::path::Path>) -> Self {
        Error::File {
            path: path.as_ref().display().to_string(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 1,
            Error::NonFinite(_) | Error::DegenerateNormal { .. } => 3,
            Error::File { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
