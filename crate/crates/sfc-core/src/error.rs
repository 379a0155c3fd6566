//! Error taxonomy shared by the library and the command-line front end.

/// Library-wide error type.
///
/// The variants map onto the process exit codes used by the CLI:
/// `Config` -> 2, `Data`/`Io` -> 3, `NumericDomain` -> 4 (when every chain
/// fails). `Input`, `DegenerateCluster`, and `Proposal` indicate misuse of an
/// operation or a rejected internal state and surface as ordinary errors.
#[derive(Debug, thiserror::Error)]
pub enum SfcError {
    /// An argument violated an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A cluster subset on which CAR matrices are undefined (singleton,
    /// disconnected, or containing a location with no within-cluster
    /// neighbor).
    #[error("degenerate cluster: {0}")]
    DegenerateCluster(String),

    /// A quantity left its mathematical domain (non-positive-definite
    /// matrix, non-positive quadratic form, collapsed support).
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    /// A move proposal could not be constructed (degenerate donor support).
    #[error("proposal error: {0}")]
    Proposal(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SfcError>;
