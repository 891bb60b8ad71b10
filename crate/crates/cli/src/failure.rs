use std::fmt;

/// Failure classes with their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Config,
    Data,
    Training,
    Backend,
}

impl Failure {
    pub fn exit_code(self) -> u8 {
        match self {
            Failure::Config => 2,
            Failure::Data => 3,
            Failure::Training => 4,
            Failure::Backend => 5,
        }
    }

    /// Exit code of an error returned by a subcommand; unclassified errors
    /// (plain I/O on outputs, for instance) map to 1.
    pub fn code_of(err: &anyhow::Error) -> u8 {
        err.downcast_ref::<Failure>().map_or(1, |f| f.exit_code())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Failure::Config => "configuration error",
            Failure::Data => "data error",
            Failure::Training => "training error",
            Failure::Backend => "backend error",
        })
    }
}

impl std::error::Error for Failure {}

pub trait Classify<T> {
    /// Tags the error with a failure class. Apply last: the class must be the
    /// outermost context for [`Failure::code_of`] to find it.
    fn class(self, failure: Failure) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn class(self, failure: Failure) -> anyhow::Result<T> {
        self.map_err(|e| e.into().context(failure))
    }
}

pub fn train_failure(err: &rgs_core::trainer::TrainError) -> Failure {
    match err {
        rgs_core::trainer::TrainError::Config(_) => Failure::Config,
        _ => Failure::Training,
    }
}
