use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: altmin::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    /// 1 for configuration problems, 2 for failed checks, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 2,
            _ => 1,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, altmin::Error> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| match source {
            // admissibility and option errors are configuration problems
            altmin::Error::Inadmissible { .. } | altmin::Error::InvalidConfig(_) | altmin::Error::InvalidSpec(_) => {
                CliError::Config(format!("{}: {source}", what()))
            }
            source => CliError::Core { context: what(), source },
        })
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| CliError::Io { path: what(), source })
    }
}
