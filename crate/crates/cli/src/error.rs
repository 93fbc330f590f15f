use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] conevol_core::Error),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    /// 2 usage, 3 numerical failure, 4 invariant violation, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        use conevol_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Invariant(_) => 4,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::Config(_) | E::Dimension(_) | E::Format(_) | E::Json(_) => 2,
                E::Io(_) | E::Csv(_) => 1,
                _ => 3,
            },
        }
    }
}
