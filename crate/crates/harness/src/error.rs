use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Generate,
    Split,
    Train,
    Score,
    Evaluate,
    Write,
    Serve,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Generate => "generate",
            Self::Split => "split",
            Self::Train => "train",
            Self::Score => "score",
            Self::Evaluate => "evaluate",
            Self::Write => "write",
            Self::Serve => "serve",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{phase} phase failed: {message}")]
    Phase { phase: Phase, message: String },
}

impl HarnessError {
    pub fn phase(phase: Phase, err: impl std::fmt::Display) -> Self {
        Self::Phase {
            phase,
            message: err.to_string(),
        }
    }

    /// Process exit code: 2 for config errors, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Phase { .. } => 3,
        }
    }
}

/// Attaches a phase to any displayable error.
pub trait PhaseExt<T> {
    fn phase(self, phase: Phase) -> Result<T, HarnessError>;
}

impl<T, E: std::fmt::Display> PhaseExt<T> for Result<T, E> {
    fn phase(self, phase: Phase) -> Result<T, HarnessError> {
        self.map_err(|e| HarnessError::phase(phase, e))
    }
}
