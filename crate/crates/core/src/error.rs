use thiserror::Error;

/// Library-level error type. The CLI maps each variant onto a process exit
/// code: config errors exit 2, data errors exit 3, divergence exits 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Diverged { .. } => 4,
        }
    }
}
