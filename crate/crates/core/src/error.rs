use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward: loss must be a scalar, got {numel} elements")]
    NotScalar { numel: usize },
    #[error("backward: loss does not depend on any tracked input")]
    Detached,
    #[error("invalid argument `{name}`: {detail}")]
    InvalidArgument { name: &'static str, detail: String },
    #[error("gradient check: objective is not deterministic")]
    NonDeterministic,
    #[error("{0} head is disabled by the configured target kind")]
    HeadDisabled(&'static str),
    #[error("no masked tokens; masked loss is undefined")]
    EmptyMask,
    #[error("encoder needs at least one visible token")]
    NoVisibleTokens,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("non-finite loss at step {step}: loss={loss}")]
    NonFiniteLoss { step: u64, loss: f64 },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(name: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { name, detail: detail.into() }
    }
}
