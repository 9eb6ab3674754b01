use thiserror::Error;

/// Errors surfaced by the simulator, trainer and their file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("SCI field `{field}` value {value} does not fit in {bits} bits")]
    SciOverflow {
        field: &'static str,
        value: u64,
        bits: u32,
    },

    #[error("subchannel count {0} needs more than 14 frequency-location bits")]
    SciSubchannels(u32),

    #[error("invalid SSR address: {0}")]
    Address(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
