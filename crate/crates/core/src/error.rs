use thiserror::Error;

/// Unified error type for the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {message}")]
    InvalidParam { field: String, message: String },

    #[error("invalid material: poisson ratio {nu} outside (0, 0.5)")]
    InvalidMaterial { nu: f64 },

    #[error("inverted element: tet {tet} has signed volume {volume}")]
    InvertedElement { tet: usize, volume: f64 },

    #[error("degenerate element: tet volume {volume} below floor {floor}")]
    DegenerateElement { volume: f64, floor: f64 },

    #[error("conjugate gradient failed to converge: {iters} iterations, residual {residual:e}")]
    NoConvergence { iters: usize, residual: f64 },

    #[error("degenerate feature `{name}`: max equals min ({value})")]
    DegenerateFeature { name: String, value: f64 },

    #[error("zero truth norm in sample {sample}")]
    ZeroTruthNorm { sample: usize },

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported schema version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated file: needed {needed} bytes, had {available}")]
    TruncatedFile { needed: usize, available: usize },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("solver failed on sample {sample}: {source}")]
    SampleFailed {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Other(String),
}
