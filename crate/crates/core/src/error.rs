use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty cloud")]
    EmptyCloud,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dense volume of {cells} cells exceeds the cap of {cap} cells")]
    DenseVolumeOverCap { cells: u64, cap: u64 },

    #[error("grid index needs {cells} cells, over the cap of {cap}; use the hash index instead")]
    GridOverCap { cells: u64, cap: u64 },

    #[error("unsupported stride {0}; supported strides are 1 and 2")]
    UnsupportedStride(u32),

    #[error("symmetric map derivation requires a stride-1 layer with odd kernel size (got K={kernel_size}, s={stride})")]
    NotSymmetric { kernel_size: usize, stride: u32 },

    #[error("strategy does not match the kernel map: {0}")]
    StrategyMismatch(String),

    #[error("no cached map under reuse key `{0}`")]
    MissingMap(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("version mismatch: file has version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
