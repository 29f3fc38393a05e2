//! Sparse convolution engine for voxelized point clouds.
//!
//! A layer runs in three phases: mapping builds output coordinates and the
//! per-offset kernel map, gather copies input rows into a matmul buffer, and
//! scatter accumulates the per-offset products into the outputs. Per-offset
//! matmuls are grouped into padded batches according to a tuned
//! `(epsilon, S)` strategy.

pub mod autotune;
pub mod dense;
pub mod error;
pub mod execution;
pub mod io;
pub mod mapping;
pub mod oracle;
pub mod precision;
pub mod tensor;
pub mod traffic;
pub mod voxel;

pub use error::{Error, Result};
pub use execution::{ExecOptions, GroupingParams, LayerSpec, MapCache, Threshold};
pub use mapping::{IndexKind, KernelMap};
pub use precision::Precision;
pub use tensor::{Coords, Features, Lattice, Matrix, SparseTensor, Weights};
