//! Gather, grouped matmul and scatter; layer forward passes.

mod gemm;
mod grouping;
mod layer;
mod movement;
mod pointwise;

pub use gemm::{matmul_rows, sgemm};
pub use grouping::{
    execute_group, execute_groups, execute_groups_into, partition_groups, schedule, ExecMode, Group, GroupingParams, GroupingStrategy, Threshold,
};
pub use layer::{
    inverse_conv_forward, sparse_conv_forward, CachedMap, ExecOptions, LayerRun, LayerSpec, MapCache, StageTimes,
};
pub use movement::{
    gather, gather_into, gather_offsets, scatter_accumulate, scatter_accumulate_into, scatter_offsets, FeatureBuffer, GatherOrder,
    ScatterOrder,
};
pub use pointwise::{pointwise_apply, PointwiseOp};
