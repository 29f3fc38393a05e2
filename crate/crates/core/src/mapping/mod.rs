//! Output-coordinate construction, coordinate indexes and kernel maps.

mod index;
mod kmap;
mod offsets;
mod output;
mod plan;

pub use index::{build_index, resolve_kind, Backend, CoordinateIndex, IndexKind, DEFAULT_GRID_CAP};
pub use kmap::{derive_symmetric_maps, map_search, map_search_direct, KernelMap, MapEntry};
pub use offsets::{EvenKernelConvention, KernelOffsets};
pub use output::{compute_output_coords, downsampled_boundary};
pub use plan::{build_gather_scatter_plan, GatherScatterPlan};
