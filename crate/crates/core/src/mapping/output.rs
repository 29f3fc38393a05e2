use crate::error::{Error, Result};
use crate::tensor::{Coords, Lattice};

use super::offsets::KernelOffsets;

/// Output boundary of a strided layer: `ceil(b / s)` per dimension.
pub fn downsampled_boundary(boundary: &[u32], stride: u32) -> Vec<u32> {
    boundary.iter().map(|&b| b.div_ceil(stride)).collect()
}

/// Output coordinates of a layer with the given stride.
///
/// Stride 1 returns the input unchanged (same rows, same order). For larger
/// strides every input `p` and offset `delta` yields the candidate
/// `u = p - delta`; it is kept when `u % s == 0` and `0 <= u < s * b_out`, and
/// emitted as `u / s`. Candidates are produced as flattened keys in a single
/// pass and reduced with one sort-unique, so rows come out in ascending key
/// order on the output lattice.
pub fn compute_output_coords(
    input: &Coords,
    offsets: &KernelOffsets,
    stride: u32,
    out_lattice: &Lattice,
) -> Result<Coords> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if stride == 1 {
        return Ok(input.clone());
    }
    let dim = input.dim();
    if offsets.dim() != dim || out_lattice.dim() != dim {
        return Err(Error::ShapeMismatch("offset, coordinate and lattice dimensions differ".into()));
    }
    let s = stride as i64;
    let limits: Vec<i64> = out_lattice.boundary().iter().map(|&b| b as i64 * s).collect();
    let bounds: Vec<u64> = out_lattice.boundary().iter().map(|&b| b as u64).collect();

    let mut keys = Vec::with_capacity(input.len() * offsets.len() / (stride as usize).pow(dim as u32).max(1) + 1);
    for p in input.iter() {
        let batch = p[0] as u64;
        'offsets: for delta in offsets.iter() {
            let mut key = batch;
            for d in 0..dim {
                let u = p[d + 1] as i64 - delta[d] as i64;
                if u < 0 || u % s != 0 || u >= limits[d] {
                    continue 'offsets;
                }
                key = key * bounds[d] + (u / s) as u64;
            }
            keys.push(key);
        }
    }
    keys.sort_unstable();
    keys.dedup();
    Ok(Coords::from_keys(out_lattice, &keys))
}
