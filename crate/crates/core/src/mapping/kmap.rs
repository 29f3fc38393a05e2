//! Kernel maps and the indexed map search.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{kernel_volume, Coords};

use super::index::CoordinateIndex;
use super::offsets::KernelOffsets;

/// One map entry: input row `input` contributes to output row `output`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MapEntry {
    pub input: u32,
    pub output: u32,
}

impl MapEntry {
    pub fn new(input: u32, output: u32) -> Self {
        MapEntry { input, output }
    }

    pub fn swapped(self) -> Self {
        MapEntry { input: self.output, output: self.input }
    }
}

/// Per-offset lists of `(input row, output row)` pairs.
///
/// Entries within an offset are ordered by output row. `symmetric` marks
/// maps of stride-1, odd-kernel layers over identical input/output sets, for
/// which `M[V-1-n]` is `M[n]` with roles swapped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelMap {
    dim: usize,
    kernel_size: usize,
    stride: u32,
    n_in: usize,
    n_out: usize,
    symmetric: bool,
    entries: Vec<Vec<MapEntry>>,
}

impl KernelMap {
    /// Build from explicit per-offset lists. Lists are sorted by output row.
    pub fn from_entries(
        dim: usize,
        kernel_size: usize,
        stride: u32,
        n_in: usize,
        n_out: usize,
        mut entries: Vec<Vec<MapEntry>>,
    ) -> Result<Self> {
        if entries.len() != kernel_volume(dim, kernel_size) {
            return Err(Error::ShapeMismatch(format!(
                "{} offset lists for a kernel volume of {}",
                entries.len(),
                kernel_volume(dim, kernel_size)
            )));
        }
        for list in &mut entries {
            list.sort_unstable_by_key(|e| (e.output, e.input));
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument("duplicate map entry".into()));
            }
            if list.iter().any(|e| e.input as usize >= n_in || e.output as usize >= n_out) {
                return Err(Error::InvalidArgument("map entry row out of range".into()));
            }
        }
        let mut map = KernelMap { dim, kernel_size, stride, n_in, n_out, symmetric: false, entries };
        map.symmetric = map.check_symmetry();
        Ok(map)
    }

    fn check_symmetry(&self) -> bool {
        if self.stride != 1 || self.kernel_size.is_multiple_of(2) || self.n_in != self.n_out {
            return false;
        }
        let v = self.volume();
        (0..=v / 2).all(|n| {
            let a = &self.entries[n];
            let b = &self.entries[v - 1 - n];
            if a.len() != b.len() {
                return false;
            }
            let mut mirrored: Vec<MapEntry> = a.iter().map(|e| e.swapped()).collect();
            mirrored.sort_unstable_by_key(|e| (e.output, e.input));
            &mirrored == b
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn volume(&self) -> usize {
        self.entries.len()
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn entries(&self, n: usize) -> &[MapEntry] {
        &self.entries[n]
    }

    pub fn all_entries(&self) -> &[Vec<MapEntry>] {
        &self.entries
    }

    /// `|M[n]|` for every offset.
    pub fn sizes(&self) -> Vec<usize> {
        self.entries.iter().map(Vec::len).collect()
    }

    /// Prefix sums of the sizes; `cumulative()[n]` is the first buffer row of
    /// offset `n` and the last element is `|M|`.
    pub fn cumulative(&self) -> Vec<usize> {
        let mut acc = Vec::with_capacity(self.entries.len() + 1);
        acc.push(0);
        for list in &self.entries {
            acc.push(acc.last().unwrap() + list.len());
        }
        acc
    }

    /// Total number of entries `|M|`.
    pub fn total(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    /// Map with input and output roles exchanged, as used by a transposed
    /// layer that reuses a downsampling map.
    pub fn transposed(&self) -> KernelMap {
        let entries = self
            .entries
            .iter()
            .map(|list| {
                let mut l: Vec<MapEntry> = list.iter().map(|e| e.swapped()).collect();
                l.sort_unstable_by_key(|e| (e.output, e.input));
                l
            })
            .collect();
        KernelMap {
            dim: self.dim,
            kernel_size: self.kernel_size,
            stride: self.stride,
            n_in: self.n_out,
            n_out: self.n_in,
            symmetric: self.symmetric,
            entries,
        }
    }

    /// Copy with the entries of offset `n` removed.
    pub fn without_offset(&self, n: usize) -> KernelMap {
        let mut m = self.clone();
        m.entries[n].clear();
        m.symmetric = false;
        m
    }

    /// Entries as a sorted set of `(offset, input, output)` triples.
    pub fn triples(&self) -> Vec<(usize, u32, u32)> {
        let mut t: Vec<_> = self
            .entries
            .iter()
            .enumerate()
            .flat_map(|(n, l)| l.iter().map(move |e| (n, e.input, e.output)))
            .collect();
        t.sort_unstable();
        t
    }
}

const SEARCH_CHUNK: usize = 2048;

/// Indexed map search over the offsets in `which`: for output `q_k` and
/// offset `delta`, look up `r = s * q_k + delta` in the input index.
fn search_offsets(
    index: &CoordinateIndex,
    out_coords: &Coords,
    offsets: &KernelOffsets,
    stride: u32,
    which: &[usize],
) -> Vec<Vec<MapEntry>> {
    let dim = out_coords.dim();
    let lattice = index.lattice();
    let s = stride as i64;
    let n_out = out_coords.len();

    let chunks: Vec<Vec<Vec<MapEntry>>> = (0..n_out.div_ceil(SEARCH_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut local: Vec<Vec<MapEntry>> = vec![Vec::new(); which.len()];
            let mut r = [0i64; crate::tensor::MAX_DIM];
            let hi = ((c + 1) * SEARCH_CHUNK).min(n_out);
            for k in c * SEARCH_CHUNK..hi {
                let q = out_coords.row(k);
                for (slot, &n) in which.iter().enumerate() {
                    let delta = offsets.get(n);
                    for d in 0..dim {
                        r[d] = s * q[d + 1] as i64 + delta[d] as i64;
                    }
                    if let Some(key) = lattice.flatten_signed(q[0], &r[..dim]) {
                        if let Some(j) = index.query_key(key) {
                            local[slot].push(MapEntry::new(j, k as u32));
                        }
                    }
                }
            }
            local
        })
        .collect();

    let mut merged: Vec<Vec<MapEntry>> = vec![Vec::new(); which.len()];
    for chunk in chunks {
        for (dst, src) in merged.iter_mut().zip(chunk) {
            dst.extend(src);
        }
    }
    merged
}

/// Build the kernel map for one layer.
///
/// For stride-1 layers with odd kernels and identical input/output sets only
/// offsets `0..=center` are searched; the rest follow from symmetry.
pub fn map_search(index: &CoordinateIndex, out_coords: &Coords, offsets: &KernelOffsets, stride: u32) -> Result<KernelMap> {
    let vol = offsets.len();
    if let (1, Some(center)) = (stride, offsets.center()) {
        let first_half: Vec<usize> = (0..=center).collect();
        let found = search_offsets(index, out_coords, offsets, stride, &first_half);
        let same_sets = index.len() == out_coords.len()
            && found[center].len() == out_coords.len()
            && found[center].iter().all(|e| e.input == e.output);
        if same_sets {
            let mut entries = found;
            entries.resize(vol, Vec::new());
            let half = KernelMap {
                dim: offsets.dim(),
                kernel_size: offsets.kernel_size(),
                stride,
                n_in: index.len(),
                n_out: out_coords.len(),
                symmetric: false,
                entries,
            };
            return derive_symmetric_maps(half);
        }
        let rest: Vec<usize> = (center + 1..vol).collect();
        let mut entries = found;
        entries.extend(search_offsets(index, out_coords, offsets, stride, &rest));
        return Ok(KernelMap {
            dim: offsets.dim(),
            kernel_size: offsets.kernel_size(),
            stride,
            n_in: index.len(),
            n_out: out_coords.len(),
            symmetric: false,
            entries,
        });
    }
    map_search_direct(index, out_coords, offsets, stride)
}

/// Map search over every offset, without using symmetry.
pub fn map_search_direct(
    index: &CoordinateIndex,
    out_coords: &Coords,
    offsets: &KernelOffsets,
    stride: u32,
) -> Result<KernelMap> {
    if offsets.dim() != out_coords.dim() || index.lattice().dim() != out_coords.dim() {
        return Err(Error::ShapeMismatch("offset, coordinate and index dimensions differ".into()));
    }
    let all: Vec<usize> = (0..offsets.len()).collect();
    let entries = search_offsets(index, out_coords, offsets, stride, &all);
    let mut map = KernelMap {
        dim: offsets.dim(),
        kernel_size: offsets.kernel_size(),
        stride,
        n_in: index.len(),
        n_out: out_coords.len(),
        symmetric: false,
        entries,
    };
    map.symmetric = map.check_symmetry();
    Ok(map)
}

/// Complete a half map of a stride-1, odd-kernel layer:
/// `M[V-1-n] = {(k, j) : (j, k) in M[n]}` for `n` below the center.
pub fn derive_symmetric_maps(half: KernelMap) -> Result<KernelMap> {
    if half.stride != 1 || half.kernel_size.is_multiple_of(2) {
        return Err(Error::NotSymmetric { kernel_size: half.kernel_size, stride: half.stride });
    }
    if half.n_in != half.n_out {
        return Err(Error::InvalidArgument("symmetric derivation needs identical input and output sets".into()));
    }
    let vol = half.volume();
    let center = (vol - 1) / 2;
    let mut entries = half.entries;
    for n in 0..center {
        let mut mirrored: Vec<MapEntry> = entries[n].iter().map(|e| e.swapped()).collect();
        mirrored.sort_unstable_by_key(|e| e.output);
        entries[vol - 1 - n] = mirrored;
    }
    Ok(KernelMap {
        dim: half.dim,
        kernel_size: half.kernel_size,
        stride: half.stride,
        n_in: half.n_in,
        n_out: half.n_out,
        symmetric: true,
        entries,
    })
}
