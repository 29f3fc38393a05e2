//! Dense grids, used to bridge sparse tensors to the dense reference.

use crate::error::{Error, Result};
use crate::tensor::{Coords, Features, Lattice, Matrix, SparseTensor};

/// Default cap on `volume x channels` elements for dense materialization.
pub const DEFAULT_DENSE_CAP: u64 = 1 << 28;

/// A dense `batch x boundary` grid of `channels`-vectors, stored in
/// flattened-key order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    lattice: Lattice,
    channels: usize,
    data: Vec<f32>,
}

impl DenseGrid {
    pub fn zeros(lattice: Lattice, channels: usize, cap: u64) -> Result<Self> {
        let cells = lattice.volume().saturating_mul(channels.max(1) as u64);
        if cells > cap {
            return Err(Error::DenseVolumeOverCap { cells, cap });
        }
        let n = lattice.volume() as usize * channels;
        Ok(DenseGrid { lattice, channels, data: vec![0.0; n] })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn cell(&self, key: u64) -> &[f32] {
        let c = self.channels;
        let at = key as usize * c;
        &self.data[at..at + c]
    }

    #[inline]
    pub fn cell_mut(&mut self, key: u64) -> &mut [f32] {
        let c = self.channels;
        let at = key as usize * c;
        &mut self.data[at..at + c]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Number of cells with at least one nonzero channel.
    pub fn nonzero_cells(&self) -> usize {
        self.data.chunks_exact(self.channels.max(1)).filter(|c| c.iter().any(|&v| v != 0.0)).count()
    }

    /// Cells with any nonzero channel, in ascending key order.
    pub fn sparsify(&self) -> (Coords, Matrix<f32>) {
        let mut keys = Vec::new();
        let mut feats = Vec::new();
        for (k, cell) in self.data.chunks_exact(self.channels.max(1)).enumerate() {
            if cell.iter().any(|&v| v != 0.0) {
                keys.push(k as u64);
                feats.extend_from_slice(cell);
            }
        }
        let n = keys.len();
        (Coords::from_keys(&self.lattice, &keys), Matrix::from_vec(n, self.channels, feats).unwrap())
    }
}

/// Materialize a sparse tensor as a dense grid, zero at inactive sites.
pub fn to_dense(t: &SparseTensor, cap: u64) -> Result<DenseGrid> {
    let mut grid = DenseGrid::zeros(t.lattice().clone(), t.channels(), cap)?;
    let feats = match t.features() {
        Features::F32(m) => std::borrow::Cow::Borrowed(m),
        other => std::borrow::Cow::Owned(other.to_f32()),
    };
    for (i, row) in t.coords().iter().enumerate() {
        let key = t.lattice().flatten(row);
        grid.cell_mut(key).copy_from_slice(feats.row(i));
    }
    Ok(grid)
}
