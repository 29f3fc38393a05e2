//! Point clouds and voxelization.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Coords, Features, Lattice, Matrix, SparseTensor, MAX_DIM};

/// Raw points: `len` rows of `dim` positions followed by `channels` features.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    channels: usize,
    data: Vec<f32>,
}

impl PointCloud {
    pub fn new(dim: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidArgument(format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        if !data.len().is_multiple_of(dim + channels) {
            return Err(Error::ShapeMismatch(format!(
                "{} values is not a multiple of row width {}",
                data.len(),
                dim + channels
            )));
        }
        Ok(PointCloud { dim, channels, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.dim + self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.width())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// How features of points falling in the same voxel are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduce {
    #[default]
    Mean,
    /// Keep the first point in input order.
    First,
}

impl std::str::FromStr for Reduce {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Reduce::Mean),
            "first" => Ok(Reduce::First),
            other => Err(format!("unknown reduction `{other}`")),
        }
    }
}

/// Quantize a point cloud onto the voxel lattice.
///
/// Cells are `floor((p - min_corner) / voxel_size)`; the result is a batch-0
/// tensor at stride 1 with rows in ascending flattened-key order and boundary
/// `max + 1` per dimension.
pub fn voxelize(points: &PointCloud, voxel_size: f64, reduce: Reduce) -> Result<SparseTensor> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !voxel_size.is_finite() || voxel_size <= 0.0 {
        return Err(Error::InvalidArgument(format!("voxel size must be positive, got {voxel_size}")));
    }
    let dim = points.dim();
    let channels = points.channels();

    let mut min_corner = vec![f64::INFINITY; dim];
    for p in points.iter() {
        for d in 0..dim {
            let v = p[d] as f64;
            if !v.is_finite() {
                return Err(Error::InvalidArgument("non-finite point position".into()));
            }
            min_corner[d] = min_corner[d].min(v);
        }
    }

    let mut cells: Vec<[u32; MAX_DIM]> = Vec::with_capacity(points.len());
    let mut max_cell = vec![0u32; dim];
    for p in points.iter() {
        let mut c = [0u32; MAX_DIM];
        for d in 0..dim {
            let q = ((p[d] as f64 - min_corner[d]) / voxel_size).floor();
            if q > u32::MAX as f64 / 2.0 {
                return Err(Error::InvalidArgument("voxel coordinates overflow".into()));
            }
            c[d] = q as u32;
            max_cell[d] = max_cell[d].max(c[d]);
        }
        cells.push(c);
    }

    let boundary: Vec<u32> = max_cell.iter().map(|&m| m + 1).collect();
    let lattice = Lattice::new(1, &boundary)?;
    let mut row = vec![0u32; dim + 1];
    let key_of = |c: &[u32; MAX_DIM], row: &mut Vec<u32>| {
        row[1..].copy_from_slice(&c[..dim]);
        lattice.flatten(row)
    };

    // key -> (slot, count)
    let mut slots: HashMap<u64, (usize, u32)> = HashMap::with_capacity(points.len());
    let mut sums: Vec<f64> = Vec::new();
    let mut keys: Vec<u64> = Vec::new();
    for (p, c) in points.iter().zip(&cells) {
        let key = key_of(c, &mut row);
        let feat = &p[dim..];
        match slots.get_mut(&key) {
            Some((slot, count)) => {
                if reduce == Reduce::Mean {
                    let acc = &mut sums[*slot * channels..(*slot + 1) * channels];
                    acc.iter_mut().zip(feat).for_each(|(a, &f)| *a += f as f64);
                }
                *count += 1;
            }
            None => {
                slots.insert(key, (keys.len(), 1));
                keys.push(key);
                sums.extend(feat.iter().map(|&f| f as f64));
            }
        }
    }

    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_unstable_by_key(|&i| keys[i]);
    let sorted_keys: Vec<u64> = order.iter().map(|&i| keys[i]).collect();
    let mut feats = Vec::with_capacity(order.len() * channels);
    for &i in &order {
        let (_, count) = slots[&keys[i]];
        let scale = if reduce == Reduce::Mean { 1.0 / count as f64 } else { 1.0 };
        feats.extend(sums[i * channels..(i + 1) * channels].iter().map(|&s| (s * scale) as f32));
    }

    let coords = Coords::from_keys(&lattice, &sorted_keys);
    let features = Features::F32(Matrix::from_vec(order.len(), channels, feats)?);
    SparseTensor::new(coords, features, 1, lattice)
}
