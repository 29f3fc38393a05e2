//! Core value types: coordinate lattices, sparse tensors and weights.

use half::f16;

use crate::error::{Error, Result};
use crate::precision::{Precision, Scalar};

/// Largest supported spatial dimensionality.
pub const MAX_DIM: usize = 4;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::default(); rows * cols] }
    }
}

impl<T: Copy> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} elements for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Gather rows by index into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix<T> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }
}

/// Feature matrix in one of the supported storage precisions.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    F32(Matrix<f32>),
    F16(Matrix<f16>),
}

impl Features {
    pub fn rows(&self) -> usize {
        match self {
            Features::F32(m) => m.rows(),
            Features::F16(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Features::F32(m) => m.cols(),
            Features::F16(m) => m.cols(),
        }
    }

    pub fn precision(&self) -> Precision {
        match self {
            Features::F32(_) => Precision::Fp32,
            Features::F16(_) => Precision::Fp16,
        }
    }

    /// Features widened to f32 (exact for both precisions).
    pub fn to_f32(&self) -> Matrix<f32> {
        match self {
            Features::F32(m) => m.clone(),
            Features::F16(m) => m.to_f32(),
        }
    }

    pub fn from_f32(m: Matrix<f32>, precision: Precision) -> Features {
        match precision {
            Precision::Fp32 => Features::F32(m),
            Precision::Fp16 => Features::F16(m.map(<f16 as Scalar>::from_f32)),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Features {
        match self {
            Features::F32(m) => Features::F32(m.select_rows(idx)),
            Features::F16(m) => Features::F16(m.select_rows(idx)),
        }
    }
}

/// The integer lattice a tensor lives on: batch count times a spatial box.
///
/// Flattening is batch-major then lexicographic over spatial components:
/// `((batch * b0 + x0) * b1 + x1) * b2 + x2 ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lattice {
    batch_size: u32,
    boundary: Vec<u32>,
}

impl Lattice {
    pub fn new(batch_size: u32, boundary: &[u32]) -> Result<Self> {
        if boundary.is_empty() || boundary.len() > MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "dimension must be in 1..={MAX_DIM}, got {}",
                boundary.len()
            )));
        }
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(Lattice { batch_size, boundary: boundary.to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.boundary.len()
    }

    pub fn batch_size(&self) -> u32 {
        self.batch_size
    }

    pub fn boundary(&self) -> &[u32] {
        &self.boundary
    }

    /// Number of spatial cells in one batch element.
    pub fn spatial_volume(&self) -> u64 {
        self.boundary.iter().map(|&b| b as u64).product()
    }

    /// Number of cells over all batch elements.
    pub fn volume(&self) -> u64 {
        self.spatial_volume() * self.batch_size as u64
    }

    /// Whether a `(batch, spatial...)` row lies inside the lattice.
    #[inline]
    pub fn contains(&self, row: &[u32]) -> bool {
        row[0] < self.batch_size && row[1..].iter().zip(&self.boundary).all(|(&c, &b)| c < b)
    }

    /// Flattened key of a `(batch, spatial...)` row. The row must be inside.
    #[inline]
    pub fn flatten(&self, row: &[u32]) -> u64 {
        let mut key = row[0] as u64;
        for (&c, &b) in row[1..].iter().zip(&self.boundary) {
            key = key * b as u64 + c as u64;
        }
        key
    }

    /// Flattened key from a batch index and signed spatial position, or
    /// `None` if the position falls outside the box.
    #[inline]
    pub fn flatten_signed(&self, batch: u32, spatial: &[i64]) -> Option<u64> {
        let mut key = batch as u64;
        for (&c, &b) in spatial.iter().zip(&self.boundary) {
            if c < 0 || c >= b as i64 {
                return None;
            }
            key = key * b as u64 + c as u64;
        }
        Some(key)
    }

    pub fn unflatten(&self, mut key: u64, out: &mut [u32]) {
        for d in (0..self.dim()).rev() {
            let b = self.boundary[d] as u64;
            out[d + 1] = (key % b) as u32;
            key /= b;
        }
        out[0] = key as u32;
    }
}

/// Coordinate rows `(batch, x_1, ..., x_D)` stored contiguously.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Coords {
    dim: usize,
    data: Vec<u32>,
}

impl Coords {
    pub fn new(dim: usize, data: Vec<u32>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidArgument(format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        if !data.len().is_multiple_of(dim + 1) {
            return Err(Error::ShapeMismatch(format!(
                "coordinate buffer of {} is not a multiple of row width {}",
                data.len(),
                dim + 1
            )));
        }
        Ok(Coords { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Coords { dim, data: Vec::new() }
    }

    /// Build from a list of rows; each row is `(batch, spatial...)`.
    pub fn from_rows<R: AsRef<[u32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * (dim + 1));
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim + 1 {
                return Err(Error::ShapeMismatch(format!("row of length {} for D={dim}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Coords::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.dim + 1
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.dim + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        let w = self.dim + 1;
        &self.data[i * w..(i + 1) * w]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, u32> {
        self.data.chunks_exact(self.dim + 1)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.data
    }

    /// Decode sorted flattened keys into coordinate rows.
    pub fn from_keys(lattice: &Lattice, keys: &[u64]) -> Coords {
        let w = lattice.dim() + 1;
        let mut data = vec![0u32; keys.len() * w];
        for (row, &k) in data.chunks_exact_mut(w).zip(keys) {
            lattice.unflatten(k, row);
        }
        Coords { dim: lattice.dim(), data }
    }

    pub fn keys(&self, lattice: &Lattice) -> Vec<u64> {
        self.iter().map(|r| lattice.flatten(r)).collect()
    }
}

/// Coordinates paired with features, at a given cumulative stride.
///
/// Coordinates are expressed at the tensor's own stride level (already divided
/// by the cumulative stride); `boundary` is the box extent at that level.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    coords: Coords,
    features: Features,
    stride: u32,
    lattice: Lattice,
}

impl SparseTensor {
    pub fn new(coords: Coords, features: Features, stride: u32, lattice: Lattice) -> Result<Self> {
        if coords.len() != features.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinate rows but {} feature rows",
                coords.len(),
                features.rows()
            )));
        }
        if coords.dim() != lattice.dim() {
            return Err(Error::ShapeMismatch(format!(
                "coordinates are {}-D but lattice is {}-D",
                coords.dim(),
                lattice.dim()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        if let Some(bad) = coords.iter().find(|r| !lattice.contains(r)) {
            return Err(Error::InvalidArgument(format!("coordinate {bad:?} outside boundary")));
        }
        Ok(SparseTensor { coords, features, stride, lattice })
    }

    /// Like [`SparseTensor::new`] but also rejects duplicate coordinate rows.
    pub fn new_checked(coords: Coords, features: Features, stride: u32, lattice: Lattice) -> Result<Self> {
        let t = SparseTensor::new(coords, features, stride, lattice)?;
        let mut keys = t.coords.keys(&t.lattice);
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate coordinate rows".into()));
        }
        Ok(t)
    }

    pub fn coords(&self) -> &Coords {
        &self.coords
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn boundary(&self) -> &[u32] {
        self.lattice.boundary()
    }

    pub fn dim(&self) -> usize {
        self.coords.dim()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    pub fn precision(&self) -> Precision {
        self.features.precision()
    }

    pub fn with_features(&self, features: Features) -> Result<SparseTensor> {
        SparseTensor::new(self.coords.clone(), features, self.stride, self.lattice.clone())
    }

    pub fn into_parts(self) -> (Coords, Features, u32, Lattice) {
        (self.coords, self.features, self.stride, self.lattice)
    }
}

/// Convolution weights: one `c_in x c_out` matrix per kernel offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    dim: usize,
    kernel_size: usize,
    c_in: usize,
    c_out: usize,
    data: Vec<f32>,
}

impl Weights {
    pub fn new(dim: usize, kernel_size: usize, c_in: usize, c_out: usize, data: Vec<f32>) -> Result<Self> {
        let vol = kernel_volume(dim, kernel_size);
        if data.len() != vol * c_in * c_out {
            return Err(Error::ShapeMismatch(format!(
                "{} weight elements, expected {vol} x {c_in} x {c_out}",
                data.len()
            )));
        }
        Ok(Weights { dim, kernel_size, c_in, c_out, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn volume(&self) -> usize {
        kernel_volume(self.dim, self.kernel_size)
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    /// Weight matrix of offset `n`, row-major `c_in x c_out`.
    #[inline]
    pub fn slice(&self, n: usize) -> &[f32] {
        let sz = self.c_in * self.c_out;
        &self.data[n * sz..(n + 1) * sz]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

pub fn kernel_volume(dim: usize, kernel_size: usize) -> usize {
    kernel_size.pow(dim as u32)
}
