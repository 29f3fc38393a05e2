use crate::error::{Error, Result};
use crate::tensor::{kernel_volume, MAX_DIM};

/// Placement of an even-size kernel window.
///
/// `Anchored` is the engine convention (`0..K` per dimension, which makes
/// `K = s` downsampling map every input to `floor(p / s)`). `Centered` shifts
/// the window by `K/2` and exists only as a fault hook for negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvenKernelConvention {
    #[default]
    Anchored,
    Centered,
}

/// Ordered kernel offsets, lexicographic with the first dimension slowest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelOffsets {
    dim: usize,
    kernel_size: usize,
    deltas: Vec<i32>,
}

impl KernelOffsets {
    pub fn enumerate(dim: usize, kernel_size: usize) -> Result<Self> {
        Self::with_convention(dim, kernel_size, EvenKernelConvention::Anchored)
    }

    pub fn with_convention(dim: usize, kernel_size: usize, even: EvenKernelConvention) -> Result<Self> {
        if kernel_size == 0 {
            return Err(Error::InvalidArgument("kernel size must be at least 1".into()));
        }
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidArgument(format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        let k = kernel_size as i32;
        let lo = if kernel_size % 2 == 1 {
            -(k - 1) / 2
        } else {
            match even {
                EvenKernelConvention::Anchored => 0,
                EvenKernelConvention::Centered => -(k / 2),
            }
        };
        let vol = kernel_volume(dim, kernel_size);
        let mut deltas = Vec::with_capacity(vol * dim);
        for n in 0..vol {
            let mut rem = n;
            let start = deltas.len();
            deltas.resize(start + dim, 0);
            for d in (0..dim).rev() {
                deltas[start + d] = lo + (rem % kernel_size) as i32;
                rem /= kernel_size;
            }
        }
        Ok(KernelOffsets { dim, kernel_size, deltas })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn len(&self) -> usize {
        self.deltas.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    #[inline]
    pub fn get(&self, n: usize) -> &[i32] {
        &self.deltas[n * self.dim..(n + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, i32> {
        self.deltas.chunks_exact(self.dim)
    }

    /// Index of the zero offset for odd kernels.
    pub fn center(&self) -> Option<usize> {
        (self.kernel_size % 2 == 1).then(|| (self.len() - 1) / 2)
    }

    /// Index of `-delta_n`, for odd kernels.
    pub fn mirror(&self, n: usize) -> Option<usize> {
        (self.kernel_size % 2 == 1).then(|| self.len() - 1 - n)
    }
}
