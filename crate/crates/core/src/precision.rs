//! Feature storage precision.
//!
//! Features can be stored as `f32` or as IEEE binary16. Arithmetic is always
//! carried out in `f32`; half precision only changes what is stored and moved.

use half::f16;
use serde::{Deserialize, Serialize};

use crate::tensor::{Features, Matrix, SparseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Fp32,
    #[serde(alias = "fp16_storage")]
    Fp16,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::Fp32 => 4,
            Precision::Fp16 => 2,
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::Fp32 => "fp32",
            Precision::Fp16 => "fp16",
        })
    }
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fp32" | "f32" => Ok(Precision::Fp32),
            "fp16" | "f16" | "fp16_storage" => Ok(Precision::Fp16),
            other => Err(format!("unknown precision `{other}`")),
        }
    }
}

mod sealed {
    pub trait Sealed {}
    impl Sealed for f32 {}
    impl Sealed for half::f16 {}
}

/// Storage element of a feature matrix. Implemented for `f32` and `f16` only.
pub trait Scalar: sealed::Sealed + Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    const PRECISION: Precision;
    fn to_f32(self) -> f32;
    /// Rounds to nearest; values outside the representable range saturate.
    fn from_f32(v: f32) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Fp32;
    #[inline(always)]
    fn to_f32(self) -> f32 {
        self
    }
    #[inline(always)]
    fn from_f32(v: f32) -> Self {
        v
    }
}

impl Scalar for f16 {
    const PRECISION: Precision = Precision::Fp16;
    #[inline(always)]
    fn to_f32(self) -> f32 {
        f16::to_f32(self)
    }
    #[inline(always)]
    fn from_f32(v: f32) -> Self {
        saturate_f16(v).0
    }
}

/// Round to binary16, clamping to ±65504. The flag reports saturation.
#[inline]
pub fn saturate_f16(v: f32) -> (f16, bool) {
    let h = f16::from_f32(v);
    if h.is_infinite() && v.is_finite() {
        (if v > 0.0 { f16::MAX } else { f16::MIN }, true)
    } else {
        (h, false)
    }
}

/// Outcome of [`quantize_features`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QuantizeStats {
    pub saturated: usize,
}

/// Convert a tensor's features to the requested storage precision.
///
/// Fp32 leaves features bit-identical (an fp16 tensor is widened exactly).
/// Fp16 rounds each element to the nearest binary16 value.
pub fn quantize_features(t: &SparseTensor, mode: Precision) -> (SparseTensor, QuantizeStats) {
    let mut stats = QuantizeStats::default();
    let features = match (mode, t.features()) {
        (Precision::Fp32, Features::F32(m)) => Features::F32(m.clone()),
        (Precision::Fp32, Features::F16(m)) => Features::F32(m.map(|v| v.to_f32())),
        (Precision::Fp16, Features::F16(m)) => Features::F16(m.clone()),
        (Precision::Fp16, Features::F32(m)) => Features::F16(m.map(|v| {
            let (h, sat) = saturate_f16(v);
            stats.saturated += sat as usize;
            h
        })),
    };
    if stats.saturated > 0 {
        log::warn!(
            "{} feature values saturated to the binary16 range",
            stats.saturated
        );
    }
    (t.with_features(features).expect("same row count"), stats)
}

/// Reinterpret a slice as f32, copying when the element type differs.
pub(crate) fn widen<T: Scalar>(src: &[T]) -> std::borrow::Cow<'_, [f32]> {
    if let Some(s) = as_f32_slice(src) {
        std::borrow::Cow::Borrowed(s)
    } else {
        std::borrow::Cow::Owned(src.iter().map(|v| v.to_f32()).collect())
    }
}

pub(crate) fn as_f32_slice<T: Scalar>(src: &[T]) -> Option<&[f32]> {
    if T::PRECISION == Precision::Fp32 {
        // SAFETY: Scalar is sealed; the only implementor with Fp32 precision is f32.
        Some(unsafe { std::slice::from_raw_parts(src.as_ptr() as *const f32, src.len()) })
    } else {
        None
    }
}

pub(crate) fn as_f32_slice_mut<T: Scalar>(src: &mut [T]) -> Option<&mut [f32]> {
    if T::PRECISION == Precision::Fp32 {
        // SAFETY: see `as_f32_slice`.
        Some(unsafe { std::slice::from_raw_parts_mut(src.as_mut_ptr() as *mut f32, src.len()) })
    } else {
        None
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn to_f32(&self) -> Matrix<f32> {
        self.map(|v| v.to_f32())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_is_exact() {
        assert_eq!(<f16 as Scalar>::from_f32(1.0).to_f32(), 1.0);
    }

    #[test]
    fn overflow_saturates() {
        let (h, sat) = saturate_f16(1e6);
        assert!(sat);
        assert_eq!(h, f16::MAX);
        let (h, sat) = saturate_f16(-1e6);
        assert!(sat);
        assert_eq!(h, f16::MIN);
        let (_, sat) = saturate_f16(65504.0);
        assert!(!sat);
    }

    #[test]
    fn parse_precision() {
        assert_eq!("fp16".parse::<Precision>().unwrap(), Precision::Fp16);
        assert_eq!("FP32".parse::<Precision>().unwrap(), Precision::Fp32);
        assert!("int8".parse::<Precision>().is_err());
    }
}
