//! Elementwise feature transforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Features, SparseTensor};

/// Per-channel transform applied to every feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PointwiseOp {
    Relu,
    BiasAdd { bias: Vec<f32> },
    /// `y = x * scale + shift`, per channel.
    BnFold { scale: Vec<f32>, shift: Vec<f32> },
}

impl PointwiseOp {
    /// Fold eval-mode batch normalization into a per-channel affine map.
    pub fn bn_fold(gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32], eps: f32) -> Result<PointwiseOp> {
        let c = gamma.len();
        if beta.len() != c || mean.len() != c || var.len() != c {
            return Err(Error::ShapeMismatch("batch-norm parameter lengths differ".into()));
        }
        let mut scale = Vec::with_capacity(c);
        let mut shift = Vec::with_capacity(c);
        for i in 0..c {
            let s = gamma[i] / (var[i] + eps).sqrt();
            scale.push(s);
            shift.push(beta[i] - s * mean[i]);
        }
        Ok(PointwiseOp::BnFold { scale, shift })
    }

    fn check(&self, channels: usize) -> Result<()> {
        let ok = match self {
            PointwiseOp::Relu => true,
            PointwiseOp::BiasAdd { bias } => bias.len() == channels,
            PointwiseOp::BnFold { scale, shift } => scale.len() == channels && shift.len() == channels,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("pointwise parameters do not match {channels} channels")))
        }
    }

    #[inline]
    fn apply_row(&self, row: &mut [f32]) {
        match self {
            PointwiseOp::Relu => row.iter_mut().for_each(|v| *v = v.max(0.0)),
            PointwiseOp::BiasAdd { bias } => row.iter_mut().zip(bias).for_each(|(v, b)| *v += b),
            PointwiseOp::BnFold { scale, shift } => {
                for ((v, s), b) in row.iter_mut().zip(scale).zip(shift) {
                    *v = *v * s + b;
                }
            }
        }
    }
}

/// Apply `op` to the features of `t`; coordinates are untouched and the
/// storage precision is kept.
pub fn pointwise_apply(t: &SparseTensor, op: &PointwiseOp) -> Result<SparseTensor> {
    op.check(t.channels())?;
    let precision = t.precision();
    let mut x = t.features().to_f32();
    let c = x.cols();
    if c > 0 {
        x.as_mut_slice().chunks_exact_mut(c).for_each(|row| op.apply_row(row));
    }
    t.with_features(Features::from_f32(x, precision))
}
