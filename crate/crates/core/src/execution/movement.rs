//! Gather and scatter-accumulate between point features and the per-offset
//! matmul buffer.
//!
//! Weight-stationary order walks the buffer offset by offset, touching a
//! feature row once per map entry. Input-stationary gather reads each input
//! row once and fans it out to all its buffer rows; output-stationary scatter
//! reduces all partial sums of an output row locally and writes it once.
//! Both orders apply contributions to an output in ascending buffer-row
//! order, so their results are bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::GatherScatterPlan;
use crate::precision::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GatherOrder {
    #[default]
    WeightStationary,
    InputStationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScatterOrder {
    #[default]
    WeightStationary,
    OutputStationary,
}

/// `|M| x C` rows partitioned by offset via cumulative row offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBuffer<T> {
    data: Matrix<T>,
    cumulative: Vec<usize>,
}

impl<T: Scalar> FeatureBuffer<T> {
    pub fn zeros(cumulative: &[usize], cols: usize) -> Self {
        let total = *cumulative.last().unwrap_or(&0);
        FeatureBuffer { data: Matrix::zeros(total, cols), cumulative: cumulative.to_vec() }
    }

    pub fn from_matrix(data: Matrix<T>, cumulative: &[usize]) -> Result<Self> {
        if data.rows() != *cumulative.last().unwrap_or(&0) {
            return Err(Error::ShapeMismatch(format!(
                "{} buffer rows but the map has {}",
                data.rows(),
                cumulative.last().unwrap_or(&0)
            )));
        }
        Ok(FeatureBuffer { data, cumulative: cumulative.to_vec() })
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn cols(&self) -> usize {
        self.data.cols()
    }

    pub fn cumulative(&self) -> &[usize] {
        &self.cumulative
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.cumulative.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.data
    }

    /// Rows belonging to offset `n`.
    pub fn offset(&self, n: usize) -> &[T] {
        let c = self.data.cols();
        &self.data.as_slice()[self.cumulative[n] * c..self.cumulative[n + 1] * c]
    }

    pub fn offset_mut(&mut self, n: usize) -> &mut [T] {
        let c = self.data.cols();
        let (a, b) = (self.cumulative[n] * c, self.cumulative[n + 1] * c);
        &mut self.data.as_mut_slice()[a..b]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        self.data.row(r)
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        self.data.row_mut(r)
    }
}

fn check_plan<T: Scalar>(features: &Matrix<T>, plan: &GatherScatterPlan) -> Result<()> {
    if features.rows() != plan.n_in() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows but the plan expects {}",
            features.rows(),
            plan.n_in()
        )));
    }
    Ok(())
}

/// Gather input features into the matmul buffer.
pub fn gather<T: Scalar>(features: &Matrix<T>, plan: &GatherScatterPlan, order: GatherOrder) -> Result<FeatureBuffer<T>> {
    let mut buf = FeatureBuffer::zeros(plan.cumulative(), features.cols());
    gather_into(features, plan, order, &mut buf)?;
    Ok(buf)
}

/// Gather into a buffer laid out by the plan, overwriting every row.
pub fn gather_into<T: Scalar>(
    features: &Matrix<T>,
    plan: &GatherScatterPlan,
    order: GatherOrder,
    buf: &mut FeatureBuffer<T>,
) -> Result<()> {
    check_plan(features, plan)?;
    if buf.cumulative() != plan.cumulative() || buf.cols() != features.cols() {
        return Err(Error::ShapeMismatch("buffer does not match the plan".into()));
    }
    match order {
        GatherOrder::WeightStationary => {
            let all: Vec<usize> = (0..plan.volume()).collect();
            gather_offsets(features, plan, &all, buf);
        }
        GatherOrder::InputStationary => {
            for j in 0..plan.n_in() {
                let src = features.row(j);
                for &d in plan.destinations(j) {
                    buf.row_mut(d as usize).copy_from_slice(src);
                }
            }
        }
    }
    Ok(())
}

/// Weight-stationary gather of selected offsets into an existing buffer.
pub fn gather_offsets<T: Scalar>(features: &Matrix<T>, plan: &GatherScatterPlan, offsets: &[usize], buf: &mut FeatureBuffer<T>) {
    let rows_in = plan.row_input();
    for &n in offsets {
        for r in plan.offset_rows(n) {
            buf.row_mut(r).copy_from_slice(features.row(rows_in[r] as usize));
        }
    }
}

/// Scatter-accumulate partial sums into a fresh `n_out x C` f32 matrix.
pub fn scatter_accumulate<T: Scalar>(
    buffer: &FeatureBuffer<T>,
    plan: &GatherScatterPlan,
    n_out: usize,
    order: ScatterOrder,
) -> Result<Matrix<f32>> {
    let mut out = Matrix::zeros(n_out, buffer.cols());
    scatter_accumulate_into(buffer, plan, order, &mut out)?;
    Ok(out)
}

/// Scatter-accumulate onto `out`, adding to whatever it already holds.
pub fn scatter_accumulate_into<T: Scalar>(
    buffer: &FeatureBuffer<T>,
    plan: &GatherScatterPlan,
    order: ScatterOrder,
    out: &mut Matrix<f32>,
) -> Result<()> {
    if buffer.rows() != plan.total() {
        return Err(Error::ShapeMismatch(format!(
            "{} buffer rows but the plan has {}",
            buffer.rows(),
            plan.total()
        )));
    }
    if out.rows() != plan.n_out() || out.cols() != buffer.cols() {
        return Err(Error::ShapeMismatch("output matrix does not match the plan".into()));
    }
    match order {
        ScatterOrder::WeightStationary => {
            let all: Vec<usize> = (0..plan.volume()).collect();
            scatter_offsets(buffer, plan, &all, out);
        }
        ScatterOrder::OutputStationary => {
            for k in 0..plan.n_out() {
                let dst = out.row_mut(k);
                for &s in plan.sources(k) {
                    for (a, &v) in dst.iter_mut().zip(buffer.row(s as usize)) {
                        *a += v.to_f32();
                    }
                }
            }
        }
    }
    Ok(())
}

/// Weight-stationary scatter of selected offsets.
pub fn scatter_offsets<T: Scalar>(buffer: &FeatureBuffer<T>, plan: &GatherScatterPlan, offsets: &[usize], out: &mut Matrix<f32>) {
    let rows_out = plan.row_output();
    for &n in offsets {
        for r in plan.offset_rows(n) {
            let dst = out.row_mut(rows_out[r] as usize);
            for (o, &v) in dst.iter_mut().zip(buffer.row(r)) {
                *o += v.to_f32();
            }
        }
    }
}
