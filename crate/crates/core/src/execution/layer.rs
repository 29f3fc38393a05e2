//! Layer forward passes: mapping, gather, grouped matmul, scatter.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{
    build_gather_scatter_plan, build_index, compute_output_coords, downsampled_boundary, map_search, resolve_kind,
    EvenKernelConvention, GatherScatterPlan, IndexKind, KernelMap, KernelOffsets, DEFAULT_GRID_CAP,
};
use crate::precision::Scalar;
use crate::tensor::{Coords, Features, Lattice, Matrix, SparseTensor, Weights};

use super::gemm::matmul_rows;
use super::grouping::{execute_group, execute_groups_into, GroupingParams, GroupingStrategy};
use super::movement::{gather_into, gather_offsets, scatter_accumulate_into, scatter_offsets, FeatureBuffer, GatherOrder, ScatterOrder};

/// Shape and behavior of one convolution layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kernel_size: usize,
    pub stride: u32,
    pub c_in: usize,
    pub c_out: usize,
    #[serde(default)]
    pub transposed: bool,
    /// Strided layers store their map under this key; transposed layers read it.
    #[serde(default)]
    pub reuse_key: Option<String>,
    #[serde(default)]
    pub index_kind: Option<IndexKind>,
    #[serde(default)]
    pub strategy: Option<GroupingParams>,
}

impl LayerSpec {
    pub fn conv(name: &str, kernel_size: usize, stride: u32, c_in: usize, c_out: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kernel_size,
            stride,
            c_in,
            c_out,
            transposed: false,
            reuse_key: None,
            index_kind: None,
            strategy: None,
        }
    }

    pub fn inverse(name: &str, reuse_key: &str, kernel_size: usize, stride: u32, c_in: usize, c_out: usize) -> Self {
        LayerSpec { transposed: true, reuse_key: Some(reuse_key.to_string()), ..Self::conv(name, kernel_size, stride, c_in, c_out) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 {
            return Err(Error::InvalidArgument(format!("layer `{}`: kernel size must be positive", self.name)));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::UnsupportedStride(self.stride));
        }
        if self.transposed && self.reuse_key.is_none() {
            return Err(Error::InvalidArgument(format!("transposed layer `{}` needs a reuse key", self.name)));
        }
        Ok(())
    }

    /// Key under which this layer's map is cached, if any.
    pub fn cache_key(&self) -> Option<&str> {
        if self.transposed || self.stride == 1 {
            return None;
        }
        Some(self.reuse_key.as_deref().unwrap_or(&self.name))
    }
}

/// A strided layer's map together with the tensor it was built from.
#[derive(Debug, Clone)]
pub struct CachedMap {
    pub map: Arc<KernelMap>,
    pub in_coords: Coords,
    pub in_lattice: Lattice,
    pub in_stride: u32,
}

/// Maps of downsampling layers, keyed by reuse key, for the matching
/// transposed layers.
#[derive(Debug, Clone, Default)]
pub struct MapCache {
    maps: HashMap<String, CachedMap>,
}

impl MapCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: &str, entry: CachedMap) {
        self.maps.insert(key.to_string(), entry);
    }

    pub fn get(&self, key: &str) -> Option<&CachedMap> {
        self.maps.get(key)
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn clear(&mut self) {
        self.maps.clear();
    }
}

/// Engine-wide execution options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecOptions {
    pub gather: GatherOrder,
    pub scatter: ScatterOrder,
    /// All gathers, then all matmuls, then all scatters (on), or
    /// gather-matmul-scatter per group (off).
    pub fused: bool,
    pub grid_cap: u64,
    pub even_kernel: EvenKernelConvention,
    pub default_index: IndexKind,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            gather: GatherOrder::WeightStationary,
            scatter: ScatterOrder::WeightStationary,
            fused: true,
            grid_cap: DEFAULT_GRID_CAP,
            even_kernel: EvenKernelConvention::Anchored,
            default_index: IndexKind::Grid,
        }
    }
}

impl ExecOptions {
    /// Input-stationary gather and output-stationary scatter, fused.
    pub fn locality() -> Self {
        ExecOptions { gather: GatherOrder::InputStationary, scatter: ScatterOrder::OutputStationary, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fused && (self.gather != GatherOrder::WeightStationary || self.scatter != ScatterOrder::WeightStationary) {
            return Err(Error::InvalidArgument("locality-aware movement requires fused gather/scatter".into()));
        }
        Ok(())
    }
}

/// Wall-clock per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub mapping: Duration,
    pub gather: Duration,
    pub matmul: Duration,
    pub scatter: Duration,
    pub other: Duration,
}

impl StageTimes {
    pub fn total(&self) -> Duration {
        self.mapping + self.gather + self.matmul + self.scatter + self.other
    }

    pub fn add(&mut self, o: &StageTimes) {
        self.mapping += o.mapping;
        self.gather += o.gather;
        self.matmul += o.matmul;
        self.scatter += o.scatter;
        self.other += o.other;
    }
}

/// Result of one layer forward pass.
#[derive(Debug, Clone)]
pub struct LayerRun {
    pub output: SparseTensor,
    pub times: StageTimes,
    /// Full kernel map of the layer.
    pub map: Arc<KernelMap>,
    /// Plan over the entries that went through gather/scatter (center
    /// excluded when the fast path applies).
    pub plan: Arc<GatherScatterPlan>,
    pub strategy: GroupingStrategy,
    pub index_kind: Option<IndexKind>,
    pub center_fast_path: bool,
}

fn check_weights(t: &SparseTensor, w: &Weights, spec: &LayerSpec) -> Result<()> {
    if t.channels() != spec.c_in {
        return Err(Error::ShapeMismatch(format!(
            "layer `{}` expects {} input channels, tensor has {}",
            spec.name,
            spec.c_in,
            t.channels()
        )));
    }
    if w.c_in() != spec.c_in || w.c_out() != spec.c_out || w.kernel_size() != spec.kernel_size || w.dim() != t.dim() {
        return Err(Error::ShapeMismatch(format!("weights do not match layer `{}`", spec.name)));
    }
    Ok(())
}

/// Sparse convolution of `t`.
///
/// Stride-1 layers keep the input coordinates. For odd kernels the center
/// offset maps every row to itself, so its contribution is a single
/// `X * W_center` product without gather or scatter. Strided layers store
/// their map in `cache` for the matching transposed layer.
pub fn sparse_conv_forward(
    t: &SparseTensor,
    w: &Weights,
    spec: &LayerSpec,
    cache: &mut MapCache,
    opts: &ExecOptions,
) -> Result<LayerRun> {
    spec.validate()?;
    opts.validate()?;
    if spec.transposed {
        return inverse_conv_forward(t, w, spec, cache, opts);
    }
    check_weights(t, w, spec)?;

    let t0 = Instant::now();
    let offsets = KernelOffsets::with_convention(t.dim(), spec.kernel_size, opts.even_kernel)?;
    let out_lattice = if spec.stride == 1 {
        t.lattice().clone()
    } else {
        Lattice::new(t.lattice().batch_size(), &downsampled_boundary(t.boundary(), spec.stride))?
    };
    let out_coords = compute_output_coords(t.coords(), &offsets, spec.stride, &out_lattice)?;
    let kind = resolve_kind(spec.index_kind.unwrap_or(opts.default_index), t.lattice(), opts.grid_cap);
    let index = build_index(t.coords(), kind, t.lattice(), opts.grid_cap)?;
    let map = Arc::new(map_search(&index, &out_coords, &offsets, spec.stride)?);
    drop(index);

    let center = match (spec.stride, offsets.center()) {
        (1, Some(c)) => Some(c),
        _ => None,
    };
    let exec_map = match center {
        Some(c) => map.without_offset(c),
        None => (*map).clone(),
    };
    let plan = Arc::new(build_gather_scatter_plan(&exec_map));
    let sizes = exec_map.sizes();
    drop(exec_map);
    let strategy = GroupingStrategy::build(&sizes, spec.strategy.unwrap_or_default(), center.is_some());
    let mut times = StageTimes { mapping: t0.elapsed(), ..StageTimes::default() };

    if let Some(key) = spec.cache_key() {
        cache.insert(
            key,
            CachedMap {
                map: Arc::clone(&map),
                in_coords: t.coords().clone(),
                in_lattice: t.lattice().clone(),
                in_stride: t.stride(),
            },
        );
    }

    let features = execute(t.features(), w, &plan, &strategy, &sizes, center, opts, &mut times)?;
    let t1 = Instant::now();
    let output = SparseTensor::new(out_coords, features, t.stride() * spec.stride, out_lattice)?;
    times.other += t1.elapsed();
    Ok(LayerRun { output, times, map, plan, strategy, index_kind: Some(kind), center_fast_path: center.is_some() })
}

/// Transposed convolution reusing the map of the downsampling layer named by
/// the reuse key. Output coordinates are that layer's input coordinates.
pub fn inverse_conv_forward(
    t: &SparseTensor,
    w: &Weights,
    spec: &LayerSpec,
    cache: &MapCache,
    opts: &ExecOptions,
) -> Result<LayerRun> {
    spec.validate()?;
    opts.validate()?;
    check_weights(t, w, spec)?;
    let key = spec.reuse_key.as_deref().ok_or_else(|| Error::InvalidArgument("inverse layer without reuse key".into()))?;
    let t0 = Instant::now();
    let cached = cache.get(key).ok_or_else(|| Error::MissingMap(key.to_string()))?;
    if cached.map.n_out() != t.len() || cached.map.kernel_size() != spec.kernel_size || cached.map.stride() != spec.stride {
        return Err(Error::ShapeMismatch(format!(
            "layer `{}` does not match the cached map `{key}` ({} outputs, K={}, s={})",
            spec.name,
            cached.map.n_out(),
            cached.map.kernel_size(),
            cached.map.stride()
        )));
    }
    let map = Arc::new(cached.map.transposed());
    let plan = Arc::new(build_gather_scatter_plan(&map));
    let sizes = map.sizes();
    let strategy = GroupingStrategy::build(&sizes, spec.strategy.unwrap_or_default(), false);
    let mut times = StageTimes { mapping: t0.elapsed(), ..StageTimes::default() };

    let features = execute(t.features(), w, &plan, &strategy, &sizes, None, opts, &mut times)?;
    let t1 = Instant::now();
    let output = SparseTensor::new(cached.in_coords.clone(), features, cached.in_stride, cached.in_lattice.clone())?;
    times.other += t1.elapsed();
    Ok(LayerRun { output, times, map, plan, strategy, index_kind: None, center_fast_path: false })
}

#[allow(clippy::too_many_arguments)]
fn execute(
    features: &Features,
    w: &Weights,
    plan: &GatherScatterPlan,
    strategy: &GroupingStrategy,
    sizes: &[usize],
    center: Option<usize>,
    opts: &ExecOptions,
    times: &mut StageTimes,
) -> Result<Features> {
    match features {
        Features::F32(x) => execute_typed(x, w, plan, strategy, sizes, center, opts, times).map(Features::F32),
        Features::F16(x) => execute_typed(x, w, plan, strategy, sizes, center, opts, times).map(Features::F16),
    }
}

#[allow(clippy::too_many_arguments)]
fn execute_typed<T: Scalar>(
    x: &Matrix<T>,
    w: &Weights,
    plan: &GatherScatterPlan,
    strategy: &GroupingStrategy,
    sizes: &[usize],
    center: Option<usize>,
    opts: &ExecOptions,
    times: &mut StageTimes,
) -> Result<Matrix<T>> {
    let (c_in, c_out) = (w.c_in(), w.c_out());
    let mut acc = Matrix::<f32>::zeros(plan.n_out(), c_out);

    if let Some(c) = center {
        let t = Instant::now();
        let mut direct = Matrix::<T>::zeros(x.rows(), c_out);
        matmul_rows(x.as_slice(), x.rows(), w.slice(c), c_in, c_out, direct.as_mut_slice());
        acc.as_mut_slice().iter_mut().zip(direct.as_slice()).for_each(|(a, &v)| *a = v.to_f32());
        times.matmul += t.elapsed();
    }

    if opts.fused {
        let t = Instant::now();
        let mut buf = FeatureBuffer::<T>::zeros(plan.cumulative(), c_in);
        let mut partial = FeatureBuffer::<T>::zeros(plan.cumulative(), c_out);
        times.other += t.elapsed();
        let t = Instant::now();
        gather_into(x, plan, opts.gather, &mut buf)?;
        times.gather += t.elapsed();
        let t = Instant::now();
        execute_groups_into(&buf, w, strategy, sizes, &mut partial)?;
        times.matmul += t.elapsed();
        let t = Instant::now();
        drop(buf);
        times.other += t.elapsed();
        let t = Instant::now();
        scatter_accumulate_into(&partial, plan, opts.scatter, &mut acc)?;
        times.scatter += t.elapsed();
    } else {
        if sizes != plan.cumulative().windows(2).map(|p| p[1] - p[0]).collect::<Vec<_>>().as_slice() {
            return Err(Error::StrategyMismatch("plan layout differs from the map sizes".into()));
        }
        strategy.validate(sizes)?;
        let t = Instant::now();
        let mut buf = FeatureBuffer::<T>::zeros(plan.cumulative(), c_in);
        let mut partial = FeatureBuffer::<T>::zeros(plan.cumulative(), c_out);
        times.other += t.elapsed();
        for g in &strategy.groups {
            let t = Instant::now();
            gather_offsets(x, plan, &g.members, &mut buf);
            times.gather += t.elapsed();
            let t = Instant::now();
            execute_group(&buf, w, g, &mut partial);
            times.matmul += t.elapsed();
            let t = Instant::now();
            scatter_offsets(&partial, plan, &g.members, &mut acc);
            times.scatter += t.elapsed();
        }
    }

    let t = Instant::now();
    let out = acc.map(T::from_f32);
    times.other += t.elapsed();
    Ok(out)
}
