//! Network construction and forward passes through the engine and the oracle.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparseconv::autotune::StrategyFile;
use sparseconv::execution::{pointwise_apply, sparse_conv_forward, ExecOptions, GroupingStrategy, LayerSpec, MapCache, PointwiseOp, StageTimes};
use sparseconv::mapping::{GatherScatterPlan, IndexKind, KernelMap};
use sparseconv::oracle::{compare, ComparisonReport, OracleTensor, Tolerance};
use sparseconv::precision::quantize_features;
use sparseconv::{Coords, Lattice, Precision, SparseTensor, Weights};

use crate::config::{LayerConfig, NetworkConfig, PointwiseKind};

#[derive(Debug, Clone)]
pub enum LayerOp {
    Conv { spec: LayerSpec, weights: Weights },
    Pointwise(PointwiseOp),
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub op: LayerOp,
}

/// A configured network with seeded parameters.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub exec: ExecOptions,
    /// Keep every layer's output tensor in its record.
    pub keep_outputs: bool,
    /// Keep each convolution's input coordinates in its record.
    pub capture_inputs: bool,
}

#[derive(Debug, Clone)]
pub struct ConvRecord {
    pub spec: LayerSpec,
    pub map: Arc<KernelMap>,
    pub plan: Arc<GatherScatterPlan>,
    pub strategy: GroupingStrategy,
    pub index_kind: Option<IndexKind>,
    pub center_fast_path: bool,
    pub input: Option<(Coords, Lattice)>,
}

impl ConvRecord {
    /// Per-offset row counts of the executed map.
    pub fn map_sizes(&self) -> Vec<usize> {
        self.plan.cumulative().windows(2).map(|w| w[1] - w[0]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LayerRecord {
    pub name: String,
    /// Wall-clock around the whole layer call.
    pub total: Duration,
    pub times: StageTimes,
    pub conv: Option<ConvRecord>,
    pub output: Option<SparseTensor>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub output: SparseTensor,
    pub layers: Vec<LayerRecord>,
    pub total: Duration,
}

/// Engine output checked against the oracle, layer by layer.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub layers: Vec<(String, ComparisonReport)>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.layers.iter().all(|(_, r)| r.pass)
    }

    pub fn first_failure(&self) -> Option<&(String, ComparisonReport)> {
        self.layers.iter().find(|(_, r)| !r.pass)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (name, rep) in &self.layers {
            writeln!(f, "{name:>10}  max_abs={:.3e} max_rel={:.3e}  {}", rep.max_abs, rep.max_rel, if rep.pass { "ok" } else { "MISMATCH" })?;
        }
        match self.first_failure() {
            None => write!(f, "PASS"),
            Some((name, rep)) => write!(f, "FAIL at layer `{name}`: {rep}"),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

impl Network {
    /// Parameters are drawn layer by layer from `config.seed`: He-uniform
    /// weights, small biases, near-identity batch norms.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut channels = config.in_channels;
        let mut layers = Vec::with_capacity(config.layers.len());
        for lc in &config.layers {
            let op = match (lc, lc.spec()) {
                (_, Some(spec)) => {
                    let vol = spec.kernel_size.pow(config.dim as u32);
                    let bound = (6.0 / (vol * spec.c_in) as f32).sqrt();
                    let data = uniform(&mut rng, vol * spec.c_in * spec.c_out, -bound, bound);
                    let weights = Weights::new(config.dim, spec.kernel_size, spec.c_in, spec.c_out, data)?;
                    channels = spec.c_out;
                    LayerOp::Conv { spec, weights }
                }
                (LayerConfig::Pointwise { op, .. }, None) => LayerOp::Pointwise(match op {
                    PointwiseKind::Relu => PointwiseOp::Relu,
                    PointwiseKind::Bias => PointwiseOp::BiasAdd { bias: uniform(&mut rng, channels, -0.1, 0.1) },
                    PointwiseKind::BatchNorm => {
                        let gamma = uniform(&mut rng, channels, 0.8, 1.2);
                        let beta = uniform(&mut rng, channels, -0.1, 0.1);
                        let mean = uniform(&mut rng, channels, -0.1, 0.1);
                        let var = uniform(&mut rng, channels, 0.5, 1.5);
                        PointwiseOp::bn_fold(&gamma, &beta, &mean, &var, 1e-5)?
                    }
                }),
                _ => unreachable!("only pointwise layers lack a convolution spec"),
            };
            layers.push(Layer { name: lc.name().to_string(), op });
        }
        Ok(Network { config, layers })
    }

    pub fn precision(&self) -> Precision {
        self.config.precision
    }

    pub fn set_precision(&mut self, precision: Precision) {
        self.config.precision = precision;
    }

    pub fn conv_specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter_map(|l| match &l.op {
            LayerOp::Conv { spec, .. } => Some(spec),
            LayerOp::Pointwise(_) => None,
        })
    }

    /// Install per-layer grouping and index choices. Returns the convolution
    /// layers the file does not cover; those run with separate execution.
    pub fn apply_strategies(&mut self, file: &StrategyFile) -> Vec<String> {
        let mut missing = Vec::new();
        for layer in &mut self.layers {
            if let LayerOp::Conv { spec, .. } = &mut layer.op {
                match file.get(&spec.name) {
                    Some(ls) => {
                        spec.strategy = Some(ls.params());
                        if !spec.transposed {
                            if let Some(kind) = ls.index {
                                spec.index_kind = Some(kind);
                            }
                        }
                    }
                    None => {
                        spec.strategy = None;
                        missing.push(spec.name.clone());
                    }
                }
            }
        }
        missing
    }

    /// Check channels and convert to the network's storage precision.
    pub fn prepare_input(&self, t: &SparseTensor) -> Result<SparseTensor> {
        if t.channels() != self.config.in_channels {
            bail!("network `{}` takes {} input channels, input has {}", self.config.name, self.config.in_channels, t.channels());
        }
        if t.dim() != self.config.dim {
            bail!("network `{}` is {}-dimensional, input is {}-dimensional", self.config.name, self.config.dim, t.dim());
        }
        let (t, stats) = quantize_features(t, self.config.precision);
        if stats.saturated > 0 {
            log::warn!("{} input features saturated in {}", stats.saturated, self.config.precision);
        }
        Ok(t)
    }

    pub fn forward(&self, input: &SparseTensor, opts: &RunOptions) -> Result<Forward> {
        let start = Instant::now();
        let mut x = self.prepare_input(input)?;
        let mut cache = MapCache::new();
        let mut records = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let t0 = Instant::now();
            let (y, times, conv) = match &layer.op {
                LayerOp::Conv { spec, weights } => {
                    let input = opts.capture_inputs.then(|| (x.coords().clone(), x.lattice().clone()));
                    let run = sparse_conv_forward(&x, weights, spec, &mut cache, &opts.exec)
                        .map_err(|e| anyhow!("layer `{}`: {e}", layer.name))?;
                    let conv = ConvRecord {
                        spec: spec.clone(),
                        map: run.map,
                        plan: run.plan,
                        strategy: run.strategy,
                        index_kind: run.index_kind,
                        center_fast_path: run.center_fast_path,
                        input,
                    };
                    (run.output, run.times, Some(conv))
                }
                LayerOp::Pointwise(op) => {
                    let y = pointwise_apply(&x, op).map_err(|e| anyhow!("layer `{}`: {e}", layer.name))?;
                    (y, StageTimes { other: t0.elapsed(), ..StageTimes::default() }, None)
                }
            };
            let total = t0.elapsed();
            records.push(LayerRecord {
                name: layer.name.clone(),
                total,
                times,
                conv,
                output: opts.keep_outputs.then(|| y.clone()),
            });
            x = y;
        }
        Ok(Forward { output: x, layers: records, total: start.elapsed() })
    }

    /// Every layer's output computed by the dense oracle.
    pub fn oracle_forward(&self, input: &SparseTensor, cap: u64) -> Result<Vec<OracleTensor>> {
        let x = self.prepare_input(input)?;
        let mut cur = OracleTensor::from_sparse(&x, cap)?;
        let mut keyed: HashMap<String, OracleTensor> = HashMap::new();
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let next = match &layer.op {
                LayerOp::Conv { spec, weights } if spec.transposed => {
                    let key = spec.reuse_key.as_deref().unwrap_or_default();
                    let target = keyed.get(key).ok_or_else(|| anyhow!("no oracle tensor under `{key}`"))?;
                    cur.transposed(weights, spec.stride, target, cap)?
                }
                LayerOp::Conv { spec, weights } => {
                    if let Some(key) = spec.cache_key() {
                        keyed.insert(key.to_string(), cur.clone());
                    }
                    cur.conv(weights, spec.stride, cap)?
                }
                LayerOp::Pointwise(op) => cur.map_active(|c, v| reference_pointwise(op, c, v)),
            };
            outs.push(next.clone());
            cur = next;
        }
        Ok(outs)
    }

    /// Run engine and oracle and compare each layer's output. Half-precision
    /// networks use a relative tolerance.
    pub fn validate(&self, input: &SparseTensor, tolerance: Tolerance, opts: &ExecOptions, cap: u64) -> Result<ValidationReport> {
        let run = self.forward(input, &RunOptions { exec: *opts, keep_outputs: true, capture_inputs: false })?;
        let oracle = self.oracle_forward(input, cap)?;
        let layers = run
            .layers
            .iter()
            .zip(&oracle)
            .map(|(rec, o)| {
                let out = rec.output.as_ref().expect("outputs were kept");
                (rec.name.clone(), compare(out, &o.grid, &o.active, tolerance))
            })
            .collect();
        Ok(ValidationReport { layers })
    }
}

fn reference_pointwise(op: &PointwiseOp, c: usize, v: f32) -> f32 {
    match op {
        PointwiseOp::Relu => {
            if v > 0.0 {
                v
            } else {
                0.0
            }
        }
        PointwiseOp::BiasAdd { bias } => v + bias[c],
        PointwiseOp::BnFold { scale, shift } => v * scale[c] + shift[c],
    }
}
