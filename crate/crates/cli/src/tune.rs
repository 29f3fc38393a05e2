//! Per-layer strategy search over a set of sample inputs.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Result};
use sparseconv::autotune::{
    tune_index_kind, tune_layer, AnalyticCost, CostFn, IndexDecision, LayerStrategy, MappingWorkload, MeasuredCost, SearchSpace,
    StrategyFile, TuneResult, Workload,
};
use sparseconv::execution::ExecOptions;
use sparseconv::mapping::resolve_kind;
use sparseconv::{GroupingParams, IndexKind, SparseTensor};

use crate::network::{Network, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostModel {
    /// Wall-clock of grouped matmuls on synthetic operands.
    Measured { repeats: usize, warmup: usize },
    /// Deterministic padded-FLOP plus dispatch model.
    Analytic,
}

#[derive(Debug, Clone)]
pub struct TuneOptions {
    pub space: SearchSpace,
    pub cost: CostModel,
    /// Timed repeats per sample when choosing the index kind.
    pub index_repeats: usize,
    pub seed: u64,
    pub dataset: String,
    pub exec: ExecOptions,
}

#[derive(Debug, Clone)]
pub struct LayerTuning {
    pub name: String,
    pub result: TuneResult,
    pub index: Option<IndexDecision>,
}

impl LayerTuning {
    pub fn separate_cost(&self) -> Option<f64> {
        self.result.cost_of(GroupingParams::SEPARATE)
    }

    pub fn symmetric_cost(&self) -> Option<f64> {
        self.result.cost_of(GroupingParams::SYMMETRIC)
    }
}

#[derive(Debug, Clone)]
pub struct TuneReport {
    pub file: StrategyFile,
    pub layers: Vec<LayerTuning>,
    pub samples: usize,
    pub elapsed: Duration,
}

impl std::fmt::Display for TuneReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:>10} {:>8} {:>8} {:>6} {:>12} {:>12} {:>12}", "layer", "eps", "S", "index", "cost_s", "separate_s", "symmetric_s")?;
        let fmt_cost = |c: Option<f64>| c.map_or("-".to_string(), |c| format!("{c:.4e}"));
        for l in &self.layers {
            writeln!(
                f,
                "{:>10} {:>8} {:>8} {:>6} {:>12} {:>12} {:>12}",
                l.name,
                l.result.params.epsilon,
                l.result.params.threshold.to_string(),
                l.index.as_ref().map_or("-".to_string(), |d| d.kind.to_string()),
                fmt_cost(Some(l.result.cost)),
                fmt_cost(l.separate_cost()),
                fmt_cost(l.symmetric_cost()),
            )?;
        }
        write!(f, "tuned {} layers over {} samples in {:.2?}", self.layers.len(), self.samples, self.elapsed)
    }
}

/// A tag for the machine a strategy was tuned on.
pub fn hardware_tag() -> String {
    format!("{}-{}-{}t", std::env::consts::ARCH, std::env::consts::OS, rayon::current_num_threads())
}

/// Tune grouping for every convolution and the index kind for every
/// non-transposed one, using at most `space.sample_budget` samples.
pub fn tune_network(net: &Network, samples: &[SparseTensor], opts: &TuneOptions) -> Result<TuneReport> {
    let start = Instant::now();
    let samples = &samples[..samples.len().min(opts.space.sample_budget)];
    anyhow::ensure!(!samples.is_empty(), "no tuning samples");

    let mut grouping: BTreeMap<usize, Vec<Workload>> = BTreeMap::new();
    let mut mapping: BTreeMap<usize, Vec<MappingWorkload>> = BTreeMap::new();
    let run = RunOptions { exec: opts.exec, keep_outputs: false, capture_inputs: true };
    for sample in samples {
        let fwd = net.forward(sample, &run)?;
        for (i, rec) in fwd.layers.into_iter().enumerate() {
            let Some(conv) = rec.conv else { continue };
            grouping.entry(i).or_default().push(Workload {
                map_sizes: conv.map_sizes(),
                c_in: conv.spec.c_in,
                c_out: conv.spec.c_out,
                symmetric: conv.strategy.symmetric,
            });
            if let (false, Some((coords, lattice))) = (conv.spec.transposed, conv.input) {
                mapping.entry(i).or_default().push(MappingWorkload {
                    coords,
                    lattice,
                    kernel_size: conv.spec.kernel_size,
                    stride: conv.spec.stride,
                });
            }
        }
    }

    let mut file = StrategyFile::new(&opts.dataset, &hardware_tag());
    let mut layers = Vec::new();
    for (i, workloads) in &grouping {
        let name = net.layers[*i].name.clone();
        let mut cost: Box<dyn CostFn> = match opts.cost {
            CostModel::Measured { repeats, warmup } => Box::new(MeasuredCost::new(repeats, warmup, opts.seed ^ *i as u64)),
            CostModel::Analytic => Box::new(AnalyticCost::default()),
        };
        let result = tune_layer(workloads, &opts.space, cost.as_mut()).map_err(|e| anyhow!("tuning `{name}`: {e}"))?;
        let index = match mapping.get(i) {
            None => None,
            Some(m) => Some(match opts.cost {
                CostModel::Measured { .. } => tune_index_kind(m, opts.exec.grid_cap, opts.index_repeats)?,
                CostModel::Analytic => {
                    let kind = resolve_kind(IndexKind::Grid, &m[0].lattice, opts.exec.grid_cap);
                    IndexDecision { kind, grid_median: None, hash_median: Duration::ZERO, forced: true }
                }
            }),
        };
        log::info!("{name}: {} ({} configs, {} measurements)", result.params, result.configs_visited, result.measurements);
        file.layers.push(LayerStrategy {
            id: name.clone(),
            epsilon: result.params.epsilon,
            threshold: result.params.threshold,
            index: index.as_ref().map(|d| d.kind),
        });
        layers.push(LayerTuning { name, result, index });
    }
    Ok(TuneReport { file, layers, samples: samples.len(), elapsed: start.elapsed() })
}
