//! Repeated forward passes with per-stage latency statistics and traffic
//! counts.
//!
//! CSV output has the fixed header `layer,stage,metric,value`. Latency rows
//! use stages `mapping`, `gather`, `matmul`, `scatter`, `other` and `total`
//! with metrics `median_us`, `p90_us`, `min_us`, `max_us` and `share_pct`
//! (stage median over the sum of stage medians, `total` excluded). Each layer
//! also reports `total/timed_passes`. Traffic rows come from the traffic
//! model and, when enabled, the cache simulation (`cache/accesses`,
//! `cache/misses`). The pseudo-layer `network` aggregates whole passes and
//! carries run metadata under stage `run`.

use std::io::Write;
use std::time::Duration;

use anyhow::Result;
use serde::Serialize;
use sparseconv::execution::{GatherOrder, StageTimes};
use sparseconv::traffic::{count_traffic, footprint_bytes, movement_trace, simulate_cache, CacheModel, CacheStats, MovementOrder, TrafficReport};
use sparseconv::{Precision, SparseTensor};

use crate::network::{Forward, Network, RunOptions};

pub const CSV_HEADER: [&str; 4] = ["layer", "stage", "metric", "value"];
pub const STAGES: [&str; 5] = ["mapping", "gather", "matmul", "scatter", "other"];
pub const CACHE_LINE_BYTES: u64 = 64;

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub repeat: usize,
    pub warmup: usize,
    pub run: RunOptions,
    /// Simulate an LRU cache of `footprint / fraction` bytes per layer.
    pub cache_fraction: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub median_us: f64,
    pub p90_us: f64,
    pub min_us: f64,
    pub max_us: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}

impl Summary {
    pub fn of(samples: &[Duration]) -> Summary {
        let mut us: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e6).collect();
        us.sort_by(f64::total_cmp);
        Summary {
            median_us: median(&us),
            p90_us: percentile(&us, 90.0),
            min_us: us.first().copied().unwrap_or(0.0),
            max_us: us.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageBreakdown {
    pub stage: String,
    pub summary: Summary,
    pub share_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerBreakdown {
    pub layer: String,
    pub timed_passes: usize,
    pub stages: Vec<StageBreakdown>,
    pub total: Summary,
    pub traffic: Option<TrafficReport>,
    pub cache: Option<CacheStats>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyBreakdown {
    pub network: String,
    pub inputs: usize,
    pub repeat: usize,
    pub warmup: usize,
    pub precision: Precision,
    pub order: MovementOrder,
    pub fused: bool,
    pub layers: Vec<LayerBreakdown>,
    pub aggregate: LayerBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub layer: String,
    pub stage: String,
    pub metric: String,
    pub value: f64,
}

fn stage_of(t: &StageTimes, i: usize) -> Duration {
    [t.mapping, t.gather, t.matmul, t.scatter, t.other][i]
}

fn breakdown(layer: &str, passes: &[(StageTimes, Duration)]) -> LayerBreakdown {
    let summaries: Vec<Summary> =
        (0..STAGES.len()).map(|i| Summary::of(&passes.iter().map(|(t, _)| stage_of(t, i)).collect::<Vec<_>>())).collect();
    let sum: f64 = summaries.iter().map(|s| s.median_us).sum();
    let stages = STAGES
        .iter()
        .zip(summaries)
        .map(|(name, summary)| StageBreakdown {
            stage: name.to_string(),
            share_pct: if sum > 0.0 { 100.0 * summary.median_us / sum } else { 0.0 },
            summary,
        })
        .collect();
    LayerBreakdown {
        layer: layer.to_string(),
        timed_passes: passes.len(),
        stages,
        total: Summary::of(&passes.iter().map(|(_, d)| *d).collect::<Vec<_>>()),
        traffic: None,
        cache: None,
    }
}

pub fn movement_order(run: &RunOptions) -> MovementOrder {
    match run.exec.gather {
        GatherOrder::WeightStationary => MovementOrder::WeightStationary,
        GatherOrder::InputStationary => MovementOrder::Locality,
    }
}

/// Traffic counts and optional cache statistics for each convolution of a
/// forward pass; `None` for pointwise layers.
pub fn layer_traffic(
    fwd: &Forward,
    order: MovementOrder,
    precision: Precision,
    cache_fraction: Option<u64>,
) -> Result<Vec<(Option<TrafficReport>, Option<CacheStats>)>> {
    fwd.layers
        .iter()
        .map(|rec| {
            let Some(conv) = &rec.conv else { return Ok((None, None)) };
            let (c_in, c_out) = (conv.spec.c_in, conv.spec.c_out);
            let report = count_traffic(&conv.plan, order, c_in, c_out, precision);
            let cache = match cache_fraction {
                Some(f) => {
                    let trace = movement_trace(&conv.plan, order, c_in, c_out, precision, CACHE_LINE_BYTES);
                    let capacity = (footprint_bytes(&trace, CACHE_LINE_BYTES) / f.max(1)).max(CACHE_LINE_BYTES);
                    let model = CacheModel::fully_associative(capacity / CACHE_LINE_BYTES * CACHE_LINE_BYTES, CACHE_LINE_BYTES)?;
                    Some(simulate_cache(&trace, &model))
                }
                None => None,
            };
            Ok((Some(report), cache))
        })
        .collect()
}

/// Run `warmup` untimed and `repeat` timed passes over every input.
pub fn run_bench(net: &Network, inputs: &[SparseTensor], opts: &BenchOptions) -> Result<(LatencyBreakdown, Forward)> {
    anyhow::ensure!(!inputs.is_empty(), "no inputs to benchmark");
    anyhow::ensure!(opts.repeat >= 1, "--repeat must be at least 1");
    let n_layers = net.layers.len();
    let mut per_layer: Vec<Vec<(StageTimes, Duration)>> = vec![Vec::new(); n_layers];
    let mut per_pass: Vec<(StageTimes, Duration)> = Vec::new();
    let mut last = None;
    for input in inputs {
        for _ in 0..opts.warmup {
            std::hint::black_box(net.forward(input, &opts.run)?);
        }
        for _ in 0..opts.repeat {
            let fwd = net.forward(input, &opts.run)?;
            let mut pass = StageTimes::default();
            for (slot, rec) in per_layer.iter_mut().zip(&fwd.layers) {
                slot.push((rec.times, rec.total));
                pass.add(&rec.times);
            }
            per_pass.push((pass, fwd.total));
            last = Some(fwd);
        }
    }
    let last = last.expect("at least one timed pass");
    let order = movement_order(&opts.run);
    let traffic = layer_traffic(&last, order, net.precision(), opts.cache_fraction)?;
    let layers = net
        .layers
        .iter()
        .zip(per_layer)
        .zip(traffic)
        .map(|((layer, passes), (traffic, cache))| LayerBreakdown { traffic, cache, ..breakdown(&layer.name, &passes) })
        .collect();
    let report = LatencyBreakdown {
        network: net.config.name.clone(),
        inputs: inputs.len(),
        repeat: opts.repeat,
        warmup: opts.warmup,
        precision: net.precision(),
        order,
        fused: opts.run.exec.fused,
        layers,
        aggregate: breakdown("network", &per_pass),
    };
    Ok((report, last))
}

fn latency_rows(b: &LayerBreakdown, rows: &mut Vec<CsvRow>) {
    let mut push = |stage: &str, metric: &str, value: f64| {
        rows.push(CsvRow { layer: b.layer.clone(), stage: stage.into(), metric: metric.into(), value });
    };
    for s in &b.stages {
        push(&s.stage, "median_us", s.summary.median_us);
        push(&s.stage, "p90_us", s.summary.p90_us);
        push(&s.stage, "min_us", s.summary.min_us);
        push(&s.stage, "max_us", s.summary.max_us);
        push(&s.stage, "share_pct", s.share_pct);
    }
    push("total", "median_us", b.total.median_us);
    push("total", "p90_us", b.total.p90_us);
    push("total", "min_us", b.total.min_us);
    push("total", "max_us", b.total.max_us);
    push("total", "timed_passes", b.timed_passes as f64);
    if let Some(t) = &b.traffic {
        for (stage, metric, value) in t.rows() {
            push(stage, &metric, value);
        }
    }
    if let Some(c) = &b.cache {
        push("cache", "accesses", c.accesses as f64);
        push("cache", "misses", c.misses as f64);
    }
}

impl LatencyBreakdown {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mut rows = Vec::new();
        let mut meta = |metric: &str, value: f64| {
            rows.push(CsvRow { layer: "network".into(), stage: "run".into(), metric: metric.into(), value });
        };
        meta("inputs", self.inputs as f64);
        meta("repeat", self.repeat as f64);
        meta("warmup", self.warmup as f64);
        meta("fused", self.fused as u8 as f64);
        meta("locality", (self.order == MovementOrder::Locality) as u8 as f64);
        meta("precision_bytes", self.precision.bytes() as f64);
        for layer in &self.layers {
            latency_rows(layer, &mut rows);
        }
        latency_rows(&self.aggregate, &mut rows);
        rows
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(CSV_HEADER)?;
        for row in self.csv_rows() {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Human-readable stage table with percentage shares.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{} | {} inputs x {} repeats ({} warmup) | {} | {:?} | fused={}\n",
            self.network,
            self.inputs,
            self.repeat,
            self.warmup,
            self.precision,
            self.order,
            if self.fused { "on" } else { "off" }
        );
        s.push_str(&format!("{:>10} {:>12} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "layer", "median_us", "map%", "gath%", "mm%", "scat%", "oth%"));
        for b in self.layers.iter().chain(std::iter::once(&self.aggregate)) {
            s.push_str(&format!("{:>10} {:>12.1}", b.layer, b.total.median_us));
            for st in &b.stages {
                s.push_str(&format!(" {:>8.1}", st.share_pct));
            }
            s.push('\n');
        }
        s
    }
}
