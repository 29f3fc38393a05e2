//! Per-layer search for grouping parameters and index kind, and the strategy
//! file that records the result.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::execution::{execute_groups, ExecMode, FeatureBuffer, GroupingParams, GroupingStrategy, Threshold};
use crate::mapping::{build_index, compute_output_coords, map_search, resolve_kind, IndexKind, KernelOffsets};
use crate::tensor::{Coords, Lattice, Matrix, Weights};

pub const MAX_CONFIGS: usize = 1000;
pub const DEFAULT_SAMPLE_BUDGET: usize = 100;

/// Candidate grid of `(epsilon, S)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    epsilons: Vec<f64>,
    thresholds: Vec<Threshold>,
    pub sample_budget: usize,
}

impl Default for SearchSpace {
    /// `epsilon` in `{0, 0.05, ..., 1}`, `S` in `{0, 2^6, ..., 2^20, inf}`.
    fn default() -> Self {
        let epsilons = (0..=20).map(|i| i as f64 / 20.0).collect();
        let mut thresholds = vec![Threshold::Rows(0)];
        thresholds.extend((6..=20).map(|p| Threshold::Rows(1 << p)));
        thresholds.push(Threshold::Infinite);
        SearchSpace { epsilons, thresholds, sample_budget: DEFAULT_SAMPLE_BUDGET }
    }
}

impl SearchSpace {
    pub fn new(mut epsilons: Vec<f64>, mut thresholds: Vec<Threshold>, sample_budget: usize) -> Result<Self> {
        if epsilons.is_empty() || thresholds.is_empty() {
            return Err(Error::InvalidArgument("search space is empty".into()));
        }
        if let Some(e) = epsilons.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::InvalidArgument(format!("epsilon {e} outside [0, 1]")));
        }
        if sample_budget == 0 {
            return Err(Error::InvalidArgument("sample budget must be positive".into()));
        }
        epsilons.sort_by(f64::total_cmp);
        epsilons.dedup();
        thresholds.sort();
        thresholds.dedup();
        if epsilons.len() * thresholds.len() > MAX_CONFIGS {
            return Err(Error::InvalidArgument(format!(
                "{} configurations exceed the limit of {MAX_CONFIGS}",
                epsilons.len() * thresholds.len()
            )));
        }
        Ok(SearchSpace { epsilons, thresholds, sample_budget })
    }

    /// Parse `eps=<list>;S=<list>` where lists are comma separated, e.g.
    /// `eps=0,0.5,1;S=0,4096,inf`. A missing key keeps the default candidates.
    pub fn parse(spec: &str) -> Result<Self> {
        let d = SearchSpace::default();
        let (mut eps, mut thr) = (d.epsilons, d.thresholds);
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, vals) =
                part.split_once('=').ok_or_else(|| Error::InvalidArgument(format!("expected key=values, got `{part}`")))?;
            let items = vals.split(',').map(str::trim).filter(|v| !v.is_empty());
            match key.trim().to_ascii_lowercase().as_str() {
                "eps" | "epsilon" => {
                    eps = items
                        .map(|v| v.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad epsilon `{v}`"))))
                        .collect::<Result<_>>()?
                }
                "s" | "threshold" => {
                    thr = items.map(|v| v.parse::<Threshold>().map_err(Error::InvalidArgument)).collect::<Result<_>>()?
                }
                other => return Err(Error::InvalidArgument(format!("unknown search-space key `{other}`"))),
            }
        }
        SearchSpace::new(eps, thr, DEFAULT_SAMPLE_BUDGET)
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn thresholds(&self) -> &[Threshold] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.epsilons.len() * self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All configurations, ordered by epsilon, then threshold.
    pub fn configs(&self) -> Vec<GroupingParams> {
        self.epsilons
            .iter()
            .flat_map(|&epsilon| self.thresholds.iter().map(move |&threshold| GroupingParams { epsilon, threshold }))
            .collect()
    }
}

/// One tuning sample: per-offset map sizes of a layer plus its channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub map_sizes: Vec<usize>,
    pub c_in: usize,
    pub c_out: usize,
    /// Offsets pair with their mirror (stride-1, odd kernel).
    pub symmetric: bool,
}

impl Workload {
    pub fn strategy(&self, params: GroupingParams) -> GroupingStrategy {
        GroupingStrategy::build(&self.map_sizes, params, self.symmetric)
    }
}

/// Cost of running one grouped workload, in seconds.
pub trait CostFn {
    fn cost(&mut self, sample: usize, workload: &Workload, strategy: &GroupingStrategy) -> Result<f64>;
}

/// Deterministic cost: padded FLOPs plus a fixed overhead per dispatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticCost {
    pub seconds_per_dispatch: f64,
    pub seconds_per_flop: f64,
}

impl Default for AnalyticCost {
    fn default() -> Self {
        AnalyticCost { seconds_per_dispatch: 5e-6, seconds_per_flop: 1e-11 }
    }
}

impl CostFn for AnalyticCost {
    fn cost(&mut self, _sample: usize, w: &Workload, s: &GroupingStrategy) -> Result<f64> {
        let dispatches = s
            .groups
            .iter()
            .map(|g| match g.mode {
                ExecMode::Batched if g.padded_rows > 0 => 1,
                ExecMode::Batched => 0,
                ExecMode::Sequential => g.members.iter().filter(|&&n| w.map_sizes[n] > 0).count(),
            })
            .sum::<usize>();
        let flops = 2.0 * s.computed_rows(&w.map_sizes) as f64 * w.c_in as f64 * w.c_out as f64;
        Ok(dispatches as f64 * self.seconds_per_dispatch + flops * self.seconds_per_flop)
    }
}

/// Wall-clock of grouped execution on synthetic buffers: median of
/// `repeats` runs after `warmup` untimed runs.
#[derive(Debug)]
pub struct MeasuredCost {
    pub repeats: usize,
    pub warmup: usize,
    seed: u64,
    current: Option<(usize, FeatureBuffer<f32>, Weights)>,
}

impl MeasuredCost {
    pub fn new(repeats: usize, warmup: usize, seed: u64) -> Self {
        MeasuredCost { repeats: repeats.max(1), warmup, seed, current: None }
    }

    fn operands(&mut self, sample: usize, w: &Workload) -> Result<&(usize, FeatureBuffer<f32>, Weights)> {
        if !matches!(&self.current, Some((s, _, _)) if *s == sample) {
            let mut cumulative = vec![0usize];
            for &n in &w.map_sizes {
                cumulative.push(cumulative.last().unwrap() + n);
            }
            let total = *cumulative.last().unwrap();
            let mut state = self.seed ^ (sample as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut next = move || {
                // xorshift: a cheap fill, not a statistical source
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 40) as f32 / (1u64 << 24) as f32 - 0.5
            };
            let data: Vec<f32> = (0..total * w.c_in).map(|_| next()).collect();
            let buf = FeatureBuffer::from_matrix(Matrix::from_vec(total, w.c_in, data)?, &cumulative)?;
            let vol = w.map_sizes.len();
            let wdata: Vec<f32> = (0..vol * w.c_in * w.c_out).map(|_| next()).collect();
            let weights = Weights::new(1, vol, w.c_in, w.c_out, wdata)?;
            self.current = Some((sample, buf, weights));
        }
        Ok(self.current.as_ref().unwrap())
    }
}

impl Default for MeasuredCost {
    fn default() -> Self {
        MeasuredCost::new(3, 1, 0)
    }
}

impl CostFn for MeasuredCost {
    fn cost(&mut self, sample: usize, w: &Workload, s: &GroupingStrategy) -> Result<f64> {
        let (repeats, warmup) = (self.repeats, self.warmup);
        let (_, buf, weights) = self.operands(sample, w)?;
        for _ in 0..warmup {
            std::hint::black_box(execute_groups(buf, weights, s, &w.map_sizes)?);
        }
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            std::hint::black_box(execute_groups(buf, weights, s, &w.map_sizes)?);
            times.push(t.elapsed().as_secs_f64());
        }
        Ok(median(&mut times))
    }
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Outcome of tuning one layer.
#[derive(Debug, Clone)]
pub struct TuneResult {
    pub params: GroupingParams,
    /// Summed cost of the chosen configuration over all samples.
    pub cost: f64,
    /// Every visited configuration with its summed cost, in search order.
    pub evaluated: Vec<(GroupingParams, f64)>,
    pub configs_visited: usize,
    /// Cost-function calls actually made (configurations that yield the
    /// same execution plan on a sample share one measurement).
    pub measurements: usize,
    pub samples: usize,
    pub elapsed: Duration,
}

impl TuneResult {
    pub fn cost_of(&self, params: GroupingParams) -> Option<f64> {
        self.evaluated.iter().find(|(p, _)| *p == params).map(|&(_, c)| c)
    }
}

/// Exhaustive grid search for the configuration with the smallest total
/// cost over the samples. Ties go to the smaller epsilon, then smaller S.
pub fn tune_layer(samples: &[Workload], space: &SearchSpace, cost_fn: &mut dyn CostFn) -> Result<TuneResult> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no tuning samples".into()));
    }
    if space.is_empty() {
        return Err(Error::InvalidArgument("search space is empty".into()));
    }
    let start = Instant::now();
    let configs = space.configs();
    let used = &samples[..samples.len().min(space.sample_budget)];
    let mut totals = vec![0.0f64; configs.len()];
    let mut measurements = 0;
    for (i, w) in used.iter().enumerate() {
        let mut memo: HashMap<Vec<(Vec<usize>, ExecMode, usize)>, f64> = HashMap::new();
        for (c, &params) in configs.iter().enumerate() {
            let strategy = w.strategy(params);
            let sig = strategy.signature();
            let cost = match memo.get(&sig) {
                Some(&v) => v,
                None => {
                    let v = cost_fn.cost(i, w, &strategy)?;
                    measurements += 1;
                    memo.insert(sig, v);
                    v
                }
            };
            totals[c] += cost;
        }
    }
    let mut best = 0;
    for c in 1..configs.len() {
        if totals[c] < totals[best] {
            best = c;
        }
    }
    Ok(TuneResult {
        params: configs[best],
        cost: totals[best],
        evaluated: configs.iter().copied().zip(totals.iter().copied()).collect(),
        configs_visited: configs.len(),
        measurements,
        samples: used.len(),
        elapsed: start.elapsed(),
    })
}

/// One mapping workload for index-kind selection.
#[derive(Debug, Clone)]
pub struct MappingWorkload {
    pub coords: Coords,
    pub lattice: Lattice,
    pub kernel_size: usize,
    pub stride: u32,
}

/// Index kind chosen for a layer, with the timings behind the choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexDecision {
    pub kind: IndexKind,
    /// `None` when the grid does not fit under the cap.
    pub grid_median: Option<Duration>,
    pub hash_median: Duration,
    pub forced: bool,
}

/// Hash must beat grid by this factor to be chosen.
pub const INDEX_TIE_MARGIN: f64 = 0.95;

fn mapping_latency(w: &MappingWorkload, kind: IndexKind, grid_cap: u64) -> Result<Duration> {
    let t = Instant::now();
    let offsets = KernelOffsets::enumerate(w.lattice.dim(), w.kernel_size)?;
    let out_lattice = if w.stride == 1 {
        w.lattice.clone()
    } else {
        Lattice::new(w.lattice.batch_size(), &crate::mapping::downsampled_boundary(w.lattice.boundary(), w.stride))?
    };
    let out = compute_output_coords(&w.coords, &offsets, w.stride, &out_lattice)?;
    let index = build_index(&w.coords, kind, &w.lattice, grid_cap)?;
    std::hint::black_box(map_search(&index, &out, &offsets, w.stride)?);
    Ok(t.elapsed())
}

/// Pick the index backend with the lower median mapping latency. The grid is
/// kept unless hash is faster by more than the tie margin.
pub fn tune_index_kind(samples: &[MappingWorkload], grid_cap: u64, repeats: usize) -> Result<IndexDecision> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no mapping samples".into()));
    }
    let grid_ok = samples.iter().all(|w| resolve_kind(IndexKind::Grid, &w.lattice, grid_cap) == IndexKind::Grid);
    let run = |kind: IndexKind| -> Result<Duration> {
        let mut t = Vec::new();
        for w in samples {
            mapping_latency(w, kind, grid_cap)?;
            for _ in 0..repeats.max(1) {
                t.push(mapping_latency(w, kind, grid_cap)?.as_secs_f64());
            }
        }
        Ok(Duration::from_secs_f64(median(&mut t)))
    };
    let hash_median = run(IndexKind::Hash)?;
    if !grid_ok {
        return Ok(IndexDecision { kind: IndexKind::Hash, grid_median: None, hash_median, forced: true });
    }
    let grid_median = run(IndexKind::Grid)?;
    let kind = if hash_median.as_secs_f64() < INDEX_TIE_MARGIN * grid_median.as_secs_f64() {
        IndexKind::Hash
    } else {
        IndexKind::Grid
    };
    Ok(IndexDecision { kind, grid_median: Some(grid_median), hash_median, forced: false })
}

pub const STRATEGY_VERSION: u32 = 1;

/// One tuned layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStrategy {
    pub id: String,
    pub epsilon: f64,
    pub threshold: Threshold,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<IndexKind>,
}

impl LayerStrategy {
    pub fn params(&self) -> GroupingParams {
        GroupingParams { epsilon: self.epsilon, threshold: self.threshold }
    }
}

/// Tuned strategy of a whole network, stored as TOML.
///
/// ```toml
/// version = 1
/// dataset = "synthetic"
/// hardware = "x86_64-linux-8t"
/// engine_version = "0.1.0"
///
/// [[layers]]
/// id = "conv0"
/// epsilon = 0.1
/// threshold = 8192      # rows, or "inf"
/// index = "grid"        # optional: "grid" or "hash"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyFile {
    pub version: u32,
    pub dataset: String,
    pub hardware: String,
    pub engine_version: String,
    #[serde(default)]
    pub layers: Vec<LayerStrategy>,
}

impl StrategyFile {
    pub fn new(dataset: &str, hardware: &str) -> Self {
        StrategyFile {
            version: STRATEGY_VERSION,
            dataset: dataset.to_string(),
            hardware: hardware.to_string(),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            layers: Vec::new(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&LayerStrategy> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let value: toml::Table = s.parse().map_err(|e: toml::de::Error| Error::Malformed(e.message().to_string()))?;
        match value.get("version").and_then(toml::Value::as_integer) {
            None => return Err(Error::Malformed("missing integer `version` field".into())),
            Some(v) if v != STRATEGY_VERSION as i64 => {
                return Err(Error::VersionMismatch { found: v.clamp(0, u32::MAX as i64) as u32, expected: STRATEGY_VERSION })
            }
            Some(_) => {}
        }
        let file: StrategyFile = toml::from_str(s).map_err(|e| Error::Malformed(e.message().to_string()))?;
        for l in &file.layers {
            if !(0.0..=1.0).contains(&l.epsilon) {
                return Err(Error::Malformed(format!("layer `{}`: epsilon {} outside [0, 1]", l.id, l.epsilon)));
            }
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Require exactly one record per listed layer and no others.
    pub fn check_layers<S: AsRef<str>>(&self, ids: &[S]) -> Result<()> {
        for id in ids {
            let n = self.layers.iter().filter(|l| l.id == id.as_ref()).count();
            if n != 1 {
                return Err(Error::StrategyMismatch(format!("layer `{}` has {n} strategy records", id.as_ref())));
            }
        }
        if let Some(extra) = self.layers.iter().find(|l| !ids.iter().any(|id| id.as_ref() == l.id)) {
            return Err(Error::StrategyMismatch(format!("record for unknown layer `{}`", extra.id)));
        }
        Ok(())
    }
}
