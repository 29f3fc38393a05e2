//! Data-movement accounting for gather and scatter.
//!
//! `N1 = |M| (C_in + C_out)` elements pass through the gather and scatter
//! buffers; `N2 = N_in C_in + N_out C_out` is the size of the feature tensors
//! themselves. Their ratio bounds the reuse a locality-aware order can
//! exploit. Counts here are taken by walking a plan in the same order the
//! movement kernels do.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::GatherScatterPlan;
use crate::precision::Precision;

/// Order of the gather and scatter passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MovementOrder {
    /// Offset by offset, gather and scatter of each offset back to back.
    WeightStationary,
    /// All gathers input-stationary, then all scatters output-stationary.
    Locality,
}

/// Element counts per movement stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    /// Source feature elements read by gather.
    pub gather_read: u64,
    /// Buffer elements written by gather.
    pub gather_write: u64,
    /// Partial-sum elements read by scatter.
    pub scatter_read: u64,
    /// Output elements written by scatter.
    pub scatter_write: u64,
}

impl StageCounts {
    fn scaled(&self, k: u64) -> StageCounts {
        StageCounts {
            gather_read: self.gather_read * k,
            gather_write: self.gather_write * k,
            scatter_read: self.scatter_read * k,
            scatter_write: self.scatter_write * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    ScalarFp32,
    ScalarFp16,
    /// Two fp16 elements per lane access.
    VectorFp16,
}

impl AccessMode {
    pub const ALL: [AccessMode; 3] = [AccessMode::ScalarFp32, AccessMode::ScalarFp16, AccessMode::VectorFp16];

    pub fn element_bytes(self) -> u64 {
        match self {
            AccessMode::ScalarFp32 => 4,
            AccessMode::ScalarFp16 | AccessMode::VectorFp16 => 2,
        }
    }

    pub fn elements_per_access(self) -> u64 {
        match self {
            AccessMode::VectorFp16 => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AccessMode::ScalarFp32 => "scalar_fp32",
            AccessMode::ScalarFp16 => "scalar_fp16",
            AccessMode::VectorFp16 => "vector_fp16",
        }
    }
}

/// SIMT memory-transaction model: `lanes` lanes issue one access each per
/// instruction; an instruction moves its bytes in `transaction_bytes` units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionModel {
    pub transaction_bytes: u64,
    pub lanes: u64,
}

impl Default for TransactionModel {
    fn default() -> Self {
        TransactionModel { transaction_bytes: 128, lanes: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransactionStats {
    pub mode: AccessMode,
    pub instructions: u64,
    pub transactions: u64,
    /// Useful bytes over transferred bytes.
    pub utilization: f64,
}

/// Transactions needed to move a contiguous stream of `elements` elements.
pub fn model_transactions(elements: u64, mode: AccessMode, model: &TransactionModel) -> TransactionStats {
    let per_instr_elems = model.lanes * mode.elements_per_access();
    let instructions = elements.div_ceil(per_instr_elems);
    let instr_bytes = per_instr_elems * mode.element_bytes();
    let transactions = instructions * instr_bytes.div_ceil(model.transaction_bytes);
    let useful = elements * mode.element_bytes();
    let moved = transactions * model.transaction_bytes;
    TransactionStats { mode, instructions, transactions, utilization: if moved == 0 { 0.0 } else { useful as f64 / moved as f64 } }
}

/// Analytic and counted movement of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub order: Option<MovementOrder>,
    pub precision: Precision,
    pub map_entries: u64,
    pub n_in: u64,
    pub n_out: u64,
    pub c_in: u64,
    pub c_out: u64,
    pub elements: StageCounts,
    pub bytes: StageCounts,
    pub n1: u64,
    pub n2: u64,
    pub reuse: f64,
    pub transactions: Vec<TransactionStats>,
}

fn analytic(entries: u64, n_in: u64, n_out: u64, c_in: u64, c_out: u64) -> (u64, u64, f64) {
    let n1 = entries * (c_in + c_out);
    let n2 = n_in * c_in + n_out * c_out;
    (n1, n2, if n2 == 0 { 0.0 } else { n1 as f64 / n2 as f64 })
}

/// Analytic `N1`, `N2` and reuse factor; stage counts are left at zero.
pub fn theoretical_totals(map_entries: usize, n_in: usize, n_out: usize, c_in: usize, c_out: usize) -> TrafficReport {
    let (e, ni, no, ci, co) = (map_entries as u64, n_in as u64, n_out as u64, c_in as u64, c_out as u64);
    let (n1, n2, reuse) = analytic(e, ni, no, ci, co);
    TrafficReport {
        order: None,
        precision: Precision::Fp32,
        map_entries: e,
        n_in: ni,
        n_out: no,
        c_in: ci,
        c_out: co,
        elements: StageCounts::default(),
        bytes: StageCounts::default(),
        n1,
        n2,
        reuse,
        transactions: Vec::new(),
    }
}

/// Count element traffic by walking the plan in the given order.
///
/// Input-stationary gather loads every input row once and fans it out;
/// output-stationary scatter reduces each output locally and stores it
/// once. Weight-stationary touches a feature row once per map entry. `n1` is
/// the buffer-side traffic (gather writes plus scatter reads).
pub fn count_traffic(plan: &GatherScatterPlan, order: MovementOrder, c_in: usize, c_out: usize, precision: Precision) -> TrafficReport {
    let (ci, co) = (c_in as u64, c_out as u64);
    let mut e = StageCounts::default();
    match order {
        MovementOrder::WeightStationary => {
            for n in 0..plan.volume() {
                for _ in plan.offset_rows(n) {
                    e.gather_read += ci;
                    e.gather_write += ci;
                }
            }
            for n in 0..plan.volume() {
                for _ in plan.offset_rows(n) {
                    e.scatter_read += co;
                    e.scatter_write += co;
                }
            }
        }
        MovementOrder::Locality => {
            for j in 0..plan.n_in() {
                e.gather_read += ci;
                e.gather_write += ci * plan.destinations(j).len() as u64;
            }
            for k in 0..plan.n_out() {
                e.scatter_read += co * plan.sources(k).len() as u64;
                e.scatter_write += co;
            }
        }
    }
    let (_, n2, _) = analytic(plan.total() as u64, plan.n_in() as u64, plan.n_out() as u64, ci, co);
    let n1 = e.gather_write + e.scatter_read;
    let moved = e.gather_read + e.gather_write + e.scatter_read + e.scatter_write;
    let model = TransactionModel::default();
    TrafficReport {
        order: Some(order),
        precision,
        map_entries: plan.total() as u64,
        n_in: plan.n_in() as u64,
        n_out: plan.n_out() as u64,
        c_in: ci,
        c_out: co,
        elements: e,
        bytes: e.scaled(precision.bytes() as u64),
        n1,
        n2,
        reuse: if n2 == 0 { 0.0 } else { n1 as f64 / n2 as f64 },
        transactions: AccessMode::ALL.iter().map(|&m| model_transactions(moved, m, &model)).collect(),
    }
}

impl TrafficReport {
    /// `(stage, metric, value)` rows for tabular output.
    pub fn rows(&self) -> Vec<(&'static str, String, f64)> {
        let mut r = vec![
            ("gather", "read_elements".to_string(), self.elements.gather_read as f64),
            ("gather", "write_elements".to_string(), self.elements.gather_write as f64),
            ("scatter", "read_elements".to_string(), self.elements.scatter_read as f64),
            ("scatter", "write_elements".to_string(), self.elements.scatter_write as f64),
            ("gather", "read_bytes".to_string(), self.bytes.gather_read as f64),
            ("gather", "write_bytes".to_string(), self.bytes.gather_write as f64),
            ("scatter", "read_bytes".to_string(), self.bytes.scatter_read as f64),
            ("scatter", "write_bytes".to_string(), self.bytes.scatter_write as f64),
            ("traffic", "map_entries".to_string(), self.map_entries as f64),
            ("traffic", "n_in".to_string(), self.n_in as f64),
            ("traffic", "n_out".to_string(), self.n_out as f64),
            ("traffic", "n1".to_string(), self.n1 as f64),
            ("traffic", "n2".to_string(), self.n2 as f64),
            ("traffic", "reuse".to_string(), self.reuse),
        ];
        for t in &self.transactions {
            r.push(("traffic", format!("{}_transactions", t.mode.name()), t.transactions as f64));
            r.push(("traffic", format!("{}_utilization", t.mode.name()), t.utilization));
        }
        r
    }
}

/// Set-associative LRU cache. `associativity = None` is fully associative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheModel {
    pub capacity_bytes: u64,
    pub line_bytes: u64,
    pub associativity: Option<u64>,
}

impl CacheModel {
    pub fn fully_associative(capacity_bytes: u64, line_bytes: u64) -> Result<Self> {
        Self::new(capacity_bytes, line_bytes, None)
    }

    pub fn new(capacity_bytes: u64, line_bytes: u64, associativity: Option<u64>) -> Result<Self> {
        if line_bytes == 0 || capacity_bytes < line_bytes {
            return Err(Error::InvalidArgument("cache capacity must hold at least one line".into()));
        }
        let lines = capacity_bytes / line_bytes;
        if let Some(a) = associativity {
            if a == 0 || !lines.is_multiple_of(a) {
                return Err(Error::InvalidArgument(format!("{lines} lines do not divide into {a}-way sets")));
            }
        }
        Ok(CacheModel { capacity_bytes, line_bytes, associativity })
    }

    pub fn lines(&self) -> u64 {
        self.capacity_bytes / self.line_bytes
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub accesses: u64,
    pub misses: u64,
}

impl CacheStats {
    pub fn hits(&self) -> u64 {
        self.accesses - self.misses
    }
}

#[derive(Default)]
struct LruSet {
    stamp_of: HashMap<u64, u64>,
    by_stamp: BTreeMap<u64, u64>,
}

/// LRU simulation over a trace of line addresses. Reads and writes are
/// treated alike (write-allocate).
pub fn simulate_cache(trace: &[u64], cache: &CacheModel) -> CacheStats {
    let ways = cache.associativity.unwrap_or(cache.lines()) as usize;
    let n_sets = (cache.lines() / ways as u64).max(1);
    let mut sets: Vec<LruSet> = (0..n_sets).map(|_| LruSet::default()).collect();
    let mut stats = CacheStats::default();
    for (clock, &line) in trace.iter().enumerate() {
        let clock = clock as u64;
        let set = &mut sets[(line % n_sets) as usize];
        stats.accesses += 1;
        match set.stamp_of.insert(line, clock) {
            Some(old) => {
                set.by_stamp.remove(&old);
            }
            None => {
                stats.misses += 1;
                if set.stamp_of.len() > ways {
                    let (_, victim) = set.by_stamp.pop_first().expect("full set has an entry");
                    set.stamp_of.remove(&victim);
                }
            }
        }
        set.by_stamp.insert(clock, line);
    }
    stats
}

/// Bytes covered by the distinct lines of a trace.
pub fn footprint_bytes(trace: &[u64], line_bytes: u64) -> u64 {
    let mut lines = trace.to_vec();
    lines.sort_unstable();
    lines.dedup();
    lines.len() as u64 * line_bytes
}

/// Line-address trace of one layer's gather and scatter.
///
/// Regions (input features, gather buffer, partial sums, output) are laid
/// out back to back, each line aligned. Weight-stationary gathers and
/// scatters each offset in turn, the scatter being a read-modify-write of
/// the output row. The locality order gathers input-stationary over all
/// offsets, then scatters output-stationary. Matmul operand traffic is not
/// part of the trace.
pub fn movement_trace(
    plan: &GatherScatterPlan,
    order: MovementOrder,
    c_in: usize,
    c_out: usize,
    precision: Precision,
    line_bytes: u64,
) -> Vec<u64> {
    let b = precision.bytes() as u64;
    let (row_in, row_out) = (c_in as u64 * b, c_out as u64 * b);
    let align = |x: u64| x.div_ceil(line_bytes) * line_bytes;
    let input = 0u64;
    let buffer = align(input + plan.n_in() as u64 * row_in);
    let partial = align(buffer + plan.total() as u64 * row_in);
    let output = align(partial + plan.total() as u64 * row_out);

    let mut trace = Vec::new();
    let mut touch = |base: u64, row: u64, width: u64| {
        if width == 0 {
            return;
        }
        let start = base + row * width;
        for line in start / line_bytes..=(start + width - 1) / line_bytes {
            trace.push(line);
        }
    };
    match order {
        MovementOrder::WeightStationary => {
            let (rin, rout) = (plan.row_input(), plan.row_output());
            for n in 0..plan.volume() {
                for r in plan.offset_rows(n) {
                    touch(input, rin[r] as u64, row_in);
                    touch(buffer, r as u64, row_in);
                }
                for r in plan.offset_rows(n) {
                    touch(partial, r as u64, row_out);
                    touch(output, rout[r] as u64, row_out);
                }
            }
        }
        MovementOrder::Locality => {
            for j in 0..plan.n_in() {
                touch(input, j as u64, row_in);
                for &d in plan.destinations(j) {
                    touch(buffer, d as u64, row_in);
                }
            }
            for k in 0..plan.n_out() {
                for &s in plan.sources(k) {
                    touch(partial, s as u64, row_out);
                }
                touch(output, k as u64, row_out);
            }
        }
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{build_gather_scatter_plan, KernelMap, MapEntry};

    #[test]
    fn reuse_of_four() {
        let r = theoretical_totals(400, 100, 100, 8, 8);
        assert_eq!(r.n1, 8 * 100 * 8);
        assert_eq!(r.n2, 2 * 100 * 8);
        assert_eq!(r.reuse, 4.0);
        let z = theoretical_totals(0, 0, 0, 4, 4);
        assert_eq!((z.n1, z.n2, z.reuse), (0, 0, 0.0));
    }

    #[test]
    fn transaction_figures() {
        let m = TransactionModel::default();
        let fp32 = model_transactions(32, AccessMode::ScalarFp32, &m);
        assert_eq!((fp32.transactions, fp32.utilization), (1, 1.0));
        let fp16 = model_transactions(32, AccessMode::ScalarFp16, &m);
        assert_eq!((fp16.transactions, fp16.utilization), (1, 0.5));
        for e in [1u64, 31, 32, 33, 64, 65, 1000, 4097] {
            let a = model_transactions(e, AccessMode::ScalarFp32, &m).transactions;
            let s = model_transactions(e, AccessMode::ScalarFp16, &m).transactions;
            let v = model_transactions(e, AccessMode::VectorFp16, &m).transactions;
            assert_eq!(a, s);
            assert_eq!(v, a.div_ceil(2));
        }
    }

    fn identity_plan(n: usize) -> GatherScatterPlan {
        let entries = vec![(0..n as u32).map(|i| MapEntry::new(i, i)).collect()];
        build_gather_scatter_plan(&KernelMap::from_entries(3, 1, 1, n, n, entries).unwrap())
    }

    #[test]
    fn identity_map_has_no_reuse() {
        let plan = identity_plan(10);
        let ws = count_traffic(&plan, MovementOrder::WeightStationary, 4, 4, Precision::Fp32);
        let loc = count_traffic(&plan, MovementOrder::Locality, 4, 4, Precision::Fp32);
        assert_eq!(ws.elements, loc.elements);
        assert_eq!(ws.elements.gather_read, 40);
        assert_eq!(ws.bytes.gather_read, 160);
    }

    #[test]
    fn cold_misses_only_when_cache_holds_everything() {
        let trace = [0u64, 1, 2, 0, 1, 2, 3, 3];
        let s = simulate_cache(&trace, &CacheModel::fully_associative(64 * 4, 64).unwrap());
        assert_eq!(s.misses, 4);
        assert_eq!(footprint_bytes(&trace, 64), 256);
    }

    #[test]
    fn single_line_cache_misses_every_strided_access() {
        let trace: Vec<u64> = (0..20).map(|i| (i % 5) * 3).collect();
        let s = simulate_cache(&trace, &CacheModel::fully_associative(64, 64).unwrap());
        assert_eq!(s.misses, 20);
    }

    #[test]
    fn lru_evicts_least_recent() {
        // 2 lines: after 0,1,0 the victim for 2 is line 1
        let trace = [0u64, 1, 0, 2, 0, 1];
        let s = simulate_cache(&trace, &CacheModel::fully_associative(128, 64).unwrap());
        assert_eq!(s.misses, 4);
        let direct = CacheModel::new(128, 64, Some(1)).unwrap();
        assert_eq!(simulate_cache(&[0, 2, 0, 2], &direct).misses, 4);
        assert_eq!(simulate_cache(&[0, 1, 0, 1], &direct).misses, 2);
    }

    #[test]
    fn trace_touches_every_row() {
        let plan = identity_plan(4);
        let t = movement_trace(&plan, MovementOrder::Locality, 16, 16, Precision::Fp32, 64);
        assert_eq!(t.len(), 16);
        assert_eq!(footprint_bytes(&t, 64), 16 * 64);
    }
}
