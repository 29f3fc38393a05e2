//! Matmul grouping: partitioning per-offset GEMMs into padded batches.
//!
//! A strategy is parameterized by a redundancy tolerance `epsilon` and a
//! workload threshold `S`. Scheduled offsets are scanned left to right and a
//! group grows while `1 - n_min / n_max <= epsilon`; a group runs as one padded
//! batched multiply when its largest member has fewer than `S` rows and as
//! separate multiplies otherwise. `(1, inf)` is dense computation, `S = 0` is
//! separate computation and `(0, inf)` on a stride-1 layer is symmetric
//! grouping.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::precision::{as_f32_slice, Scalar};
use crate::tensor::Weights;

use super::gemm::{matmul_rows, sgemm};
use super::movement::FeatureBuffer;

/// Batched/sequential workload threshold `S`, in rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Threshold {
    Rows(u64),
    Infinite,
}

impl Threshold {
    /// Whether a group whose largest member has `n_max` rows runs batched.
    pub fn batches(self, n_max: usize) -> bool {
        match self {
            Threshold::Rows(s) => (n_max as u64) < s,
            Threshold::Infinite => true,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Rows(s) => write!(f, "{s}"),
            Threshold::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Threshold {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if matches!(s, "inf" | "+inf" | "infinity" | "∞") {
            return Ok(Threshold::Infinite);
        }
        s.parse::<u64>().map(Threshold::Rows).map_err(|_| format!("bad threshold `{s}`"))
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Rows(v) => s.serialize_u64(*v),
            Threshold::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Threshold::Rows(v)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// The tuned `(epsilon, S)` pair of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingParams {
    pub epsilon: f64,
    pub threshold: Threshold,
}

impl GroupingParams {
    pub const SEPARATE: GroupingParams = GroupingParams { epsilon: 0.0, threshold: Threshold::Rows(0) };
    pub const SYMMETRIC: GroupingParams = GroupingParams { epsilon: 0.0, threshold: Threshold::Infinite };
    pub const DENSE: GroupingParams = GroupingParams { epsilon: 1.0, threshold: Threshold::Infinite };

    pub fn new(epsilon: f64, threshold: Threshold) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!("epsilon must be in [0, 1], got {epsilon}")));
        }
        Ok(GroupingParams { epsilon, threshold })
    }
}

impl Default for GroupingParams {
    fn default() -> Self {
        GroupingParams::SEPARATE
    }
}

impl fmt::Display for GroupingParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "eps={} S={}", self.epsilon, self.threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Batched,
    Sequential,
}

/// One group: a contiguous range of schedule positions, the offsets it
/// covers (symmetric partners included) and how it runs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Group {
    pub start: usize,
    pub end: usize,
    pub members: Vec<usize>,
    pub mode: ExecMode,
    pub padded_rows: usize,
}

/// Partition of the scheduled offsets into matmul groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingStrategy {
    pub params: GroupingParams,
    /// Whether offsets are paired with their mirror (stride-1, odd kernel).
    pub symmetric: bool,
    pub volume: usize,
    pub groups: Vec<Group>,
}

#[inline]
fn within_tolerance(n_min: usize, n_max: usize, epsilon: f64) -> bool {
    // 1 - n_min/n_max <= eps, written to be exact at decimal boundaries.
    let diff = (n_max - n_min) as f64;
    diff <= epsilon * n_max as f64 * (1.0 + 1e-12)
}

/// Greedy left-to-right partition of `sizes` (in schedule order).
///
/// Each group starts with `n_min = n_max =` its first size and absorbs the
/// next size while `1 - n_min / n_max <= epsilon` still holds.
pub fn partition_groups(sizes: &[usize], epsilon: f64) -> Vec<Range<usize>> {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sizes.len() {
        let (mut n_min, mut n_max) = (sizes[i], sizes[i]);
        let mut j = i + 1;
        while j < sizes.len() {
            let (lo, hi) = (n_min.min(sizes[j]), n_max.max(sizes[j]));
            if !within_tolerance(lo, hi, epsilon) {
                break;
            }
            n_min = lo;
            n_max = hi;
            j += 1;
        }
        groups.push(i..j);
        i = j;
    }
    groups
}

/// Offsets scheduled for grouping: the first half (center excluded) when
/// symmetric, otherwise all of them.
pub fn schedule(volume: usize, symmetric: bool) -> Vec<usize> {
    if symmetric {
        (0..(volume - 1) / 2).collect()
    } else {
        (0..volume).collect()
    }
}

impl GroupingStrategy {
    /// Derive the strategy for one workload.
    pub fn build(map_sizes: &[usize], params: GroupingParams, symmetric: bool) -> GroupingStrategy {
        let volume = map_sizes.len();
        let symmetric = symmetric && volume % 2 == 1 && volume > 1;
        let sched = schedule(volume, symmetric);
        let sched_sizes: Vec<usize> = sched.iter().map(|&n| map_sizes[n]).collect();
        let groups = partition_groups(&sched_sizes, params.epsilon)
            .into_iter()
            .map(|r| {
                let n_max = sched_sizes[r.clone()].iter().copied().max().unwrap_or(0);
                let mut members = Vec::with_capacity(r.len() * 2);
                for &n in &sched[r.clone()] {
                    members.push(n);
                    if symmetric {
                        members.push(volume - 1 - n);
                    }
                }
                let mode = if params.threshold.batches(n_max) { ExecMode::Batched } else { ExecMode::Sequential };
                Group { start: r.start, end: r.end, members, mode, padded_rows: n_max }
            })
            .collect();
        GroupingStrategy { params, symmetric, volume, groups }
    }

    pub fn scheduled(&self) -> Vec<usize> {
        schedule(self.volume, self.symmetric)
    }

    /// Identity of the execution plan, ignoring the parameters that produced it.
    pub fn signature(&self) -> Vec<(Vec<usize>, ExecMode, usize)> {
        self.groups.iter().map(|g| (g.members.clone(), g.mode, g.padded_rows)).collect()
    }

    /// Number of matmul dispatches (one per batched group, one per offset otherwise).
    pub fn dispatches(&self) -> usize {
        self.groups
            .iter()
            .map(|g| match g.mode {
                ExecMode::Batched => 1,
                ExecMode::Sequential => g.members.len(),
            })
            .sum()
    }

    /// Rows multiplied, padding included.
    pub fn computed_rows(&self, map_sizes: &[usize]) -> usize {
        self.groups
            .iter()
            .map(|g| match g.mode {
                ExecMode::Batched => g.padded_rows * g.members.len(),
                ExecMode::Sequential => g.members.iter().map(|&n| map_sizes[n]).sum(),
            })
            .sum()
    }

    /// Check that the strategy matches a workload.
    pub fn validate(&self, map_sizes: &[usize]) -> Result<()> {
        if map_sizes.len() != self.volume {
            return Err(Error::StrategyMismatch(format!(
                "strategy for {} offsets, map has {}",
                self.volume,
                map_sizes.len()
            )));
        }
        let sched = self.scheduled();
        let mut pos = 0;
        let mut covered = vec![false; self.volume];
        for g in &self.groups {
            if g.start != pos || g.end <= g.start || g.end > sched.len() {
                return Err(Error::StrategyMismatch("groups do not partition the schedule".into()));
            }
            pos = g.end;
            let n_max = sched[g.start..g.end].iter().map(|&n| map_sizes[n]).max().unwrap_or(0);
            if g.padded_rows != n_max {
                return Err(Error::StrategyMismatch(format!(
                    "group pads to {} rows but its largest map has {n_max}",
                    g.padded_rows
                )));
            }
            for &n in &g.members {
                if n >= self.volume || covered[n] {
                    return Err(Error::StrategyMismatch(format!("offset {n} covered twice or out of range")));
                }
                covered[n] = true;
                if map_sizes[n] > g.padded_rows {
                    return Err(Error::StrategyMismatch(format!("offset {n} exceeds the group's padded size")));
                }
            }
        }
        if pos != sched.len() {
            return Err(Error::StrategyMismatch("groups do not cover the schedule".into()));
        }
        for n in 0..self.volume {
            if !covered[n] && map_sizes[n] > 0 {
                return Err(Error::StrategyMismatch(format!("offset {n} has {} rows but is not scheduled", map_sizes[n])));
            }
        }
        Ok(())
    }
}

/// Multiply every offset's buffer rows by its weight matrix, following the
/// strategy. Returns the partial-sum buffer (`|M| x c_out`).
pub fn execute_groups<T: Scalar>(
    buffer: &FeatureBuffer<T>,
    weights: &Weights,
    strategy: &GroupingStrategy,
    map_sizes: &[usize],
) -> Result<FeatureBuffer<T>> {
    let mut out = FeatureBuffer::zeros(buffer.cumulative(), weights.c_out());
    execute_groups_into(buffer, weights, strategy, map_sizes, &mut out)?;
    Ok(out)
}

/// [`execute_groups`] into a zeroed `|M| x c_out` buffer.
pub fn execute_groups_into<T: Scalar>(
    buffer: &FeatureBuffer<T>,
    weights: &Weights,
    strategy: &GroupingStrategy,
    map_sizes: &[usize],
    out: &mut FeatureBuffer<T>,
) -> Result<()> {
    if buffer.sizes() != map_sizes {
        return Err(Error::StrategyMismatch("buffer layout differs from the map sizes".into()));
    }
    if weights.volume() != map_sizes.len() || weights.c_in() != buffer.cols() {
        return Err(Error::ShapeMismatch("weights do not match the buffer".into()));
    }
    if out.cumulative() != buffer.cumulative() || out.cols() != weights.c_out() {
        return Err(Error::ShapeMismatch("output buffer does not match the map".into()));
    }
    strategy.validate(map_sizes)?;
    for g in &strategy.groups {
        execute_group(buffer, weights, g, out);
    }
    Ok(())
}

/// Run a single validated group, writing its members' rows of `out`.
pub fn execute_group<T: Scalar>(buffer: &FeatureBuffer<T>, weights: &Weights, group: &Group, out: &mut FeatureBuffer<T>) {
    let (c_in, c_out) = (weights.c_in(), weights.c_out());
    match group.mode {
        ExecMode::Sequential => {
            for &n in &group.members {
                let rows = buffer.cumulative()[n + 1] - buffer.cumulative()[n];
                if rows > 0 {
                    matmul_rows(buffer.offset(n), rows, weights.slice(n), c_in, c_out, out.offset_mut(n));
                }
            }
        }
        ExecMode::Batched => {
            let pad = group.padded_rows;
            if pad == 0 {
                return;
            }
            let m = group.members.len();
            // Zero-padded operands, one n_max-row slice per member.
            let mut a = vec![0.0f32; m * pad * c_in];
            for (slot, &n) in group.members.iter().enumerate() {
                let src = buffer.offset(n);
                let dst = &mut a[slot * pad * c_in..slot * pad * c_in + src.len()];
                match as_f32_slice(src) {
                    Some(s) => dst.copy_from_slice(s),
                    None => dst.iter_mut().zip(src).for_each(|(d, &v)| *d = v.to_f32()),
                }
            }
            let mut c = vec![0.0f32; m * pad * c_out];
            for (slot, &n) in group.members.iter().enumerate() {
                sgemm(
                    pad,
                    c_in,
                    c_out,
                    &a[slot * pad * c_in..(slot + 1) * pad * c_in],
                    weights.slice(n),
                    &mut c[slot * pad * c_out..(slot + 1) * pad * c_out],
                    0.0,
                );
            }
            // Only the real rows go back; padding is dropped here.
            for (slot, &n) in group.members.iter().enumerate() {
                let dst = out.offset_mut(n);
                let src = &c[slot * pad * c_out..slot * pad * c_out + dst.len()];
                dst.iter_mut().zip(src).for_each(|(d, &v)| *d = T::from_f32(v));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_traced_partition() {
        assert_eq!(partition_groups(&[100, 95, 90, 50, 48], 0.1), vec![0..3, 3..5]);
    }

    #[test]
    fn epsilon_extremes() {
        let sizes = [100, 7, 3000, 1, 0, 55];
        assert_eq!(partition_groups(&sizes, 1.0), vec![0..6]);
        let distinct = [5, 4, 3, 2, 1];
        assert_eq!(partition_groups(&distinct, 0.0).len(), 5);
        assert_eq!(partition_groups(&[], 0.5), Vec::<Range<usize>>::new());
    }

    #[test]
    fn equal_sizes_merge_at_zero_tolerance() {
        assert_eq!(partition_groups(&[4, 4, 4, 2], 0.0), vec![0..3, 3..4]);
    }

    #[test]
    fn special_cases() {
        let mut sizes: Vec<usize> = (0..27).map(|n| 10 + n.min(26 - n)).collect();
        sizes[13] = 0;
        let dense = GroupingStrategy::build(&sizes, GroupingParams::DENSE, true);
        assert_eq!(dense.groups.len(), 1);
        assert_eq!(dense.groups[0].members.len(), 26);
        assert_eq!(dense.groups[0].mode, ExecMode::Batched);

        let sep = GroupingStrategy::build(&sizes, GroupingParams::SEPARATE, true);
        assert!(sep.groups.iter().all(|g| g.mode == ExecMode::Sequential));

        let sym = GroupingStrategy::build(&sizes, GroupingParams::SYMMETRIC, true);
        assert_eq!(sym.groups.len(), 13);
        for (n, g) in sym.groups.iter().enumerate() {
            assert_eq!(g.members, vec![n, 26 - n]);
            assert_eq!(g.mode, ExecMode::Batched);
        }
        sym.validate(&sizes).unwrap();
    }

    #[test]
    fn threshold_parsing_and_serde() {
        assert_eq!("inf".parse::<Threshold>().unwrap(), Threshold::Infinite);
        assert_eq!("8192".parse::<Threshold>().unwrap(), Threshold::Rows(8192));
        assert!("-3".parse::<Threshold>().is_err());
        let p: GroupingParams = toml::from_str("epsilon = 0.1\nthreshold = \"inf\"").unwrap();
        assert_eq!(p.threshold, Threshold::Infinite);
        let p: GroupingParams = toml::from_str("epsilon = 0.1\nthreshold = 8192").unwrap();
        assert_eq!(p.threshold, Threshold::Rows(8192));
    }

    #[test]
    fn mismatched_strategy_rejected() {
        let sizes = vec![3, 5, 2];
        let s = GroupingStrategy::build(&sizes, GroupingParams::DENSE, false);
        assert!(s.validate(&[3, 6, 2]).is_err());
        assert!(s.validate(&[3, 5]).is_err());
        let sym = GroupingStrategy::build(&[1, 4, 1], GroupingParams::SYMMETRIC, true);
        // the unscheduled center must be empty
        assert!(sym.validate(&[1, 4, 1]).is_err());
        sym.validate(&[1, 0, 1]).unwrap();
    }
}
