//! Reference implementations for validation.
//!
//! Nothing here goes through the mapping or execution modules. Convolution
//! is evaluated as the literal window sum over a dense grid at the active
//! output sites, active sites are found by scanning the dense output box, and
//! maps are found by comparing every input against every output window.

use serde::Serialize;

use crate::dense::{to_dense, DenseGrid};
use crate::error::{Error, Result};
use crate::tensor::{Coords, Lattice, Matrix, SparseTensor, Weights};

/// Largest boundary extent the oracle is meant for.
pub const MAX_ORACLE_EXTENT: u32 = 32;

/// Kernel offsets, enumerated independently of the engine: first dimension
/// slowest, centered for odd sizes, `0..K` for even sizes.
pub fn reference_offsets(dim: usize, kernel_size: usize) -> Vec<Vec<i64>> {
    let k = kernel_size as i64;
    let lo = if kernel_size % 2 == 1 { -(k - 1) / 2 } else { 0 };
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(out.len() * kernel_size);
        for prefix in &out {
            for v in lo..lo + k {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

fn out_lattice(input: &Lattice, stride: u32) -> Result<Lattice> {
    let b: Vec<u32> = input.boundary().iter().map(|&b| b.div_ceil(stride)).collect();
    Lattice::new(input.batch_size(), &b)
}

fn all_cells(lattice: &Lattice) -> impl Iterator<Item = Vec<u32>> + '_ {
    let width = lattice.dim() + 1;
    (0..lattice.volume()).map(move |key| {
        let mut row = vec![0u32; width];
        lattice.unflatten(key, &mut row);
        row
    })
}

fn occupied(lattice: &Lattice, coords: &Coords) -> Vec<bool> {
    let mut occ = vec![false; lattice.volume() as usize];
    for r in coords.iter() {
        occ[lattice.flatten(r) as usize] = true;
    }
    occ
}

fn shifted_key(lattice: &Lattice, batch: u32, spatial: impl Iterator<Item = i64>) -> Option<u64> {
    let mut key = batch as u64;
    for (v, &b) in spatial.zip(lattice.boundary()) {
        if v < 0 || v >= b as i64 {
            return None;
        }
        key = key * b as u64 + v as u64;
    }
    Some(key)
}

/// Active output sites of a convolution: every cell `q` of the output box
/// whose window `s q + delta` covers an active input. Stride 1 keeps the
/// input set. Returns sites in ascending key order and the output lattice.
pub fn active_outputs(input: &Coords, lattice: &Lattice, kernel_size: usize, stride: u32) -> Result<(Coords, Lattice)> {
    if stride == 1 {
        let mut keys = input.keys(lattice);
        keys.sort_unstable();
        return Ok((Coords::from_keys(lattice, &keys), lattice.clone()));
    }
    let out_lat = out_lattice(lattice, stride)?;
    let occ = occupied(lattice, input);
    let offsets = reference_offsets(lattice.dim(), kernel_size);
    let s = stride as i64;
    let mut keys = Vec::new();
    for (key, q) in all_cells(&out_lat).enumerate() {
        let hit = offsets.iter().any(|d| {
            shifted_key(lattice, q[0], q[1..].iter().zip(d).map(|(&qd, &dd)| s * qd as i64 + dd))
                .is_some_and(|k| occ[k as usize])
        });
        if hit {
            keys.push(key as u64);
        }
    }
    Ok((Coords::from_keys(&out_lat, &keys), out_lat))
}

/// `out[q] = sum_delta grid[s q + delta] * W_delta` at the active sites,
/// zero elsewhere.
pub fn dense_conv_reference(
    input: &DenseGrid,
    w: &Weights,
    stride: u32,
    active: &Coords,
    out_lat: &Lattice,
    cap: u64,
) -> Result<DenseGrid> {
    if w.c_in() != input.channels() {
        return Err(Error::ShapeMismatch("oracle weights do not match the input channels".into()));
    }
    let in_lat = input.lattice();
    let offsets = reference_offsets(in_lat.dim(), w.kernel_size());
    let (c_in, c_out) = (w.c_in(), w.c_out());
    let s = stride as i64;
    let mut out = DenseGrid::zeros(out_lat.clone(), c_out, cap)?;
    for q in active.iter() {
        let mut acc = vec![0.0f64; c_out];
        for (n, d) in offsets.iter().enumerate() {
            let Some(src) = shifted_key(in_lat, q[0], q[1..].iter().zip(d).map(|(&qd, &dd)| s * qd as i64 + dd)) else {
                continue;
            };
            let x = input.cell(src);
            let wn = w.slice(n);
            for i in 0..c_in {
                for o in 0..c_out {
                    acc[o] += x[i] as f64 * wn[i * c_out + o] as f64;
                }
            }
        }
        let cell = out.cell_mut(out_lat.flatten(q));
        cell.iter_mut().zip(&acc).for_each(|(c, &a)| *c = a as f32);
    }
    Ok(out)
}

/// Transposed convolution: `out[p] = sum over (q, delta) with p = s q + delta
/// of coarse[q] * W_delta`, at the active fine sites.
pub fn dense_transposed_reference(
    coarse: &DenseGrid,
    w: &Weights,
    stride: u32,
    active: &Coords,
    fine_lat: &Lattice,
    cap: u64,
) -> Result<DenseGrid> {
    if w.c_in() != coarse.channels() {
        return Err(Error::ShapeMismatch("oracle weights do not match the input channels".into()));
    }
    let c_lat = coarse.lattice();
    let offsets = reference_offsets(fine_lat.dim(), w.kernel_size());
    let (c_in, c_out) = (w.c_in(), w.c_out());
    let s = stride as i64;
    let mut out = DenseGrid::zeros(fine_lat.clone(), c_out, cap)?;
    for p in active.iter() {
        let mut acc = vec![0.0f64; c_out];
        for (n, d) in offsets.iter().enumerate() {
            let u: Vec<i64> = p[1..].iter().zip(d).map(|(&pd, &dd)| pd as i64 - dd).collect();
            if u.iter().any(|&v| v < 0 || v % s != 0) {
                continue;
            }
            let Some(src) = shifted_key(c_lat, p[0], u.iter().map(|&v| v / s)) else {
                continue;
            };
            let x = coarse.cell(src);
            let wn = w.slice(n);
            for i in 0..c_in {
                for o in 0..c_out {
                    acc[o] += x[i] as f64 * wn[i * c_out + o] as f64;
                }
            }
        }
        let cell = out.cell_mut(fine_lat.flatten(p));
        cell.iter_mut().zip(&acc).for_each(|(c, &a)| *c = a as f32);
    }
    Ok(out)
}

/// Map by exhaustive comparison: `(offset, input row, output row)` for every
/// input `p_j` and output `q_k` with `p_j = s q_k + delta_n`. Sorted.
pub fn map_search_bruteforce(input: &Coords, output: &Coords, kernel_size: usize, stride: u32) -> Vec<(usize, u32, u32)> {
    let dim = input.dim();
    let offsets = reference_offsets(dim, kernel_size);
    let s = stride as i64;
    let mut triples = Vec::new();
    for (k, q) in output.iter().enumerate() {
        for (j, p) in input.iter().enumerate() {
            if p[0] != q[0] {
                continue;
            }
            let d: Vec<i64> = (0..dim).map(|a| p[a + 1] as i64 - s * q[a + 1] as i64).collect();
            if let Some(n) = offsets.iter().position(|o| *o == d) {
                triples.push((n, j as u32, k as u32));
            }
        }
    }
    triples.sort_unstable();
    triples
}

/// Downsampled output coordinates computed in five materialized stages:
/// candidates `p - delta`, modular mask, boundary mask, flattening, unique.
pub fn downsample_unfused(input: &Coords, lattice: &Lattice, kernel_size: usize, stride: u32) -> Result<(Coords, Lattice)> {
    let out_lat = out_lattice(lattice, stride)?;
    let dim = lattice.dim();
    let offsets = reference_offsets(dim, kernel_size);
    let s = stride as i64;
    // 1: all candidates
    let mut candidates: Vec<(u32, Vec<i64>)> = Vec::with_capacity(input.len() * offsets.len());
    for p in input.iter() {
        for d in &offsets {
            candidates.push((p[0], (0..dim).map(|a| p[a + 1] as i64 - d[a]).collect()));
        }
    }
    // 2: modular check
    let modular: Vec<bool> = candidates.iter().map(|(_, u)| u.iter().all(|&v| v.rem_euclid(s) == 0)).collect();
    // 3: boundary check
    let limits: Vec<i64> = out_lat.boundary().iter().map(|&b| b as i64 * s).collect();
    let keep: Vec<bool> = candidates
        .iter()
        .zip(&modular)
        .map(|((_, u), &m)| m && u.iter().zip(&limits).all(|(&v, &l)| v >= 0 && v < l))
        .collect();
    // 4: flatten survivors
    let mut keys: Vec<u64> = Vec::new();
    for ((b, u), k) in candidates.iter().zip(&keep) {
        if *k {
            let mut key = *b as u64;
            for (a, &v) in u.iter().enumerate() {
                key = key * out_lat.boundary()[a] as u64 + (v / s) as u64;
            }
            keys.push(key);
        }
    }
    // 5: unique
    keys.sort_unstable();
    keys.dedup();
    Ok((Coords::from_keys(&out_lat, &keys), out_lat))
}

/// A tensor as the oracle sees it: dense values plus the active site set.
#[derive(Debug, Clone)]
pub struct OracleTensor {
    pub grid: DenseGrid,
    pub active: Coords,
    pub stride: u32,
}

impl OracleTensor {
    pub fn from_sparse(t: &SparseTensor, cap: u64) -> Result<Self> {
        let mut keys = t.coords().keys(t.lattice());
        keys.sort_unstable();
        Ok(OracleTensor { grid: to_dense(t, cap)?, active: Coords::from_keys(t.lattice(), &keys), stride: t.stride() })
    }

    pub fn lattice(&self) -> &Lattice {
        self.grid.lattice()
    }

    pub fn conv(&self, w: &Weights, stride: u32, cap: u64) -> Result<OracleTensor> {
        let (active, lat) = active_outputs(&self.active, self.lattice(), w.kernel_size(), stride)?;
        let grid = dense_conv_reference(&self.grid, w, stride, &active, &lat, cap)?;
        Ok(OracleTensor { grid, active, stride: self.stride * stride })
    }

    /// Transposed convolution back onto `target`'s sites.
    pub fn transposed(&self, w: &Weights, stride: u32, target: &OracleTensor, cap: u64) -> Result<OracleTensor> {
        let grid = dense_transposed_reference(&self.grid, w, stride, &target.active, target.lattice(), cap)?;
        Ok(OracleTensor { grid, active: target.active.clone(), stride: target.stride })
    }

    /// Apply `f(channel, value)` at the active sites.
    pub fn map_active(&self, f: impl Fn(usize, f32) -> f32) -> OracleTensor {
        let mut out = self.clone();
        for r in self.active.iter() {
            let key = self.lattice().flatten(r);
            for (c, v) in out.grid.cell_mut(key).iter_mut().enumerate() {
                *v = f(c, *v);
            }
        }
        out
    }
}

/// Agreement between an engine tensor and an oracle result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub max_abs: f64,
    /// `max_abs` relative to the largest oracle magnitude.
    pub max_rel: f64,
    pub missing: Vec<Vec<u32>>,
    pub extra: Vec<Vec<u32>>,
    /// Coordinate, channel, engine value and oracle value of the largest
    /// out-of-tolerance difference.
    pub worst: Option<(Vec<u32>, usize, f32, f32)>,
    pub tolerance: Tolerance,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    Absolute(f64),
    Relative(f64),
}

/// Compare coordinate sets exactly and features within `tol`.
pub fn compare(engine: &SparseTensor, oracle: &DenseGrid, oracle_active: &Coords, tol: Tolerance) -> ComparisonReport {
    let lat = oracle.lattice();
    let eng_keys: Vec<u64> = if engine.lattice() == lat { engine.coords().keys(lat) } else { Vec::new() };
    let mut ora_keys = oracle_active.keys(lat);
    ora_keys.sort_unstable();
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..eng_keys.len()).collect();
        idx.sort_unstable_by_key(|&i| eng_keys[i]);
        idx
    };
    let feats: Matrix<f32> = engine.features().to_f32();
    let mut missing = Vec::new();
    let mut extra = Vec::new();
    if engine.lattice() != lat {
        missing = oracle_active.iter().map(<[u32]>::to_vec).collect();
        extra = engine.coords().iter().map(<[u32]>::to_vec).collect();
    }
    let scale = oracle.as_slice().iter().fold(0.0f64, |m, &v| m.max(v.abs() as f64));
    let mut max_abs = 0.0f64;
    let mut worst: Option<(Vec<u32>, usize, f32, f32)> = None;
    let (mut a, mut b) = (0, 0);
    let sorted: Vec<u64> = order.iter().map(|&i| eng_keys[i]).collect();
    while a < sorted.len() || b < ora_keys.len() {
        let row_of = |key: u64| {
            let mut r = vec![0u32; lat.dim() + 1];
            lat.unflatten(key, &mut r);
            r
        };
        match (sorted.get(a), ora_keys.get(b)) {
            (Some(&ek), Some(&ok)) if ek == ok => {
                let er = feats.row(order[a]);
                for (c, (&x, &y)) in er.iter().zip(oracle.cell(ok)).enumerate() {
                    let d = (x as f64 - y as f64).abs();
                    if d > max_abs || (d.is_nan() && !max_abs.is_nan()) {
                        max_abs = d;
                        worst = Some((row_of(ek), c, x, y));
                    }
                }
                a += 1;
                b += 1;
            }
            (Some(&ek), Some(&ok)) if ek < ok => {
                extra.push(row_of(ek));
                a += 1;
            }
            (Some(_), Some(&ok)) => {
                missing.push(row_of(ok));
                b += 1;
            }
            (Some(&ek), None) => {
                extra.push(row_of(ek));
                a += 1;
            }
            (None, Some(&ok)) => {
                missing.push(row_of(ok));
                b += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    let max_rel = if scale > 0.0 { max_abs / scale } else { max_abs };
    let within = match tol {
        Tolerance::Absolute(t) => max_abs <= t,
        Tolerance::Relative(t) => max_rel <= t,
    };
    let pass = missing.is_empty() && extra.is_empty() && within;
    if within {
        worst = None;
    }
    ComparisonReport { max_abs, max_rel, missing, extra, worst, tolerance: tol, pass }
}

impl std::fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max_abs={:.3e} max_rel={:.3e} missing={} extra={}",
            if self.pass { "PASS" } else { "FAIL" },
            self.max_abs,
            self.max_rel,
            self.missing.len(),
            self.extra.len()
        )?;
        if let Some(c) = self.missing.first() {
            write!(f, " first_missing={c:?}")?;
        }
        if let Some(c) = self.extra.first() {
            write!(f, " first_extra={c:?}")?;
        }
        if let Some((c, ch, e, o)) = &self.worst {
            write!(f, " worst={c:?}[{ch}] engine={e} oracle={o}")?;
        }
        Ok(())
    }
}
