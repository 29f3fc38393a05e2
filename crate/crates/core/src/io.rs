//! Point-cloud file formats.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic  "SPCL"          4 bytes
//! M      u32             number of rows
//! D      u32             spatial dimensions
//! C_raw  u32             feature channels
//! rows   M x (D + C_raw) float32
//! ```
//!
//! The text format is one point per line, whitespace-separated, `D + C_raw`
//! values per line. Blank lines and lines starting with `#` are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Coords, Matrix, SparseTensor};
use crate::voxel::PointCloud;

pub const MAGIC: &[u8; 4] = b"SPCL";

pub fn write_points<W: Write>(mut w: W, pc: &PointCloud) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(pc.len() as u32).to_le_bytes())?;
    w.write_all(&(pc.dim() as u32).to_le_bytes())?;
    w.write_all(&(pc.channels() as u32).to_le_bytes())?;
    for v in pc.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points<R: Read>(mut r: R) -> Result<PointCloud> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|e| Error::Malformed(format!("short header: {e}")))?;
    if &header[..4] != MAGIC {
        return Err(Error::Malformed("bad magic, expected SPCL".into()));
    }
    let field = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (m, d, c) = (field(0), field(1), field(2));
    let n = m
        .checked_mul(d + c)
        .ok_or_else(|| Error::Malformed("row count overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(Error::Malformed(format!("expected {} payload bytes, found {}", n * 4, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    PointCloud::new(d, c, data)
}

/// Parse a whitespace-separated text cloud with `dim` positions per line.
pub fn read_points_text<R: BufRead>(r: R, dim: usize) -> Result<PointCloud> {
    let mut data = Vec::new();
    let mut width = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f32> = line
            .split_whitespace()
            .map(|t| t.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Malformed(format!("line {}: {e}", lineno + 1)))?;
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(Error::Malformed(format!(
                    "line {}: {} values, expected {w}",
                    lineno + 1,
                    vals.len()
                )))
            }
            _ => {}
        }
        data.extend(vals);
    }
    let width = width.unwrap_or(dim);
    if width < dim {
        return Err(Error::Malformed(format!("rows have {width} values, need at least {dim}")));
    }
    PointCloud::new(dim, width - dim, data)
}

/// Read by extension: `.txt`/`.xyz` as text with three positions, otherwise binary.
pub fn load_points(path: &Path) -> Result<PointCloud> {
    let f = File::open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("txt") | Some("xyz") => read_points_text(BufReader::new(f), 3),
        _ => read_points(BufReader::new(f)),
    }
}

pub fn save_points(path: &Path, pc: &PointCloud) -> Result<()> {
    write_points(BufWriter::new(File::create(path)?), pc)
}

/// Dump a single-batch tensor as rows of integer coordinates then features.
pub fn write_tensor<W: Write>(w: W, t: &SparseTensor) -> Result<()> {
    if t.lattice().batch_size() != 1 {
        return Err(Error::InvalidArgument("tensor dumps hold a single batch element".into()));
    }
    let feats = t.features().to_f32();
    let mut data = Vec::with_capacity(t.len() * (t.dim() + t.channels()));
    for (i, row) in t.coords().iter().enumerate() {
        data.extend(row[1..].iter().map(|&c| c as f32));
        data.extend_from_slice(feats.row(i));
    }
    write_points(w, &PointCloud::new(t.dim(), t.channels(), data)?)
}

/// Read a dump written by [`write_tensor`].
pub fn read_tensor<R: Read>(r: R) -> Result<(Coords, Matrix<f32>)> {
    let pc = read_points(r)?;
    let d = pc.dim();
    let mut coords = Vec::with_capacity(pc.len() * (d + 1));
    let mut feats = Vec::with_capacity(pc.len() * pc.channels());
    for row in pc.iter() {
        coords.push(0);
        for &c in &row[..d] {
            if c < 0.0 || c.fract() != 0.0 {
                return Err(Error::Malformed(format!("non-integer coordinate {c}")));
            }
            coords.push(c as u32);
        }
        feats.extend_from_slice(&row[d..]);
    }
    Ok((Coords::new(d, coords)?, Matrix::from_vec(pc.len(), pc.channels(), feats)?))
}
