//! Coordinate indexes answering "which row holds coordinate p?".
//!
//! Both backends key on the flattened lattice coordinate. The grid is a dense
//! array over the whole lattice (one memory access per query, no collisions);
//! the hash table uses open addressing with linear probing, a power-of-two
//! table at load factor at most 0.5, and the flattened key masked into the
//! table as the home slot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Coords, Lattice};

/// Default cap on grid cells; lattices larger than this use the hash index.
pub const DEFAULT_GRID_CAP: u64 = 1 << 31;

const EMPTY_ROW: u32 = u32::MAX;
const EMPTY_KEY: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Grid,
    Hash,
}

impl std::fmt::Display for IndexKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IndexKind::Grid => "grid",
            IndexKind::Hash => "hash",
        })
    }
}

impl std::str::FromStr for IndexKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "grid" => Ok(IndexKind::Grid),
            "hash" | "hashmap" => Ok(IndexKind::Hash),
            other => Err(format!("unknown index kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridIndex {
    cells: Vec<u32>,
}

impl GridIndex {
    fn build(keys: &[u64], lattice: &Lattice, cap: u64) -> Result<Self> {
        let cells = lattice.volume();
        if cells > cap {
            return Err(Error::GridOverCap { cells, cap });
        }
        let mut grid = vec![EMPTY_ROW; cells as usize];
        for (row, &k) in keys.iter().enumerate() {
            let slot = &mut grid[k as usize];
            if *slot != EMPTY_ROW {
                return Err(Error::InvalidArgument("duplicate coordinate in index".into()));
            }
            *slot = row as u32;
        }
        Ok(GridIndex { cells: grid })
    }

    #[inline]
    fn get(&self, key: u64) -> Option<u32> {
        match self.cells.get(key as usize) {
            Some(&r) if r != EMPTY_ROW => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HashIndex {
    keys: Vec<u64>,
    rows: Vec<u32>,
    mask: u64,
}

impl HashIndex {
    fn build(keys: &[u64]) -> Result<Self> {
        let size = (keys.len() * 2).max(2).next_power_of_two();
        let mut table = HashIndex { keys: vec![EMPTY_KEY; size], rows: vec![0; size], mask: size as u64 - 1 };
        for (row, &k) in keys.iter().enumerate() {
            table.insert(k, row as u32)?;
        }
        Ok(table)
    }

    fn insert(&mut self, key: u64, row: u32) -> Result<()> {
        let mut slot = key & self.mask;
        loop {
            let s = slot as usize;
            if self.keys[s] == EMPTY_KEY {
                self.keys[s] = key;
                self.rows[s] = row;
                return Ok(());
            }
            if self.keys[s] == key {
                return Err(Error::InvalidArgument("duplicate coordinate in index".into()));
            }
            slot = (slot + 1) & self.mask;
        }
    }

    #[inline]
    fn get(&self, key: u64) -> Option<u32> {
        let mut slot = key & self.mask;
        loop {
            let s = slot as usize;
            let k = self.keys[s];
            if k == key {
                return Some(self.rows[s]);
            }
            if k == EMPTY_KEY {
                return None;
            }
            slot = (slot + 1) & self.mask;
        }
    }

    pub fn table_size(&self) -> usize {
        self.keys.len()
    }
}

#[derive(Debug, Clone)]
pub enum Backend {
    Grid(GridIndex),
    Hash(HashIndex),
}

/// Index over the rows of a coordinate set.
#[derive(Debug, Clone)]
pub struct CoordinateIndex {
    lattice: Lattice,
    len: usize,
    backend: Backend,
}

impl CoordinateIndex {
    pub fn kind(&self) -> IndexKind {
        match self.backend {
            Backend::Grid(_) => IndexKind::Grid,
            Backend::Hash(_) => IndexKind::Hash,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    #[inline]
    pub fn query_key(&self, key: u64) -> Option<u32> {
        match &self.backend {
            Backend::Grid(g) => g.get(key),
            Backend::Hash(h) => h.get(key),
        }
    }

    /// Row holding `(batch, spatial...)`, or `None` (a miss) if absent or
    /// outside the lattice.
    pub fn query(&self, row: &[u32]) -> Option<u32> {
        if row.len() != self.lattice.dim() + 1 || !self.lattice.contains(row) {
            return None;
        }
        self.query_key(self.lattice.flatten(row))
    }
}

/// Build an index of the given kind. Coordinates must be unique and inside
/// the lattice.
pub fn build_index(coords: &Coords, kind: IndexKind, lattice: &Lattice, grid_cap: u64) -> Result<CoordinateIndex> {
    if coords.dim() != lattice.dim() {
        return Err(Error::ShapeMismatch("coordinate and lattice dimensions differ".into()));
    }
    if coords.len() >= EMPTY_ROW as usize {
        return Err(Error::InvalidArgument("too many rows for a 32-bit index".into()));
    }
    let mut keys = Vec::with_capacity(coords.len());
    for r in coords.iter() {
        if !lattice.contains(r) {
            return Err(Error::InvalidArgument(format!("coordinate {r:?} outside boundary")));
        }
        keys.push(lattice.flatten(r));
    }
    let backend = match kind {
        IndexKind::Grid => Backend::Grid(GridIndex::build(&keys, lattice, grid_cap)?),
        IndexKind::Hash => Backend::Hash(HashIndex::build(&keys)?),
    };
    Ok(CoordinateIndex { lattice: lattice.clone(), len: coords.len(), backend })
}

/// Grid when it fits under the cap, hash otherwise.
pub fn resolve_kind(preferred: IndexKind, lattice: &Lattice, grid_cap: u64) -> IndexKind {
    match preferred {
        IndexKind::Grid if lattice.volume() > grid_cap => {
            log::info!("grid index over cap ({} cells), falling back to hash", lattice.volume());
            IndexKind::Hash
        }
        k => k,
    }
}
