//! Worked and derived examples of the mapping, voxelization and traffic
//! operations, each checked against an independent computation.

mod common;

use std::collections::HashSet;

use common::*;
use rand::Rng;
use sparseconv::dense::{to_dense, DEFAULT_DENSE_CAP};
use sparseconv::mapping::{
    build_gather_scatter_plan, build_index, compute_output_coords, map_search, IndexKind, KernelOffsets,
    DEFAULT_GRID_CAP,
};
use sparseconv::traffic::{count_traffic, theoretical_totals, MovementOrder};
use sparseconv::voxel::{voxelize, PointCloud, Reduce};
use sparseconv::{Coords, Lattice, Precision};

fn dense_block(b: u32) -> (Coords, Lattice) {
    let mut rows = Vec::new();
    for x in 0..b {
        for y in 0..b {
            for z in 0..b {
                rows.push([0, x, y, z]);
            }
        }
    }
    (Coords::from_rows(3, &rows).unwrap(), Lattice::new(1, &[b, b, b]).unwrap())
}

#[test]
fn dense_block_map_size_matches_closed_form() {
    let (coords, lat) = dense_block(8);
    let offsets = KernelOffsets::enumerate(3, 3).unwrap();
    let idx = build_index(&coords, IndexKind::Grid, &lat, DEFAULT_GRID_CAP).unwrap();
    let map = map_search(&idx, &coords, &offsets, 1).unwrap();
    // sum over offsets of prod_d (8 - |delta_d|) = (8 + 7 + 7)^3
    let closed: usize = offsets.iter().map(|d| d.iter().map(|&v| 8 - v.unsigned_abs() as usize).product::<usize>()).sum();
    assert_eq!(closed, 22usize.pow(3));
    assert_eq!(map.total(), closed);

    let plan = build_gather_scatter_plan(&map);
    for c in [4usize, 16] {
        let r = theoretical_totals(map.total(), 512, 512, c, c);
        assert!((r.reuse - 10648.0 / 512.0).abs() < 1e-12);
        let ws = count_traffic(&plan, MovementOrder::WeightStationary, c, c, Precision::Fp32);
        let loc = count_traffic(&plan, MovementOrder::Locality, c, c, Precision::Fp32);
        assert_eq!(ws.elements.gather_read * 512, loc.elements.gather_read * 10648);
    }
}

#[test]
fn voxelize_matches_cell_set() {
    let mut r = rng(11);
    let data: Vec<f32> = (0..10_000)
        .flat_map(|_| {
            let p = [r.gen_range(0.0f32..50.0), r.gen_range(0.0f32..50.0), r.gen_range(0.0f32..50.0)];
            [p[0], p[1], p[2], r.gen_range(-1.0f32..1.0)]
        })
        .collect();
    let pc = PointCloud::new(3, 1, data).unwrap();
    let t = voxelize(&pc, 1.0, Reduce::First).unwrap();
    let mut lo = [f32::INFINITY; 3];
    for p in pc.iter() {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
        }
    }
    let cells: HashSet<[i64; 3]> =
        pc.iter().map(|p| [0, 1, 2].map(|d| ((p[d] as f64 - lo[d] as f64) / 1.0).floor() as i64)).collect();
    assert_eq!(t.len(), cells.len());
    for row in t.coords().iter() {
        assert!(cells.contains(&[row[1] as i64, row[2] as i64, row[3] as i64]));
    }
}

#[test]
fn dense_grid_counts_rows() {
    let mut r = rng(12);
    let t = random_tensor(&mut r, 16, 0.1, 3);
    let g = to_dense(&t, DEFAULT_DENSE_CAP).unwrap();
    assert_eq!(g.nonzero_cells(), t.len());
}

#[test]
fn grid_and_hash_answer_identically_on_random_probes() {
    let mut r = rng(13);
    let lat = Lattice::new(1, &[40, 40, 40]).unwrap();
    let mut set = HashSet::new();
    while set.len() < 1000 {
        set.insert([0u32, r.gen_range(0..40), r.gen_range(0..40), r.gen_range(0..40)]);
    }
    let mut rows: Vec<[u32; 4]> = set.into_iter().collect();
    rows.sort();
    let coords = Coords::from_rows(3, &rows).unwrap();
    let g = build_index(&coords, IndexKind::Grid, &lat, DEFAULT_GRID_CAP).unwrap();
    let h = build_index(&coords, IndexKind::Hash, &lat, DEFAULT_GRID_CAP).unwrap();
    for _ in 0..10_000 {
        let p = [0, r.gen_range(0..42), r.gen_range(0..42), r.gen_range(0..42)];
        assert_eq!(g.query(&p), h.query(&p));
    }
}

#[test]
fn strided_output_coordinates() {
    // (3,5) at s=2: offset (1,1) gives (2,4)/2 = (1,2); offset (0,0) leaves
    // (3,5), which fails the modular check. K=3 keeps the four odd offsets.
    let lat = Lattice::new(1, &[4, 4]).unwrap();
    let c = Coords::from_rows(2, &[[0, 3, 5]]).unwrap();
    let out = compute_output_coords(&c, &KernelOffsets::enumerate(2, 3).unwrap(), 2, &lat).unwrap();
    let rows: Vec<Vec<u32>> = out.iter().map(<[u32]>::to_vec).collect();
    assert_eq!(rows, vec![vec![0, 1, 2], vec![0, 1, 3], vec![0, 2, 2], vec![0, 2, 3]]);
}
