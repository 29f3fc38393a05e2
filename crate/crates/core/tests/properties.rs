mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use sparseconv::dense::{to_dense, DEFAULT_DENSE_CAP};
use sparseconv::execution::{
    execute_groups, gather, partition_groups, scatter_accumulate, ExecMode, FeatureBuffer, GatherOrder, GroupingParams,
    GroupingStrategy, ScatterOrder,
};
use sparseconv::mapping::{
    build_gather_scatter_plan, build_index, compute_output_coords, downsampled_boundary, map_search, IndexKind,
    KernelOffsets, DEFAULT_GRID_CAP,
};
use sparseconv::precision::quantize_features;
use sparseconv::traffic::{count_traffic, theoretical_totals, MovementOrder};
use sparseconv::voxel::{voxelize, PointCloud, Reduce};
use sparseconv::{Coords, Features, Lattice, Matrix, Precision, SparseTensor, Threshold, Weights};

fn coords_strategy(b: u32, max: usize) -> impl Strategy<Value = (Coords, Lattice)> {
    prop::collection::btree_set((0..b, 0..b, 0..b), 1..max).prop_map(move |set| {
        let rows: Vec<[u32; 4]> = set.into_iter().map(|(x, y, z)| [0, x, y, z]).collect();
        (Coords::from_rows(3, &rows).unwrap(), Lattice::new(1, &[b, b, b]).unwrap())
    })
}

fn masked_center(sizes: &[usize]) -> Vec<usize> {
    let mut s = sizes.to_vec();
    let v = s.len();
    s[(v - 1) / 2] = 0;
    s
}

fn threshold_strategy() -> impl Strategy<Value = Threshold> {
    prop_oneof![Just(Threshold::Infinite), (0u64..5000).prop_map(Threshold::Rows)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_and_hash_agree((coords, lat) in coords_strategy(9, 120), probes in prop::collection::vec((0u32..11, 0u32..11, 0u32..11), 50)) {
        let g = build_index(&coords, IndexKind::Grid, &lat, DEFAULT_GRID_CAP).unwrap();
        let h = build_index(&coords, IndexKind::Hash, &lat, DEFAULT_GRID_CAP).unwrap();
        for (i, r) in coords.iter().enumerate() {
            prop_assert_eq!(g.query(r), Some(i as u32));
            prop_assert_eq!(h.query(r), Some(i as u32));
        }
        for (x, y, z) in probes {
            let row = [0, x, y, z];
            prop_assert_eq!(g.query(&row), h.query(&row));
        }
    }

    #[test]
    fn submanifold_map_sizes_pair_up((coords, lat) in coords_strategy(8, 150)) {
        let offsets = KernelOffsets::enumerate(3, 3).unwrap();
        let idx = build_index(&coords, IndexKind::Grid, &lat, DEFAULT_GRID_CAP).unwrap();
        let map = map_search(&idx, &coords, &offsets, 1).unwrap();
        let sizes = map.sizes();
        for n in 0..27 {
            prop_assert_eq!(sizes[n], sizes[26 - n]);
        }
        prop_assert_eq!(sizes[13], coords.len());
    }

    #[test]
    fn plan_rows_are_permutations((coords, lat) in coords_strategy(8, 150), k in 2usize..4, s in 1u32..3) {
        let offsets = KernelOffsets::enumerate(3, k).unwrap();
        let out_lat = Lattice::new(1, &downsampled_boundary(lat.boundary(), s)).unwrap();
        let out = compute_output_coords(&coords, &offsets, s, &out_lat).unwrap();
        let idx = build_index(&coords, IndexKind::Hash, &lat, DEFAULT_GRID_CAP).unwrap();
        let map = map_search(&idx, &out, &offsets, s).unwrap();
        let plan = build_gather_scatter_plan(&map);
        let mut d = plan.all_destinations().to_vec();
        let mut src = plan.all_sources().to_vec();
        d.sort_unstable();
        src.sort_unstable();
        let expect: Vec<u32> = (0..plan.total() as u32).collect();
        prop_assert_eq!(&d, &expect);
        prop_assert_eq!(&src, &expect);
        for j in 0..plan.n_in() {
            prop_assert!(plan.destinations(j).windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn stride_one_output_is_identity((coords, lat) in coords_strategy(8, 100), k in 1usize..4) {
        let offsets = KernelOffsets::enumerate(3, k).unwrap();
        prop_assert_eq!(compute_output_coords(&coords, &offsets, 1, &lat).unwrap(), coords);
    }

    #[test]
    fn traffic_counts(( coords, lat) in coords_strategy(8, 150), k in 2usize..4, s in 1u32..3, c_in in 1usize..9, c_out in 1usize..9) {
        let offsets = KernelOffsets::enumerate(3, k).unwrap();
        let out_lat = Lattice::new(1, &downsampled_boundary(lat.boundary(), s)).unwrap();
        let out = compute_output_coords(&coords, &offsets, s, &out_lat).unwrap();
        let idx = build_index(&coords, IndexKind::Grid, &lat, DEFAULT_GRID_CAP).unwrap();
        let map = map_search(&idx, &out, &offsets, s).unwrap();
        let plan = build_gather_scatter_plan(&map);
        let analytic = theoretical_totals(map.total(), coords.len(), out.len(), c_in, c_out);
        for order in [MovementOrder::WeightStationary, MovementOrder::Locality] {
            let r = count_traffic(&plan, order, c_in, c_out, Precision::Fp32);
            prop_assert_eq!(r.n1, analytic.n1);
            prop_assert_eq!(r.n1, (map.total() * (c_in + c_out)) as u64);
            prop_assert_eq!(r.n2, analytic.n2);
        }
        let ws = count_traffic(&plan, MovementOrder::WeightStationary, c_in, c_out, Precision::Fp32);
        let loc = count_traffic(&plan, MovementOrder::Locality, c_in, c_out, Precision::Fp32);
        prop_assert_eq!(loc.elements.gather_read, (coords.len() * c_in) as u64);
        prop_assert_eq!(loc.elements.scatter_write, (out.len() * c_out) as u64);
        prop_assert_eq!(ws.elements.gather_read + ws.elements.scatter_write, analytic.n1);
    }

    #[test]
    fn batched_groups_bound_padding(sizes in prop::collection::vec(0usize..3000, 1..40), eps_step in 0u32..=20, threshold in threshold_strategy(), symmetric in any::<bool>()) {
        let eps = eps_step as f64 / 20.0;
        let mut sizes = sizes;
        if symmetric {
            let v = sizes.len();
            for n in 0..v / 2 {
                sizes[v - 1 - n] = sizes[n];
            }
        }
        let strategy = GroupingStrategy::build(&sizes, GroupingParams { epsilon: eps, threshold }, symmetric);
        let sched = strategy.scheduled();
        let mut covered = Vec::new();
        for g in &strategy.groups {
            let member_sizes: Vec<usize> = sched[g.start..g.end].iter().map(|&n| sizes[n]).collect();
            let (lo, hi) = (*member_sizes.iter().min().unwrap(), *member_sizes.iter().max().unwrap());
            if hi > 0 {
                prop_assert!(1.0 - lo as f64 / hi as f64 <= eps + 1e-9);
            }
            prop_assert_eq!(g.mode == ExecMode::Batched, threshold.batches(hi));
            if g.mode == ExecMode::Batched && hi > 0 {
                let all: usize = g.members.iter().map(|&n| sizes[n]).sum();
                let overhead = 1.0 - all as f64 / (g.members.len() * hi) as f64;
                prop_assert!(overhead <= 1.0 - lo as f64 / hi as f64 + 1e-12);
            }
            if strategy.symmetric {
                strategy.validate(&masked_center(&sizes)).unwrap();
            }
            covered.extend(g.start..g.end);
        }
        prop_assert_eq!(covered, (0..sched.len()).collect::<Vec<_>>());
    }

    #[test]
    fn partition_is_contiguous(sizes in prop::collection::vec(1usize..500, 0..30), eps in 0.0f64..=1.0) {
        let groups = partition_groups(&sizes, eps);
        let mut next = 0;
        for g in &groups {
            prop_assert_eq!(g.start, next);
            prop_assert!(g.end > g.start);
            next = g.end;
        }
        prop_assert_eq!(next, sizes.len());
    }

    #[test]
    fn grouped_equals_separate(sizes in prop::collection::vec(0usize..60, 1..12), eps in 0.0f64..=1.0, threshold in threshold_strategy(), seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let (c_in, c_out) = (3, 5);
        let mut cumulative = vec![0];
        for &s in &sizes {
            cumulative.push(cumulative.last().unwrap() + s);
        }
        let total = *cumulative.last().unwrap();
        let buf = FeatureBuffer::from_matrix(common::random_matrix(&mut r, total, c_in), &cumulative).unwrap();
        let vol = sizes.len();
        let w = Weights::new(1, vol, c_in, c_out, common::random_matrix(&mut r, vol * c_in, c_out).into_vec()).unwrap();
        let sep = execute_groups(&buf, &w, &GroupingStrategy::build(&sizes, GroupingParams::SEPARATE, false), &sizes).unwrap();
        let grp = execute_groups(&buf, &w, &GroupingStrategy::build(&sizes, GroupingParams { epsilon: eps, threshold }, false), &sizes).unwrap();
        for (a, b) in grp.matrix().as_slice().iter().zip(sep.matrix().as_slice()) {
            prop_assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn movement_orders_agree((coords, lat) in coords_strategy(8, 120), seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let offsets = KernelOffsets::enumerate(3, 3).unwrap();
        let idx = build_index(&coords, IndexKind::Hash, &lat, DEFAULT_GRID_CAP).unwrap();
        let map = map_search(&idx, &coords, &offsets, 1).unwrap();
        let plan = build_gather_scatter_plan(&map);
        let x = common::random_matrix(&mut r, coords.len(), 4);
        let a = gather(&x, &plan, GatherOrder::WeightStationary).unwrap();
        let b = gather(&x, &plan, GatherOrder::InputStationary).unwrap();
        prop_assert_eq!(&a, &b);
        let ws = scatter_accumulate(&a, &plan, coords.len(), ScatterOrder::WeightStationary).unwrap();
        let os = scatter_accumulate(&a, &plan, coords.len(), ScatterOrder::OutputStationary).unwrap();
        // Both orders sum each output in ascending buffer-row order.
        prop_assert_eq!(ws, os);
    }

    #[test]
    fn fp16_quantization_is_idempotent(values in prop::collection::vec(-70000.0f32..70000.0, 1..64)) {
        let n = values.len();
        let rows: Vec<[u32; 2]> = (0..n as u32).map(|i| [0, i]).collect();
        let t = SparseTensor::new(
            Coords::from_rows(1, &rows).unwrap(),
            Features::F32(Matrix::from_vec(n, 1, values).unwrap()),
            1,
            Lattice::new(1, &[n as u32]).unwrap(),
        ).unwrap();
        let (once, _) = quantize_features(&t, Precision::Fp16);
        let (back, _) = quantize_features(&once, Precision::Fp32);
        let (twice, stats) = quantize_features(&back, Precision::Fp16);
        prop_assert_eq!(stats.saturated, 0);
        prop_assert_eq!(once, twice);
        prop_assert!(back.features().to_f32().as_slice().iter().all(|v| v.is_finite() && v.abs() <= 65504.0));
    }

    #[test]
    fn dense_round_trip(t in coords_strategy(7, 80).prop_flat_map(|(c, l)| {
        let n = c.len();
        (Just(c), Just(l), prop::collection::vec(0.5f32..2.0, n * 3))
    })) {
        let (coords, lat, vals) = t;
        let n = coords.len();
        let t = SparseTensor::new(coords.clone(), Features::F32(Matrix::from_vec(n, 3, vals).unwrap()), 1, lat).unwrap();
        let g = to_dense(&t, DEFAULT_DENSE_CAP).unwrap();
        prop_assert_eq!(g.nonzero_cells(), n);
        let (c2, f2) = g.sparsify();
        prop_assert_eq!(&c2, &coords);
        prop_assert_eq!(&f2, &t.features().to_f32());
    }

    #[test]
    fn voxelized_coordinates_unique(points in prop::collection::vec((-50.0f32..50.0, -50.0f32..50.0, -50.0f32..50.0), 1..300), size in 0.5f64..4.0) {
        let data: Vec<f32> = points.iter().flat_map(|&(x, y, z)| [x, y, z, 1.0]).collect();
        let t = voxelize(&PointCloud::new(3, 1, data).unwrap(), size, Reduce::Mean).unwrap();
        let keys = t.coords().keys(t.lattice());
        prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let min = |f: fn(&(f32, f32, f32)) -> f32| points.iter().map(f).fold(f32::INFINITY, f32::min) as f64;
        let lo = [min(|p| p.0), min(|p| p.1), min(|p| p.2)];
        let cells: BTreeSet<Vec<i64>> = points.iter().map(|&(x, y, z)| {
            [x, y, z].iter().zip(&lo).map(|(&v, &m)| ((v as f64 - m) / size).floor() as i64).collect()
        }).collect();
        prop_assert_eq!(cells.len(), t.len());
        prop_assert!(t.features().to_f32().as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }
}
