mod common;

use common::*;
use sparseconv::dense::DEFAULT_DENSE_CAP;
use sparseconv::execution::{sparse_conv_forward, ExecOptions, GroupingParams, LayerSpec, MapCache};
use sparseconv::mapping::{
    build_index, compute_output_coords, downsampled_boundary, map_search, map_search_direct, IndexKind, KernelOffsets,
    DEFAULT_GRID_CAP,
};
use sparseconv::oracle::{compare, downsample_unfused, map_search_bruteforce, OracleTensor, Tolerance};
use sparseconv::precision::quantize_features;
use sparseconv::{Lattice, Precision, Threshold};

#[test]
fn forward_matches_dense_oracle() {
    for seed in 0..12u64 {
        for &(k, s) in &[(2usize, 1u32), (2, 2), (3, 1), (3, 2)] {
            let mut r = rng(seed * 31 + k as u64 * 7 + s as u64);
            let c = if seed % 2 == 0 { 4 } else { 16 };
            let t = random_tensor(&mut r, 12, 0.15, c);
            let w = random_weights(&mut r, k, c, c);
            let spec = LayerSpec::conv("l", k, s, c, c);
            let y = sparse_conv_forward(&t, &w, &spec, &mut MapCache::new(), &ExecOptions::default()).unwrap();
            let o = OracleTensor::from_sparse(&t, DEFAULT_DENSE_CAP).unwrap().conv(&w, s, DEFAULT_DENSE_CAP).unwrap();
            let rep = compare(&y.output, &o.grid, &o.active, Tolerance::Absolute(1e-5));
            assert!(rep.pass, "seed {seed} K={k} s={s}: {rep}");
        }
    }
}

#[test]
fn inverse_matches_transposed_oracle() {
    for seed in 0..10u64 {
        let mut r = rng(1000 + seed);
        let t = random_tensor(&mut r, 12, 0.2, 4);
        let wd = random_weights(&mut r, 2, 4, 8);
        let wu = random_weights(&mut r, 2, 8, 4);
        let mut cache = MapCache::new();
        let down = LayerSpec { reuse_key: Some("d".into()), ..LayerSpec::conv("down", 2, 2, 4, 8) };
        let y = sparse_conv_forward(&t, &wd, &down, &mut cache, &ExecOptions::default()).unwrap();
        let up = LayerSpec::inverse("up", "d", 2, 2, 8, 4);
        let z = sparse_conv_forward(&y.output, &wu, &up, &mut cache, &ExecOptions::locality()).unwrap();

        let o0 = OracleTensor::from_sparse(&t, DEFAULT_DENSE_CAP).unwrap();
        let o1 = o0.conv(&wd, 2, DEFAULT_DENSE_CAP).unwrap();
        let o2 = o1.transposed(&wu, 2, &o0, DEFAULT_DENSE_CAP).unwrap();
        let rep = compare(&z.output, &o2.grid, &o2.active, Tolerance::Absolute(1e-5));
        assert!(rep.pass, "seed {seed}: {rep}");
    }
}

#[test]
fn indexed_map_equals_bruteforce() {
    for seed in 0..8u64 {
        for &(k, s) in &[(2usize, 1u32), (2, 2), (3, 1), (3, 2)] {
            let mut r = rng(2000 + seed);
            let (coords, lat) = random_coords(&mut r, 10, 0.2);
            let offsets = KernelOffsets::enumerate(3, k).unwrap();
            let out_lat = Lattice::new(1, &downsampled_boundary(lat.boundary(), s)).unwrap();
            let out = compute_output_coords(&coords, &offsets, s, &out_lat).unwrap();
            let brute = map_search_bruteforce(&coords, &out, k, s);
            for kind in [IndexKind::Grid, IndexKind::Hash] {
                let index = build_index(&coords, kind, &lat, DEFAULT_GRID_CAP).unwrap();
                let map = map_search(&index, &out, &offsets, s).unwrap();
                assert_eq!(map.triples(), brute, "seed {seed} K={k} s={s} {kind}");
            }
        }
    }
}

#[test]
fn symmetric_expansion_equals_direct_search() {
    for seed in 0..10u64 {
        let mut r = rng(3000 + seed);
        let (coords, lat) = random_coords(&mut r, 10, 0.25);
        let offsets = KernelOffsets::enumerate(3, 3).unwrap();
        let index = build_index(&coords, IndexKind::Hash, &lat, DEFAULT_GRID_CAP).unwrap();
        let sym = map_search(&index, &coords, &offsets, 1).unwrap();
        let direct = map_search_direct(&index, &coords, &offsets, 1).unwrap();
        assert_eq!(sym, direct);
        assert!(sym.is_symmetric());
        for n in 0..27 {
            let mut mirrored: Vec<_> = sym.entries(26 - n).iter().map(|e| e.swapped()).collect();
            mirrored.sort();
            let mut own = sym.entries(n).to_vec();
            own.sort();
            assert_eq!(own, mirrored);
        }
    }
}

#[test]
fn fused_downsampling_equals_unfused_pipeline() {
    for seed in 0..20u64 {
        let mut r = rng(4000 + seed);
        let (coords, lat) = random_coords(&mut r, 12, 0.1);
        for k in [2usize, 3] {
            let offsets = KernelOffsets::enumerate(3, k).unwrap();
            let (reference, out_lat) = downsample_unfused(&coords, &lat, k, 2).unwrap();
            let fused = compute_output_coords(&coords, &offsets, 2, &out_lat).unwrap();
            assert_eq!(fused, reference);
        }
    }
}

#[test]
fn output_invariant_under_options() {
    let mut r = rng(5000);
    let t = random_tensor(&mut r, 14, 0.2, 8);
    let w = random_weights(&mut r, 3, 8, 8);
    let base = sparse_conv_forward(&t, &w, &LayerSpec::conv("c", 3, 1, 8, 8), &mut MapCache::new(), &ExecOptions::default())
        .unwrap()
        .output
        .features()
        .to_f32();
    let scale = base.as_slice().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let strategies = [
        GroupingParams::SEPARATE,
        GroupingParams::SYMMETRIC,
        GroupingParams::DENSE,
        GroupingParams { epsilon: 0.3, threshold: Threshold::Rows(64) },
    ];
    for params in strategies {
        for kind in [IndexKind::Grid, IndexKind::Hash] {
            for opts in [ExecOptions::default(), ExecOptions::locality(), ExecOptions { fused: false, ..ExecOptions::default() }] {
                let spec = LayerSpec { strategy: Some(params), index_kind: Some(kind), ..LayerSpec::conv("c", 3, 1, 8, 8) };
                let y = sparse_conv_forward(&t, &w, &spec, &mut MapCache::new(), &opts).unwrap();
                assert_eq!(y.output.coords(), t.coords());
                let y = y.output.features().to_f32();
                for (a, b) in y.as_slice().iter().zip(base.as_slice()) {
                    assert!((a - b).abs() <= 1e-4 * scale, "{params} {kind} {opts:?}");
                }
            }
        }
    }
}

#[test]
fn fp16_storage_within_budget() {
    let mut r = rng(6000);
    let t = random_tensor(&mut r, 12, 0.2, 8);
    let w = random_weights(&mut r, 3, 8, 8);
    let spec = LayerSpec::conv("c", 3, 1, 8, 8);
    let (t16, _) = quantize_features(&t, Precision::Fp16);
    let y16 = sparse_conv_forward(&t16, &w, &spec, &mut MapCache::new(), &ExecOptions::locality()).unwrap();
    assert_eq!(y16.output.precision(), Precision::Fp16);
    let o = OracleTensor::from_sparse(&t, DEFAULT_DENSE_CAP).unwrap().conv(&w, 1, DEFAULT_DENSE_CAP).unwrap();
    let rep = compare(&y16.output, &o.grid, &o.active, Tolerance::Relative(1e-2));
    assert!(rep.pass, "{rep}");
}

#[test]
fn wrong_even_convention_is_detected() {
    use sparseconv::mapping::EvenKernelConvention;
    let mut r = rng(7000);
    let t = random_tensor(&mut r, 12, 0.2, 4);
    let w = random_weights(&mut r, 2, 4, 4);
    let opts = ExecOptions { even_kernel: EvenKernelConvention::Centered, ..ExecOptions::default() };
    let y = sparse_conv_forward(&t, &w, &LayerSpec::conv("d", 2, 2, 4, 4), &mut MapCache::new(), &opts).unwrap();
    let o = OracleTensor::from_sparse(&t, DEFAULT_DENSE_CAP).unwrap().conv(&w, 2, DEFAULT_DENSE_CAP).unwrap();
    assert!(!compare(&y.output, &o.grid, &o.active, Tolerance::Absolute(1e-5)).pass);
}
