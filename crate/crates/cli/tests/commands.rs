use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sparseconv::autotune::StrategyFile;
use sparseconv::execution::ExecOptions;
use sparseconv::io::{read_tensor, save_points};
use sparseconv::mapping::{compute_output_coords, KernelOffsets};
use sparseconv::voxel::{voxelize, PointCloud, Reduce};
use sparseconv::{Precision, Threshold};
use sparseconv_cli::bench::{run_bench, BenchOptions, CSV_HEADER};
use sparseconv_cli::synth::{synth_generate, SynthKind, SynthParams};
use sparseconv_cli::{Network, NetworkConfig, RunOptions};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sparseconv"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn p(x: &Path) -> &str {
    x.to_str().unwrap()
}

fn toy_input(seed: u64) -> sparseconv::SparseTensor {
    let pc = synth_generate(&SynthParams::new(SynthKind::GaussianClusters, 2000, 16.0, seed)).unwrap();
    voxelize(&pc, 1.0, Reduce::Mean).unwrap()
}

#[test]
fn synth_is_byte_identical_on_rerun() {
    let dir = TempDir::new().unwrap();
    for kind in ["uniform", "gaussian_clusters", "lidar_rings"] {
        let (a, b) = (path(&dir, "a.spcl"), path(&dir, "b.spcl"));
        for out in [&a, &b] {
            let o = run(&["synth", "--kind", kind, "--points", "3000", "--seed", "5", "--output", p(out)]);
            assert_eq!(code(&o), 0, "{}", text(&o.stderr));
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{kind}");
    }
}

#[test]
fn uniform_occupancy_matches_poisson() {
    let (extent, n) = (100.0, 100_000);
    let pc = synth_generate(&SynthParams::new(SynthKind::Uniform, n, extent, 1)).unwrap();
    let voxels = voxelize(&pc, 1.0, Reduce::Mean).unwrap().len() as f64;
    let cells = extent * extent * extent;
    let lambda = n as f64 / cells;
    let expected = 1.0 - (-lambda).exp();
    let ratio = (voxels / cells) / expected;
    assert!((0.5..=2.0).contains(&ratio), "occupancy ratio {ratio}");
}

/// Connected components (26-neighborhood) of histogram bins holding more
/// than four times the mean count.
fn density_modes(pc: &PointCloud, extent: f64, bins: usize) -> usize {
    let mut hist = vec![0usize; bins * bins * bins];
    for row in pc.iter() {
        let b: Vec<usize> = row[..3].iter().map(|&v| ((v as f64 / extent * bins as f64) as usize).min(bins - 1)).collect();
        hist[(b[0] * bins + b[1]) * bins + b[2]] += 1;
    }
    let threshold = 4 * pc.len() / hist.len();
    let mut seen = vec![false; hist.len()];
    let mut modes = 0;
    for start in 0..hist.len() {
        if seen[start] || hist[start] <= threshold {
            continue;
        }
        modes += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (x, y, z) = (i / (bins * bins), i / bins % bins, i % bins);
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dz in -1i64..=1 {
                        let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if [a, b, c].iter().any(|&v| v < 0 || v >= bins as i64) {
                            continue;
                        }
                        let j = ((a as usize * bins) + b as usize) * bins + c as usize;
                        if !seen[j] && hist[j] > threshold {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
    }
    modes
}

#[test]
fn gaussian_clusters_have_the_requested_modes() {
    for seed in 0..5 {
        let params = SynthParams { clusters: 4, ..SynthParams::new(SynthKind::GaussianClusters, 20_000, 64.0, seed) };
        let pc = synth_generate(&params).unwrap();
        assert_eq!(density_modes(&pc, 64.0, 16), 4, "seed {seed}");
    }
    let uniform = synth_generate(&SynthParams::new(SynthKind::Uniform, 20_000, 64.0, 0)).unwrap();
    assert_eq!(density_modes(&uniform, 64.0, 16), 0);
}

#[test]
fn validate_pointwise_network_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "pw.toml");
    std::fs::write(
        &cfg,
        "name = \"pw\"\nin_channels = 4\n\n[[layers]]\nkind = \"conv\"\nname = \"pw\"\nkernel_size = 1\nin_channels = 4\nout_channels = 6\n\n\
         [[layers]]\nkind = \"pointwise\"\nname = \"bn\"\nop = \"batch_norm\"\n\n[[layers]]\nkind = \"pointwise\"\nname = \"act\"\nop = \"relu\"\n",
    )
    .unwrap();
    let o = run(&["validate", "--network", p(&cfg), "--synth", "uniform"]);
    assert_eq!(code(&o), 0, "{}{}", text(&o.stdout), text(&o.stderr));
    assert!(text(&o.stdout).contains("PASS"));
}

#[test]
fn validate_toy_passes_and_fault_fails() {
    let o = run(&["validate", "--synth", "lidar_rings", "--samples", "2", "--tolerance", "1e-5"]);
    assert_eq!(code(&o), 0, "{}{}", text(&o.stdout), text(&o.stderr));
    let o = run(&["validate", "--synth", "uniform", "--inject-even-k-fault"]);
    assert_eq!(code(&o), 1);
    let out = text(&o.stdout);
    assert!(out.contains("FAIL at layer `down1`"), "{out}");
    assert!(out.contains("first_missing="), "{out}");
}

#[test]
fn singleton_space_gives_symmetric_grouping() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "s.toml");
    let o = run(&["tune", "--synth", "uniform", "--samples", "3", "--space", "eps=0;S=inf", "--cost", "analytic", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let file = StrategyFile::load(&out).unwrap();
    let cfg = NetworkConfig::load("toy").unwrap();
    file.check_layers(&cfg.conv_layer_names()).unwrap();
    for l in &file.layers {
        assert_eq!((l.epsilon, l.threshold), (0.0, Threshold::Infinite), "{}", l.id);
    }
    assert!(text(&o.stdout).contains("tuned 8 layers over 3 samples"));
}

#[test]
fn analytic_tuning_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path(&dir, "a.toml"), path(&dir, "b.toml"));
    for out in [&a, &b] {
        let o = run(&["tune", "--synth", "gaussian_clusters", "--samples", "4", "--seed", "9", "--cost", "analytic", "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    }
    assert_eq!(std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
}

#[test]
fn tune_rejects_bad_space() {
    let dir = TempDir::new().unwrap();
    let o = run(&["tune", "--synth", "uniform", "--space", "eps=2", "--out", p(&path(&dir, "s.toml"))]);
    assert_eq!(code(&o), 2);
    let o = run(&["tune", "--synth", "uniform", "--budget", "0", "--out", p(&path(&dir, "s.toml"))]);
    assert_eq!(code(&o), 2);
}

type CsvRows = HashMap<(String, String, String), f64>;

fn parse_csv(s: &str) -> (Vec<String>, CsvRows) {
    let mut lines = s.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            ((f[0].to_string(), f[1].to_string(), f[2].to_string()), f[3].parse().unwrap())
        })
        .collect();
    (header, rows)
}

#[test]
fn bench_single_pass_csv() {
    let o = run(&["bench", "--synth", "uniform", "--repeat", "1", "--warmup", "0"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let (header, rows) = parse_csv(&text(&o.stdout));
    assert_eq!(header, CSV_HEADER);
    let cfg = NetworkConfig::load("toy").unwrap();
    for layer in cfg.layers.iter().map(|l| l.name().to_string()).chain(["network".to_string()]) {
        assert_eq!(rows[&(layer.clone(), "total".into(), "timed_passes".into())], 1.0, "{layer}");
        let sum: f64 = ["mapping", "gather", "matmul", "scatter", "other"]
            .iter()
            .map(|s| rows[&(layer.clone(), s.to_string(), "median_us".into())])
            .sum();
        let total = rows[&(layer.clone(), "total".into(), "median_us".into())];
        assert!(sum <= total * 1.05 + 5.0, "{layer}: stages {sum} > total {total}");
    }
    assert_eq!(rows[&("network".into(), "run".into(), "repeat".into())], 1.0);
}

#[test]
fn bench_read_ratio_matches_traffic_model() {
    let args = ["bench", "--synth", "gaussian_clusters", "--repeat", "1", "--warmup", "0"];
    let ws = run(&[&args[..], &["--order", "weight", "--fused", "off"]].concat());
    let loc = run(&[&args[..], &["--order", "locality", "--fused", "on"]].concat());
    assert_eq!(code(&ws), 0, "{}", text(&ws.stderr));
    assert_eq!(code(&loc), 0, "{}", text(&loc.stderr));
    let (_, ws) = parse_csv(&text(&ws.stdout));
    let (_, loc) = parse_csv(&text(&loc.stdout));
    let key = |l: &str, s: &str, m: &str| (l.to_string(), s.to_string(), m.to_string());
    for layer in NetworkConfig::load("toy").unwrap().conv_layer_names() {
        let a = ws[&key(&layer, "gather", "read_elements")];
        let b = loc[&key(&layer, "gather", "read_elements")];
        let m = loc[&key(&layer, "traffic", "map_entries")];
        let n_in = loc[&key(&layer, "traffic", "n_in")];
        assert_eq!(a * n_in, b * m, "{layer}");
    }
}

#[test]
fn bench_json_and_cache_rows() {
    let o = run(&["bench", "--synth", "uniform", "--repeat", "2", "--format", "json", "--cache-fraction", "8"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&text(&o.stdout)).unwrap();
    assert_eq!(v["repeat"], 2);
    let layers = v["layers"].as_array().unwrap();
    assert!(layers.iter().any(|l| l["cache"]["misses"].as_u64().unwrap_or(0) > 0));
}

#[test]
fn bench_flags_do_not_change_outputs() {
    let mut net = Network::new(NetworkConfig::load("toy").unwrap()).unwrap();
    let inputs = vec![toy_input(3)];
    let base = net.forward(&inputs[0], &RunOptions::default()).unwrap().output;
    let scale = base.features().to_f32().as_slice().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let file = {
        let mut f = StrategyFile::new("t", "t");
        for name in NetworkConfig::load("toy").unwrap().conv_layer_names() {
            f.layers.push(sparseconv::autotune::LayerStrategy { id: name, epsilon: 0.3, threshold: Threshold::Rows(256), index: None });
        }
        f
    };
    for strategies in [false, true] {
        if strategies {
            assert!(net.apply_strategies(&file).is_empty());
        }
        for exec in [ExecOptions::default(), ExecOptions::locality(), ExecOptions { fused: false, ..ExecOptions::default() }] {
            for precision in [Precision::Fp32, Precision::Fp16] {
                net.set_precision(precision);
                let opts = BenchOptions { repeat: 1, warmup: 0, run: RunOptions { exec, ..RunOptions::default() }, cache_fraction: None };
                let (_, fwd) = run_bench(&net, &inputs, &opts).unwrap();
                assert_eq!(fwd.output.coords(), base.coords());
                let tol = if precision == Precision::Fp16 { 1e-2 } else { 1e-4 } * scale;
                for (a, b) in fwd.output.features().to_f32().as_slice().iter().zip(base.features().to_f32().as_slice()) {
                    assert!((a - b).abs() <= tol, "{exec:?} {precision}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn run_round_trips_and_predicts_rows() {
    let dir = TempDir::new().unwrap();
    let (input, out) = (path(&dir, "in.spcl"), path(&dir, "out.spcl"));
    let pc = synth_generate(&SynthParams::new(SynthKind::LidarRings, 3000, 16.0, 2)).unwrap();
    save_points(&input, &pc).unwrap();
    let o = run(&["run", "--input", p(&input), "--output", p(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));

    let (coords, feats) = read_tensor(File::open(&out).unwrap()).unwrap();
    let net = Network::new(NetworkConfig::load("toy").unwrap()).unwrap();
    let t = voxelize(&pc, 1.0, Reduce::Mean).unwrap();
    let y = net.forward(&t, &RunOptions::default()).unwrap().output;
    assert_eq!(&coords, y.coords());
    assert_eq!(feats, y.features().to_f32());

    // the network ends at stride 1 on the input sites
    let predicted = compute_output_coords(t.coords(), &KernelOffsets::enumerate(3, 1).unwrap(), 1, t.lattice()).unwrap();
    assert_eq!(coords.len(), predicted.len());
}

#[test]
fn run_fp16_matches_fp32() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path(&dir, "a.spcl"), path(&dir, "b.spcl"));
    for (out, prec) in [(&a, "fp32"), (&b, "fp16")] {
        let o = run(&["run", "--synth", "gaussian_clusters", "--seed", "4", "--precision", prec, "--output", p(out)]);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    }
    let (ca, fa) = read_tensor(File::open(&a).unwrap()).unwrap();
    let (cb, fb) = read_tensor(File::open(&b).unwrap()).unwrap();
    assert_eq!(ca, cb);
    let scale = fa.as_slice().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let diff = fa.as_slice().iter().zip(fb.as_slice()).fold(0.0f32, |m, (x, y)| m.max((x - y).abs()));
    assert!(diff <= 1e-2 * scale, "relative error {}", diff / scale);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path(&dir, "a.spcl"), path(&dir, "b.spcl"));
    let o = run(&["--threads", "1", "run", "--synth", "uniform", "--output", p(&a)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let o = bin().env("SPARSECONV_THREADS", "3").args(["run", "--synth", "uniform", "--output", p(&b)]).output().unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn empty_cloud_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let (input, out) = (path(&dir, "empty.spcl"), path(&dir, "out.spcl"));
    save_points(&input, &PointCloud::new(3, 4, Vec::new()).unwrap()).unwrap();
    let o = run(&["run", "--input", p(&input), "--output", p(&out)]);
    assert_eq!(code(&o), 3);
    assert!(text(&o.stderr).contains("empty cloud"), "{}", text(&o.stderr));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "o.spcl");
    // missing files are I/O errors
    assert_eq!(code(&run(&["run", "--input", "/nonexistent.spcl", "--output", p(&out)])), 3);
    assert_eq!(code(&run(&["run", "--network", "/nonexistent.toml", "--synth", "uniform", "--output", p(&out)])), 3);
    // bad configs and flag combinations are configuration errors
    let cfg = path(&dir, "bad.toml");
    std::fs::write(&cfg, "name = \"x\"\nin_channels = 4\nlayers = []\n").unwrap();
    assert_eq!(code(&run(&["run", "--network", p(&cfg), "--synth", "uniform", "--output", p(&out)])), 2);
    assert_eq!(code(&run(&["bench", "--synth", "uniform", "--order", "locality", "--fused", "off"])), 2);
    assert_eq!(code(&run(&["run", "--output", p(&out)])), 2);
    let wrong_channels = path(&dir, "c.spcl");
    save_points(&wrong_channels, &synth_generate(&SynthParams { channels: 2, ..SynthParams::new(SynthKind::Uniform, 50, 8.0, 0) }).unwrap())
        .unwrap();
    assert_eq!(code(&run(&["run", "--input", p(&wrong_channels), "--output", p(&out)])), 2);
}

#[test]
fn missing_strategy_falls_back_with_warning() {
    let dir = TempDir::new().unwrap();
    let strategy = path(&dir, "s.toml");
    let mut file = StrategyFile::new("t", "t");
    file.layers.push(sparseconv::autotune::LayerStrategy { id: "conv0".into(), epsilon: 0.0, threshold: Threshold::Infinite, index: None });
    file.save(&strategy).unwrap();
    let o = run(&["bench", "--synth", "uniform", "--repeat", "1", "--strategy", p(&strategy)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let err = text(&o.stderr);
    assert!(err.contains("no strategy for layer `down1`"), "{err}");
    assert!(!err.contains("no strategy for layer `conv0`"), "{err}");

    std::fs::write(&strategy, "version = 99\ndataset = \"x\"\nhardware = \"x\"\nengine_version = \"0\"\nlayers = []\n").unwrap();
    assert_eq!(code(&run(&["bench", "--synth", "uniform", "--repeat", "1", "--strategy", p(&strategy)])), 2);
}
