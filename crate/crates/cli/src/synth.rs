//! Seeded synthetic point clouds.

use std::f64::consts::TAU;

use anyhow::{bail, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sparseconv::voxel::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SynthKind {
    /// Independent uniform points in the cube.
    Uniform,
    /// Isotropic Gaussian blobs with well separated centers.
    GaussianClusters,
    /// Concentric ground rings around a sensor, denser near the center.
    LidarRings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub kind: SynthKind,
    pub n_points: usize,
    /// Side length of the cube `[0, extent)^3` holding all points.
    pub extent: f64,
    pub seed: u64,
    /// Feature columns per point, uniform in `[-1, 1)`.
    pub channels: usize,
    pub clusters: usize,
    pub rings: usize,
}

impl SynthParams {
    pub fn new(kind: SynthKind, n_points: usize, extent: f64, seed: u64) -> Self {
        SynthParams { kind, n_points, extent, seed, channels: 4, clusters: 4, rings: 16 }
    }
}

fn clamp(v: f64, extent: f64) -> f64 {
    // keep strictly inside the half-open cube
    v.clamp(0.0, extent * (1.0 - 1e-9))
}

/// Cluster centers: distinct corners of the inner cube `{1/4, 3/4}^3` for up
/// to 8 clusters, rejection-sampled with a minimum spacing beyond that.
fn cluster_centers(rng: &mut ChaCha8Rng, k: usize, extent: f64) -> Vec<[f64; 3]> {
    if k <= 8 {
        let mut corners: Vec<[f64; 3]> = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64].map(|b| (0.25 + 0.5 * b) * extent))
            .collect();
        corners.shuffle(rng);
        corners.truncate(k);
        for c in &mut corners {
            for v in c.iter_mut() {
                *v += rng.gen_range(-0.03..0.03) * extent;
            }
        }
        return corners;
    }
    let spacing = extent / (2.0 * (k as f64).cbrt());
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(k);
    while centers.len() < k {
        let c = [0; 3].map(|_| rng.gen_range(0.1..0.9) * extent);
        if centers.iter().all(|o| o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= spacing) {
            centers.push(c);
        }
    }
    centers
}

/// Generate `n_points` points with `channels` feature columns.
pub fn synth_generate(p: &SynthParams) -> Result<PointCloud> {
    if p.n_points == 0 {
        bail!("n_points must be at least 1");
    }
    if !p.extent.is_finite() || p.extent <= 0.0 {
        bail!("extent must be positive, got {}", p.extent);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let e = p.extent;
    let mut positions: Vec<[f64; 3]> = Vec::with_capacity(p.n_points);
    match p.kind {
        SynthKind::Uniform => {
            for _ in 0..p.n_points {
                positions.push([0; 3].map(|_| rng.gen_range(0.0..e)));
            }
        }
        SynthKind::GaussianClusters => {
            if p.clusters == 0 {
                bail!("gaussian_clusters needs at least one cluster");
            }
            let centers = cluster_centers(&mut rng, p.clusters, e);
            let normal = Normal::new(0.0, e / 25.0).expect("positive sigma");
            for i in 0..p.n_points {
                let c = centers[i % centers.len()];
                positions.push(c.map(|v| clamp(v + normal.sample(&mut rng), e)));
            }
        }
        SynthKind::LidarRings => {
            if p.rings == 0 {
                bail!("lidar_rings needs at least one ring");
            }
            let radial = Normal::new(0.0, 0.003 * e).expect("positive sigma");
            let height = Normal::new(0.0, 0.01 * e).expect("positive sigma");
            let step = if p.rings > 1 { 0.44 / (p.rings - 1) as f64 } else { 0.0 };
            for i in 0..p.n_points {
                // equal points per ring: density falls off with range
                let r = e * (0.04 + step * (i % p.rings) as f64) + radial.sample(&mut rng);
                let theta = rng.gen_range(0.0..TAU);
                positions.push([
                    clamp(0.5 * e + r * theta.cos(), e),
                    clamp(0.5 * e + r * theta.sin(), e),
                    clamp(0.05 * e + height.sample(&mut rng).abs(), e),
                ]);
            }
        }
    }
    let mut data = Vec::with_capacity(p.n_points * (3 + p.channels));
    for pos in positions {
        data.extend(pos.iter().map(|&v| v as f32));
        data.extend((0..p.channels).map(|_| rng.gen_range(-1.0f32..1.0)));
    }
    Ok(PointCloud::new(3, p.channels, data)?)
}
